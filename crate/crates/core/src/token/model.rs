use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, CheckpointError, Tensor};
use super::fsq::{FsqSpec, UniversalToken};
use super::nn::{clip_grad_norm, Activation, Adam, Mlp, MlpCache};
use crate::motion::command::feature_dim;
use crate::motion::{CommandKind, CommandSlicer, HumanLayout, MotionClip, MotionCommand, MotionError, Proprioception, SkeletonSpec};

#[derive(Debug, thiserror::Error)]
pub enum TokenError {
    #[error("command kind {found:?} given to the {expected:?} encoder")]
    KindMismatch { expected: CommandKind, found: CommandKind },
    #[error("feature width {found}, network expects {expected}")]
    Width { expected: usize, found: usize },
    #[error("commands are not synchronized: {0}")]
    Unsynchronized(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NetProfile {
    Paper,
    #[default]
    Desk,
}

/// Hidden layer widths of every network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetSizes {
    pub encoder: Vec<usize>,
    pub motion_decoder: Vec<usize>,
    pub control_decoder: Vec<usize>,
    pub critic: Vec<usize>,
}

impl NetSizes {
    pub fn paper() -> Self {
        Self {
            encoder: vec![2048, 1024, 512, 512],
            motion_decoder: vec![2048, 1024, 512, 512],
            control_decoder: vec![2048, 2048, 1024, 1024, 512, 512],
            critic: vec![2048, 2048, 1024, 1024, 512, 512],
        }
    }

    /// Paper widths divided by 64.
    pub fn desk() -> Self {
        let p = Self::paper();
        let d = |v: Vec<usize>| v.into_iter().map(|x| x / 64).collect();
        Self {
            encoder: d(p.encoder),
            motion_decoder: d(p.motion_decoder),
            control_decoder: d(p.control_decoder),
            critic: d(p.critic),
        }
    }

    pub fn for_profile(p: NetProfile) -> Self {
        match p {
            NetProfile::Paper => Self::paper(),
            NetProfile::Desk => Self::desk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenConfig {
    pub fsq: FsqSpec,
    pub sizes: NetSizes,
    pub activation: Activation,
    pub robot_dim: usize,
    pub human_dim: usize,
    pub hybrid_dim: usize,
    pub proprio_dim: usize,
    pub action_dim: usize,
    pub init_noise_std: f64,
    pub std_min: f64,
    pub std_max: f64,
}

impl TokenConfig {
    pub fn for_skeleton(skeleton: &SkeletonSpec, profile: NetProfile) -> Self {
        let layout = HumanLayout::default_for(skeleton);
        Self {
            fsq: FsqSpec::default(),
            sizes: NetSizes::for_profile(profile),
            activation: Activation::Elu,
            robot_dim: feature_dim(CommandKind::Robot, skeleton, &layout),
            human_dim: feature_dim(CommandKind::Human, skeleton, &layout),
            hybrid_dim: feature_dim(CommandKind::Hybrid, skeleton, &layout),
            proprio_dim: Proprioception::dim(skeleton.joint_count()),
            action_dim: skeleton.joint_count(),
            init_noise_std: 0.05,
            std_min: 0.001,
            std_max: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), TokenError> {
        self.fsq.validate().map_err(TokenError::Config)?;
        let s = &self.sizes;
        if [&s.encoder, &s.motion_decoder, &s.control_decoder, &s.critic].iter().any(|v| v.iter().any(|x| *x < 1)) {
            return Err(TokenError::Config("hidden sizes must be at least 1".into()));
        }
        if !(self.std_min > 0.0 && self.std_min <= self.std_max) {
            return Err(TokenError::Config("std bounds".into()));
        }
        Ok(())
    }

    pub fn critic_input_dim(&self) -> usize {
        self.proprio_dim + self.robot_dim
    }
}

/// How the round inside FSQ is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// Forward rounds, backward passes the gradient through the round.
    StraightThrough,
    /// Forward rounds, backward uses the true (zero) derivative of the round.
    Exact,
    /// No rounding at all.
    Continuous,
}

impl QuantMode {
    fn forward(self, c: &[f64]) -> Vec<f64> {
        match self {
            QuantMode::Continuous => c.to_vec(),
            _ => c.iter().map(|x| x.round()).collect(),
        }
    }

    fn pass(self) -> f64 {
        match self {
            QuantMode::Exact => 0.0,
            _ => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenModel {
    pub config: TokenConfig,
    pub enc_r: Mlp,
    pub enc_h: Mlp,
    pub enc_m: Mlp,
    pub dec_motion: Mlp,
    pub dec_control: Mlp,
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

/// Gradient buffers shaped like [`TokenModel`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrads {
    pub enc_r: Vec<f64>,
    pub enc_h: Vec<f64>,
    pub enc_m: Vec<f64>,
    pub dec_motion: Vec<f64>,
    pub dec_control: Vec<f64>,
    pub log_std: Vec<f64>,
    pub critic: Vec<f64>,
}

impl TokenGrads {
    pub fn zeros(m: &TokenModel) -> Self {
        Self {
            enc_r: vec![0.0; m.enc_r.param_count()],
            enc_h: vec![0.0; m.enc_h.param_count()],
            enc_m: vec![0.0; m.enc_m.param_count()],
            dec_motion: vec![0.0; m.dec_motion.param_count()],
            dec_control: vec![0.0; m.dec_control.param_count()],
            log_std: vec![0.0; m.log_std.len()],
            critic: vec![0.0; m.critic.param_count()],
        }
    }

    pub fn groups(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("enc_r", &self.enc_r),
            ("enc_h", &self.enc_h),
            ("enc_m", &self.enc_m),
            ("dec_motion", &self.dec_motion),
            ("dec_control", &self.dec_control),
            ("log_std", &self.log_std),
            ("critic", &self.critic),
        ]
    }

    pub fn groups_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 7] {
        [
            ("enc_r", &mut self.enc_r),
            ("enc_h", &mut self.enc_h),
            ("enc_m", &mut self.enc_m),
            ("dec_motion", &mut self.dec_motion),
            ("dec_control", &mut self.dec_control),
            ("log_std", &mut self.log_std),
            ("critic", &mut self.critic),
        ]
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.groups().iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, g) in self.groups_mut() {
            let n = g.len();
            g.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }
}

/// The three synchronized views of one motion instant, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignSample {
    pub robot: Vec<f64>,
    pub human: Vec<f64>,
    pub hybrid: Vec<f64>,
}

impl AlignSample {
    pub fn from_commands(r: &MotionCommand, h: &MotionCommand, m: &MotionCommand) -> Result<Self, TokenError> {
        for (cmd, kind) in [(r, CommandKind::Robot), (h, CommandKind::Human), (m, CommandKind::Hybrid)] {
            if cmd.kind() != kind {
                return Err(TokenError::KindMismatch { expected: kind, found: cmd.kind() });
            }
        }
        if r.time != h.time || r.time != m.time {
            return Err(TokenError::Unsynchronized(format!("times {} / {} / {}", r.time, h.time, m.time)));
        }
        Ok(Self { robot: r.flatten(), human: h.flatten(), hybrid: m.flatten() })
    }
}

/// Synchronized samples at the given times of a clip.
pub fn synced_samples(clip: &MotionClip, times: &[f64]) -> Result<Vec<AlignSample>, TokenError> {
    let slicer = CommandSlicer::new(&clip.skeleton);
    times
        .iter()
        .map(|&t| {
            AlignSample::from_commands(
                &slicer.slice(clip, t, CommandKind::Robot)?,
                &slicer.slice(clip, t, CommandKind::Human)?,
                &slicer.slice(clip, t, CommandKind::Hybrid)?,
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignmentLosses {
    pub recon: f64,
    pub token: f64,
    pub cycle: f64,
    pub total: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

/// Encoder forward state kept for backprop.
#[derive(Debug, Clone)]
struct EncPass {
    pre: Vec<f64>,
    cont: Vec<f64>,
    cache: MlpCache,
}

/// One actor evaluation: robot encoder, FSQ, control decoder.
#[derive(Debug, Clone)]
pub struct ActorPass {
    enc: EncPass,
    dec: MlpCache,
    mode: QuantMode,
    pub mean: Vec<f64>,
}

impl TokenModel {
    pub fn new(config: TokenConfig, seed: u64) -> Result<Self, TokenError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let d = c.fsq.dims;
        let act = c.activation;
        let enc_r = Mlp::new(c.robot_dim, &c.sizes.encoder, d, act, 1.0, &mut rng);
        let enc_h = Mlp::new(c.human_dim, &c.sizes.encoder, d, act, 1.0, &mut rng);
        let enc_m = Mlp::new(c.hybrid_dim, &c.sizes.encoder, d, act, 1.0, &mut rng);
        let dec_motion = Mlp::new(d, &c.sizes.motion_decoder, c.robot_dim, act, 1.0, &mut rng);
        let dec_control = Mlp::new(d + c.proprio_dim, &c.sizes.control_decoder, c.action_dim, act, 0.1, &mut rng);
        let critic = Mlp::new(c.critic_input_dim(), &c.sizes.critic, 1, act, 1.0, &mut rng);
        let log_std = vec![c.init_noise_std.ln(); c.action_dim];
        Ok(Self { config, enc_r, enc_h, enc_m, dec_motion, dec_control, log_std, critic })
    }

    pub fn param_count(&self) -> usize {
        [&self.enc_r, &self.enc_h, &self.enc_m, &self.dec_motion, &self.dec_control, &self.critic]
            .iter()
            .map(|m| m.param_count())
            .sum::<usize>()
            + self.log_std.len()
    }

    pub fn encoder(&self, kind: CommandKind) -> &Mlp {
        match kind {
            CommandKind::Robot => &self.enc_r,
            CommandKind::Human => &self.enc_h,
            CommandKind::Hybrid => &self.enc_m,
        }
    }

    pub fn encode_features(&self, kind: CommandKind, features: &[f64]) -> Result<UniversalToken, TokenError> {
        let enc = self.encoder(kind);
        if features.len() != enc.input_dim() {
            return Err(TokenError::Width { expected: enc.input_dim(), found: features.len() });
        }
        Ok(self.config.fsq.quantize(&enc.forward(features)))
    }

    pub fn encode(&self, command: &MotionCommand) -> Result<UniversalToken, TokenError> {
        self.encode_features(command.kind(), &command.flatten())
    }

    /// Encode with an explicit encoder choice; errors if the command is of a
    /// different kind.
    pub fn encode_with(&self, which: CommandKind, command: &MotionCommand) -> Result<UniversalToken, TokenError> {
        if command.kind() != which {
            return Err(TokenError::KindMismatch { expected: which, found: command.kind() });
        }
        self.encode(command)
    }

    fn control_input(&self, token: &[f64], proprio: &[f64]) -> Result<Vec<f64>, TokenError> {
        if token.len() != self.config.fsq.dims {
            return Err(TokenError::Width { expected: self.config.fsq.dims, found: token.len() });
        }
        if proprio.len() != self.config.proprio_dim {
            return Err(TokenError::Width { expected: self.config.proprio_dim, found: proprio.len() });
        }
        let mut x = token.to_vec();
        x.extend_from_slice(proprio);
        Ok(x)
    }

    /// Mean of the Gaussian action head.
    pub fn decode_control(&self, token: &UniversalToken, proprio: &Proprioception) -> Result<Vec<f64>, TokenError> {
        self.decode_control_flat(&token.values(), &proprio.flatten())
    }

    pub fn decode_control_flat(&self, token: &[f64], proprio: &[f64]) -> Result<Vec<f64>, TokenError> {
        Ok(self.dec_control.forward(&self.control_input(token, proprio)?))
    }

    pub fn decode_control_cached(&self, token: &[f64], proprio: &[f64]) -> Result<(Vec<f64>, MlpCache), TokenError> {
        Ok(self.dec_control.forward_cached(&self.control_input(token, proprio)?))
    }

    /// Per-dimension action standard deviation, clamped to the configured bounds.
    pub fn action_std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| l.exp().clamp(self.config.std_min, self.config.std_max)).collect()
    }

    /// Whether each std entry is strictly inside the clamp (its gradient flows).
    pub fn std_active(&self) -> Vec<bool> {
        self.log_std.iter().map(|l| l.exp() > self.config.std_min && l.exp() < self.config.std_max).collect()
    }

    pub fn decode_motion(&self, token: &UniversalToken) -> Vec<f64> {
        self.dec_motion.forward(&token.values())
    }

    pub fn critic_input(&self, proprio: &[f64], robot_features: &[f64]) -> Vec<f64> {
        let mut x = proprio.to_vec();
        x.extend_from_slice(robot_features);
        x
    }

    pub fn value(&self, proprio: &[f64], robot_features: &[f64]) -> f64 {
        self.critic.forward(&self.critic_input(proprio, robot_features))[0]
    }

    fn enc_pass(&self, enc: &Mlp, x: &[f64]) -> EncPass {
        let (pre, cache) = enc.forward_cached(x);
        let cont = pre.iter().map(|z| self.config.fsq.bound(*z)).collect();
        EncPass { pre, cont, cache }
    }

    /// Backprop `d/d cont` through the bound into the encoder.
    fn enc_backward(&self, enc: &Mlp, pass: &EncPass, dcont: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let dpre: Vec<f64> = dcont.iter().zip(&pass.pre).map(|(g, z)| g * self.config.fsq.bound_grad(*z)).collect();
        enc.backward(&pass.cache, &dpre, grads)
    }

    fn check_sample(&self, s: &AlignSample) -> Result<(), TokenError> {
        for (enc, x) in [(&self.enc_r, &s.robot), (&self.enc_h, &s.human), (&self.enc_m, &s.hybrid)] {
            if x.len() != enc.input_dim() {
                return Err(TokenError::Width { expected: enc.input_dim(), found: x.len() });
            }
        }
        Ok(())
    }

    /// Smallest distance of any bounded value in the sample's forward pass
    /// (including the cycle re-encode) to a rounding boundary.
    pub fn boundary_margin(&self, s: &AlignSample) -> f64 {
        let fsq = &self.config.fsq;
        let r = self.enc_pass(&self.enc_r, &s.robot);
        let h = self.enc_pass(&self.enc_h, &s.human);
        let m = self.enc_pass(&self.enc_m, &s.hybrid);
        let y_h = self.dec_motion.forward(&QuantMode::Exact.forward(&h.cont));
        let c = self.enc_pass(&self.enc_r, &y_h);
        [r.cont, h.cont, m.cont, c.cont]
            .iter()
            .flatten()
            .map(|b| fsq.boundary_distance(*b))
            .fold(f64::INFINITY, f64::min)
    }

    /// Batch-mean reconstruction, token and cycle losses.
    pub fn alignment_losses(&self, batch: &[AlignSample], mode: QuantMode) -> Result<AlignmentLosses, TokenError> {
        self.alignment(batch, mode, None)
    }

    pub fn alignment_grads(&self, batch: &[AlignSample], mode: QuantMode) -> Result<(AlignmentLosses, TokenGrads), TokenError> {
        let mut g = TokenGrads::zeros(self);
        let l = self.alignment(batch, mode, Some(&mut g))?;
        Ok((l, g))
    }

    fn alignment(&self, batch: &[AlignSample], mode: QuantMode, mut grads: Option<&mut TokenGrads>) -> Result<AlignmentLosses, TokenError> {
        if batch.is_empty() {
            return Err(TokenError::EmptyBatch);
        }
        let inv = 1.0 / batch.len() as f64;
        let mut out = AlignmentLosses::default();
        for s in batch {
            self.check_sample(s)?;
            let r = self.enc_pass(&self.enc_r, &s.robot);
            let h = self.enc_pass(&self.enc_h, &s.human);
            let m = self.enc_pass(&self.enc_m, &s.hybrid);
            let mut recon = 0.0;
            let mut dec = Vec::with_capacity(3);
            for p in [&r, &h, &m] {
                let (y, cache) = self.dec_motion.forward_cached(&mode.forward(&p.cont));
                recon += sq_dist(&y, &s.robot);
                dec.push((y, cache));
            }
            let token = sq_dist(&r.cont, &h.cont);
            let cyc = self.enc_pass(&self.enc_r, &dec[1].0);
            let cycle = sq_dist(&cyc.cont, &r.cont);
            out.recon += recon * inv;
            out.token += token * inv;
            out.cycle += cycle * inv;

            let Some(g) = grads.as_deref_mut() else { continue };
            let mut dcont: Vec<Vec<f64>> = vec![vec![0.0; r.cont.len()]; 3];
            // cycle: through the re-encode into the human reconstruction
            let dcyc: Vec<f64> = cyc.cont.iter().zip(&r.cont).map(|(a, b)| 2.0 * inv * (a - b)).collect();
            let dy_cycle = self.enc_backward(&self.enc_r, &cyc, &dcyc, &mut g.enc_r);
            add_into(&mut dcont[0], &dcyc.iter().map(|x| -x).collect::<Vec<_>>());
            // token
            for k in 0..r.cont.len() {
                let d = 2.0 * inv * (r.cont[k] - h.cont[k]);
                dcont[0][k] += d;
                dcont[1][k] -= d;
            }
            // reconstruction
            for (k, (y, cache)) in dec.iter().enumerate() {
                let mut dy: Vec<f64> = y.iter().zip(&s.robot).map(|(a, b)| 2.0 * inv * (a - b)).collect();
                if k == 1 {
                    add_into(&mut dy, &dy_cycle);
                }
                let dq = self.dec_motion.backward(cache, &dy, &mut g.dec_motion);
                for (dc, q) in dcont[k].iter_mut().zip(&dq) {
                    *dc += mode.pass() * q;
                }
            }
            self.enc_backward(&self.enc_r, &r, &dcont[0], &mut g.enc_r);
            self.enc_backward(&self.enc_h, &h, &dcont[1], &mut g.enc_h);
            self.enc_backward(&self.enc_m, &m, &dcont[2], &mut g.enc_m);
        }
        out.total = out.recon + out.token + out.cycle;
        Ok(out)
    }

    /// Action mean from robot-command features and proprioception, keeping
    /// what [`Self::actor_backward`] needs.
    pub fn actor_forward(&self, robot: &[f64], proprio: &[f64], mode: QuantMode) -> Result<ActorPass, TokenError> {
        if robot.len() != self.enc_r.input_dim() {
            return Err(TokenError::Width { expected: self.enc_r.input_dim(), found: robot.len() });
        }
        let enc = self.enc_pass(&self.enc_r, robot);
        let token = mode.forward(&enc.cont);
        let (mean, dec) = self.decode_control_cached(&token, proprio)?;
        Ok(ActorPass { enc, dec, mode, mean })
    }

    /// Accumulate `d loss / d params` of the robot encoder and control
    /// decoder given `d loss / d mean`.
    pub fn actor_backward(&self, pass: &ActorPass, dmean: &[f64], grads: &mut TokenGrads) {
        let dx = self.dec_control.backward(&pass.dec, dmean, &mut grads.dec_control);
        let dcont: Vec<f64> = dx[..self.config.fsq.dims].iter().map(|g| g * pass.mode.pass()).collect();
        self.enc_backward(&self.enc_r, &pass.enc, &dcont, &mut grads.enc_r);
    }

    /// Mean squared per-element error of `D_r(z_r)` against the robot command.
    pub fn recon_mse(&self, data: &[AlignSample]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in data {
            let t = self.config.fsq.quantize(&self.enc_r.forward(&s.robot));
            sum += sq_dist(&self.decode_motion(&t), &s.robot);
            n += s.robot.len();
        }
        sum / n.max(1) as f64
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        for (_, p) in self.param_groups() {
            v.extend_from_slice(p);
        }
        v
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for (_, p) in self.param_groups_mut() {
            let n = p.len();
            p.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn param_groups(&self) -> [(&'static str, &Vec<f64>); 7] {
        [
            ("enc_r", &self.enc_r.params),
            ("enc_h", &self.enc_h.params),
            ("enc_m", &self.enc_m.params),
            ("dec_motion", &self.dec_motion.params),
            ("dec_control", &self.dec_control.params),
            ("log_std", &self.log_std),
            ("critic", &self.critic.params),
        ]
    }

    pub fn param_groups_mut(&mut self) -> [(&'static str, &mut Vec<f64>); 7] {
        [
            ("enc_r", &mut self.enc_r.params),
            ("enc_h", &mut self.enc_h.params),
            ("enc_m", &mut self.enc_m.params),
            ("dec_motion", &mut self.dec_motion.params),
            ("dec_control", &mut self.dec_control.params),
            ("log_std", &mut self.log_std),
            ("critic", &mut self.critic.params),
        ]
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors = Vec::new();
        for (name, net) in self.nets() {
            for (t, shape, off, len) in net.tensors() {
                tensors.push(Tensor { name: format!("{name}.{t}"), shape, data: net.params[off..off + len].to_vec() });
            }
        }
        tensors.push(Tensor { name: "log_std".into(), shape: vec![self.log_std.len()], data: self.log_std.clone() });
        Checkpoint {
            metadata: serde_json::to_string(&self.config).expect("config serializes"),
            tensors,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TokenError> {
        let config: TokenConfig =
            serde_json::from_str(&ck.metadata).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let mut model = Self::new(config, 0)?;
        let names: Vec<&'static str> = model.nets().iter().map(|(n, _)| *n).collect();
        for name in names {
            let net = model.net_mut(name);
            for (t, shape, off, len) in net.tensors() {
                let full = format!("{name}.{t}");
                let src = ck.get(&full)?;
                if src.shape != shape {
                    return Err(CheckpointError::Tensor { name: full, msg: format!("shape {:?}, expected {shape:?}", src.shape) }.into());
                }
                net.params[off..off + len].copy_from_slice(&src.data);
            }
        }
        let ls = ck.get("log_std")?;
        if ls.data.len() != model.log_std.len() {
            return Err(CheckpointError::Tensor { name: "log_std".into(), msg: "length".into() }.into());
        }
        model.log_std.copy_from_slice(&ls.data);
        Ok(model)
    }

    fn nets(&self) -> [(&'static str, &Mlp); 6] {
        [
            ("enc_r", &self.enc_r),
            ("enc_h", &self.enc_h),
            ("enc_m", &self.enc_m),
            ("dec_motion", &self.dec_motion),
            ("dec_control", &self.dec_control),
            ("critic", &self.critic),
        ]
    }

    fn net_mut(&mut self, name: &str) -> &mut Mlp {
        match name {
            "enc_r" => &mut self.enc_r,
            "enc_h" => &mut self.enc_h,
            "enc_m" => &mut self.enc_m,
            "dec_motion" => &mut self.dec_motion,
            "dec_control" => &mut self.dec_control,
            _ => &mut self.critic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub max_grad_norm: Option<f64>,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        Self { epochs: 200, batch_size: 16, lr: 1e-3, seed: 0, max_grad_norm: Some(1.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignLogRow {
    pub epoch: usize,
    pub recon: f64,
    pub token: f64,
    pub cycle: f64,
    pub total: f64,
    pub recon_mse: f64,
}

/// Adam on the alignment losses with straight-through gradients. Row 0 is the
/// initial model; one row per epoch follows.
pub fn train_alignment(model: &mut TokenModel, data: &[AlignSample], cfg: &AlignTrainConfig) -> Result<Vec<AlignLogRow>, TokenError> {
    if data.is_empty() {
        return Err(TokenError::EmptyBatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(model.param_count(), cfg.lr);
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let row = |m: &TokenModel, epoch| -> Result<AlignLogRow, TokenError> {
        let l = m.alignment_losses(data, QuantMode::StraightThrough)?;
        Ok(AlignLogRow { epoch, recon: l.recon, token: l.token, cycle: l.cycle, total: l.total, recon_mse: m.recon_mse(data) })
    };
    log.push(row(model, 0)?);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<AlignSample> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, g) = model.alignment_grads(&batch, QuantMode::StraightThrough)?;
            let mut flat = g.flatten();
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut flat, max);
            }
            let mut params = model.params_flat();
            opt.step(&mut params, &flat);
            model.set_params_flat(&params);
        }
        log.push(row(model, epoch)?);
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth;
    use std::sync::Arc;

    fn desk() -> Arc<SkeletonSpec> {
        Arc::new(SkeletonSpec::desk_7dof())
    }

    fn model(seed: u64) -> TokenModel {
        TokenModel::new(TokenConfig::for_skeleton(&desk(), NetProfile::Desk), seed).unwrap()
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let clip = synth::wave(desk(), 3.0, 0.5, 0.3);
        let m = model(4);
        let robot = crate::motion::slice_command(&clip, 0.8, CommandKind::Robot).unwrap().flatten();
        let proprio = Proprioception::from_frame(&clip.frames[40], vec![0.1; 7], crate::motion::GRAVITY).flatten();
        // loss = w . mean with fixed weights
        let w: Vec<f64> = (0..7).map(|i| 0.3 * i as f64 - 1.0).collect();
        let loss = |m: &TokenModel| m.actor_forward(&robot, &proprio, QuantMode::Continuous).unwrap().mean.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let pass = m.actor_forward(&robot, &proprio, QuantMode::Continuous).unwrap();
        let mut g = TokenGrads::zeros(&m);
        m.actor_backward(&pass, &w, &mut g);
        let h = 1e-6;
        for (group, idx) in [(0usize, 3usize), (0, 200), (1, 5), (1, 700)] {
            let bp = if group == 0 { g.enc_r[idx] } else { g.dec_control[idx] };
            let shifted = |d: f64| {
                let mut p = m.clone();
                if group == 0 {
                    p.enc_r.params[idx] += d;
                } else {
                    p.dec_control.params[idx] += d;
                }
                loss(&p)
            };
            let (up, down) = (shifted(h), shifted(-h));
            let fd = (up - down) / (2.0 * h);
            assert!((fd - bp).abs() <= 1e-6 * fd.abs().max(1e-3), "group {group} idx {idx}: {fd} vs {bp}");
        }
        // the exact round passes no gradient into the encoder
        let pass = m.actor_forward(&robot, &proprio, QuantMode::Exact).unwrap();
        let mut g = TokenGrads::zeros(&m);
        m.actor_backward(&pass, &w, &mut g);
        assert!(g.enc_r.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn desk_sizes_are_paper_over_64() {
        let d = NetSizes::desk();
        assert_eq!(d.encoder, vec![32, 16, 8, 8]);
        assert_eq!(d.control_decoder, vec![32, 32, 16, 16, 8, 8]);
    }

    #[test]
    fn encode_is_deterministic_and_kind_checked() {
        let clip = synth::wave(desk(), 3.0, 0.5, 0.3);
        let m = model(1);
        let cmd = crate::motion::slice_command(&clip, 0.6, CommandKind::Robot).unwrap();
        let a = m.encode(&cmd).unwrap();
        assert_eq!(a, model(1).encode(&cmd).unwrap());
        assert_eq!(a.codes.len(), 8);
        assert!(matches!(m.encode_with(CommandKind::Human, &cmd), Err(TokenError::KindMismatch { .. })));
    }

    #[test]
    fn yawed_command_gives_same_token() {
        let clip = synth::wave_with_heading(desk(), 3.0, 0.7, 0.3, 0.2, 0.4);
        let moved = clip.transformed(2.1, &nalgebra::Vector3::new(4.0, -3.0, 0.0));
        let m = model(2);
        for kind in CommandKind::ALL {
            let a = m.encode(&crate::motion::slice_command(&clip, 0.8, kind).unwrap()).unwrap();
            let b = m.encode(&crate::motion::slice_command(&moved, 0.8, kind).unwrap()).unwrap();
            assert_eq!(a.codes, b.codes, "{kind:?}");
            assert!(a.continuous.iter().zip(&b.continuous).all(|(x, y)| (x - y).abs() < 1e-9));
        }
    }

    #[test]
    fn control_head_shape_and_std_clamp() {
        let g1 = SkeletonSpec::g1_29dof();
        let mut m = TokenModel::new(TokenConfig::for_skeleton(&g1, NetProfile::Desk), 3).unwrap();
        let clip = synth::idle(Arc::new(g1), 0.5);
        let p = Proprioception::from_frame(&clip.frames[0], vec![0.0; 29], crate::motion::GRAVITY);
        let cmd = crate::motion::slice_command(&clip, 0.0, CommandKind::Robot).unwrap();
        let tok = m.encode(&cmd).unwrap();
        assert_eq!(m.decode_control(&tok, &p).unwrap().len(), 29);
        assert!(m.action_std().iter().all(|s| (s - 0.05).abs() < 1e-12));
        m.log_std.iter_mut().for_each(|l| *l = 50.0);
        assert!(m.action_std().iter().all(|s| *s == 0.5));
        m.log_std.iter_mut().for_each(|l| *l = -50.0);
        assert!(m.action_std().iter().all(|s| *s == 0.001));
        assert_eq!(m.decode_motion(&tok).len(), m.config.robot_dim);
    }

    #[test]
    fn unsynchronized_commands_error() {
        let clip = synth::wave(desk(), 3.0, 0.5, 0.3);
        let r = crate::motion::slice_command(&clip, 0.2, CommandKind::Robot).unwrap();
        let h = crate::motion::slice_command(&clip, 0.4, CommandKind::Human).unwrap();
        let m = crate::motion::slice_command(&clip, 0.2, CommandKind::Hybrid).unwrap();
        assert!(matches!(AlignSample::from_commands(&r, &h, &m), Err(TokenError::Unsynchronized(_))));
        assert!(matches!(AlignSample::from_commands(&h, &r, &m), Err(TokenError::KindMismatch { .. })));
        let mut s = AlignSample::from_commands(&r, &crate::motion::slice_command(&clip, 0.2, CommandKind::Human).unwrap(), &m).unwrap();
        s.human.pop();
        assert!(matches!(model(0).alignment_losses(&[s], QuantMode::Exact), Err(TokenError::Width { .. })));
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = model(5);
        let bytes = m.to_checkpoint().encode(crate::token::checkpoint::Dtype::F64);
        let back = TokenModel::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
