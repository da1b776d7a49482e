use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::motion::command::CommandKind;
use crate::motion::SkeletonSpec;
use crate::planner::{LibraryManifest, PlannerConfig};
use crate::reward::{DrConfig, Range, RewardWeights};
use crate::rl::{PpoConfig, SamplerConfig};
use crate::runtime::{SimConfig, TaskId, TaskSpec, TICKS_PER_SECOND};
use crate::token::{FsqSpec, NetProfile, NetSizes};

/// Environment variable that replaces `server.bind`.
pub const BIND_ENV: &str = "HUMTRACK_BIND";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-size hyperparameters on the 29-joint skeleton.
    Paper,
    /// Same values where they fit, small networks on the 7-joint skeleton.
    Desk,
}

impl FromStr for Profile {
    type Err = ServiceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            _ => Err(ServiceError::Config(format!("unknown profile {s:?} (expected paper or desk)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSection {
    pub fsq: FsqSpec,
    pub nets: NetProfile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerSection {
    /// Library directory with a `manifest.json`; empty for the built-in
    /// synthetic library.
    pub library: String,
    #[serde(flatten)]
    pub params: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeSection {
    pub streamer_hz: u64,
    pub input_hz: u64,
    pub policy_hz: u64,
    pub planner_hz: u64,
    pub immediate_replan: bool,
}

impl Default for RuntimeSection {
    fn default() -> Self {
        Self { streamer_hz: 500, input_hz: 100, policy_hz: 50, planner_hz: 10, immediate_replan: true }
    }
}

impl RuntimeSection {
    pub fn sim_config(&self) -> Result<SimConfig, ServiceError> {
        let mut tasks = Vec::new();
        for (prio, (id, hz)) in [(TaskId::Streamer, self.streamer_hz), (TaskId::Input, self.input_hz), (TaskId::Policy, self.policy_hz), (TaskId::Planner, self.planner_hz)]
            .into_iter()
            .enumerate()
        {
            if hz == 0 || TICKS_PER_SECOND % hz != 0 {
                return Err(ServiceError::Config(format!("{} rate {hz} Hz does not divide {TICKS_PER_SECOND}", id.name())));
            }
            tasks.push(TaskSpec::hz(id, hz, prio as u8));
        }
        Ok(SimConfig { tasks, immediate_replan: self.immediate_replan, trace_ticks: false })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerSection {
    pub bind: String,
    pub broadcast_hz: f64,
    /// Plan frames included in each state update.
    pub preview_frames: usize,
    pub max_message_bytes: usize,
    /// Outgoing messages buffered per client before updates are dropped.
    pub client_queue: usize,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self { bind: "127.0.0.1:7878".into(), broadcast_hz: 20.0, preview_frames: 25, max_message_bytes: 1 << 20, client_queue: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub profile: Profile,
    /// `desk_7dof`, `g1_29dof` or a skeleton JSON file.
    pub skeleton: String,
    pub reward: RewardWeights,
    pub dr: DrConfig,
    pub token: TokenSection,
    pub ppo: PpoConfig,
    pub sampler: SamplerConfig,
    pub planner: PlannerSection,
    pub runtime: RuntimeSection,
    pub server: ServerSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn profile(profile: Profile) -> Self {
        let (skeleton, nets, ppo) = match profile {
            Profile::Paper => ("g1_29dof", NetProfile::Paper, PpoConfig::default()),
            Profile::Desk => ("desk_7dof", NetProfile::Desk, PpoConfig::desk()),
        };
        Self {
            profile,
            skeleton: skeleton.into(),
            reward: RewardWeights::default(),
            dr: DrConfig::default(),
            token: TokenSection { fsq: FsqSpec::default(), nets },
            ppo,
            sampler: SamplerConfig::default(),
            planner: PlannerSection { library: String::new(), params: PlannerConfig::default() },
            runtime: RuntimeSection::default(),
            server: ServerSection::default(),
            base_dir: PathBuf::from("."),
        }
    }

    /// Parse TOML overrides on top of a profile. The profile comes from
    /// `profile` if given, else from the text, else `desk`.
    pub fn from_toml_str(text: &str, profile: Option<Profile>, base_dir: &Path) -> Result<Self, ServiceError> {
        let over: toml::Table = text.parse().map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))?;
        let named = match over.get("profile") {
            Some(toml::Value::String(s)) => Some(s.parse::<Profile>()?),
            Some(v) => return Err(ServiceError::Config(format!("profile must be a string, got {v}"))),
            None => None,
        };
        let profile = profile.or(named).unwrap_or(Profile::Desk);
        let mut base = toml::Table::try_from(Self::profile(profile)).map_err(|e| ServiceError::Config(e.to_string()))?;
        merge(&mut base, over, "")?;
        base.insert("profile".into(), toml::Value::try_from(profile).map_err(|e| ServiceError::Config(e.to_string()))?);
        let mut cfg: Self = base.try_into().map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    /// Profile defaults, the optional file, then the bind override from
    /// the environment; validated, with every referenced file checked.
    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self, ServiceError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ServiceError::Config(format!("{}: {e}", p.display())))?;
                let dir = p.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::from_toml_str(&text, profile, dir)?
            }
            None => Self::profile(profile.unwrap_or(Profile::Desk)),
        };
        if let Ok(bind) = std::env::var(BIND_ENV) {
            if !bind.is_empty() {
                cfg.server.bind = bind;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_skeleton(&self) -> Result<Arc<SkeletonSpec>, ServiceError> {
        Ok(Arc::new(match self.skeleton.as_str() {
            "desk_7dof" => SkeletonSpec::desk_7dof(),
            "g1_29dof" => SkeletonSpec::g1_29dof(),
            path => SkeletonSpec::load(self.resolve(path))?,
        }))
    }

    /// Library directory, if one is configured.
    pub fn library_dir(&self) -> Option<PathBuf> {
        (!self.planner.library.is_empty()).then(|| self.resolve(&self.planner.library))
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let bad = |m: String| Err(ServiceError::Config(m));
        self.reward.validate().map_err(ServiceError::Config)?;
        self.dr.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        self.token.fsq.validate().map_err(ServiceError::Config)?;
        self.ppo.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        let s = &self.sampler;
        if !(s.bin_seconds > 0.0) || !(0.0..=1.0).contains(&s.alpha) || !(s.beta >= 0.0) {
            return bad("sampler bin, alpha or beta out of range".into());
        }
        self.planner.params.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        self.runtime.sim_config()?;
        let sv = &self.server;
        if !(10.0..=30.0).contains(&sv.broadcast_hz) {
            return bad(format!("broadcast_hz {} outside [10, 30]", sv.broadcast_hz));
        }
        if !(2..=25).contains(&sv.preview_frames) {
            return bad(format!("preview_frames {} outside [2, 25]", sv.preview_frames));
        }
        if sv.bind.is_empty() || sv.client_queue == 0 || sv.max_message_bytes < 64 {
            return bad("server bind, client_queue or max_message_bytes invalid".into());
        }
        if !matches!(self.skeleton.as_str(), "desk_7dof" | "g1_29dof") {
            let p = self.resolve(&self.skeleton);
            if !p.is_file() {
                return bad(format!("skeleton file {} does not exist", p.display()));
            }
        }
        if let Some(dir) = self.library_dir() {
            let m = dir.join(LibraryManifest::FILE);
            if !m.is_file() {
                return bad(format!("library manifest {} does not exist", m.display()));
            }
        }
        Ok(())
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Deep merge `over` into `base`. Keys must already exist in `base`; a
/// table carrying a `kind` tag replaces the base table instead.
fn merge(base: &mut toml::Table, over: toml::Table, prefix: &str) -> Result<(), ServiceError> {
    for (k, v) in over {
        let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        let Some(slot) = base.get_mut(&k) else {
            return Err(ServiceError::Config(format!("unknown key {path}")));
        };
        match (slot, v) {
            (toml::Value::Table(b), toml::Value::Table(o)) if !o.contains_key("kind") => merge(b, o, &path)?,
            (slot, toml::Value::Integer(i)) if slot.is_float() => *slot = toml::Value::Float(i as f64),
            (slot, v) => *slot = v,
        }
    }
    Ok(())
}

/// Differences between a config and the reference hyperparameter values.
/// Empty for an unmodified `paper` profile.
pub fn reference_mismatches(cfg: &Config) -> Vec<String> {
    let mut out = Vec::new();
    let r = &cfg.reward;
    num(&mut out, "reward.root_ori", r.root_ori, 0.5);
    num(&mut out, "reward.body_pos", r.body_pos, 1.0);
    num(&mut out, "reward.body_ori", r.body_ori, 1.0);
    num(&mut out, "reward.body_lin", r.body_lin, 1.0);
    num(&mut out, "reward.body_ang", r.body_ang, 1.0);
    num(&mut out, "reward.action_rate", r.action_rate, -0.1);
    num(&mut out, "reward.joint_limit", r.joint_limit, -10.0);
    num(&mut out, "reward.undesired_contact", r.undesired_contact, -0.1);
    num(&mut out, "reward.contact_force_threshold", r.contact_force_threshold, 1.0);
    num(&mut out, "reward.scales.ori", r.scales.ori, 0.4);
    num(&mut out, "reward.scales.pos", r.scales.pos, 0.3);
    num(&mut out, "reward.scales.lin", r.scales.lin, 1.0);
    num(&mut out, "reward.scales.ang", r.scales.ang, 3.14);

    let d = &cfg.dr;
    let ranges: [(&str, Range, [f64; 2]); 17] = [
        ("dr.static_friction", d.static_friction, [0.3, 1.6]),
        ("dr.dynamic_friction", d.dynamic_friction, [0.3, 1.2]),
        ("dr.restitution", d.restitution, [0.0, 0.5]),
        ("dr.default_joint", d.default_joint, [-0.01, 0.01]),
        ("dr.com_offset.x", d.com_offset[0], [-0.075, 0.075]),
        ("dr.com_offset.y", d.com_offset[1], [-0.1, 0.1]),
        ("dr.com_offset.z", d.com_offset[2], [-0.1, 0.1]),
        ("dr.push_lin_vel.x", d.push_lin_vel[0], [-0.5, 0.5]),
        ("dr.push_lin_vel.y", d.push_lin_vel[1], [-0.5, 0.5]),
        ("dr.push_lin_vel.z", d.push_lin_vel[2], [-0.2, 0.2]),
        ("dr.push_ang_vel.roll", d.push_ang_vel[0], [-0.52, 0.52]),
        ("dr.push_ang_vel.pitch", d.push_ang_vel[1], [-0.52, 0.52]),
        ("dr.push_ang_vel.yaw", d.push_ang_vel[2], [-0.78, 0.78]),
        ("dr.push_duration", d.push_duration, [1.0, 3.0]),
        ("dr.target_rot.roll", d.target_rot[0], [-0.1, 0.1]),
        ("dr.target_rot.yaw", d.target_rot[2], [-0.2, 0.2]),
        ("dr.target_joint", d.target_joint, [-0.1, 0.1]),
    ];
    for (name, got, [lo, hi]) in ranges {
        num(&mut out, &format!("{name}.lo"), got.lo, lo);
        num(&mut out, &format!("{name}.hi"), got.hi, hi);
    }
    let triples: [(&str, &[Range; 3], [f64; 3]); 4] = [
        ("dr.target_pos", &d.target_pos, [0.05, 0.05, 0.01]),
        ("dr.target_lin_vel", &d.target_lin_vel, [0.5, 0.5, 0.2]),
        ("dr.target_ang_vel", &d.target_ang_vel, [0.52, 0.52, 0.78]),
        ("dr.target_rot", &d.target_rot, [0.1, 0.1, 0.2]),
    ];
    for (name, got, half) in triples {
        for i in 0..3 {
            num(&mut out, &format!("{name}[{i}].lo"), got[i].lo, -half[i]);
            num(&mut out, &format!("{name}[{i}].hi"), got[i].hi, half[i]);
        }
    }

    let sizes = NetSizes::for_profile(cfg.token.nets);
    layers(&mut out, "nets.encoder", &sizes.encoder, &[2048, 1024, 512, 512]);
    layers(&mut out, "nets.motion_decoder", &sizes.motion_decoder, &[2048, 1024, 512, 512]);
    layers(&mut out, "nets.control_decoder", &sizes.control_decoder, &[2048, 2048, 1024, 1024, 512, 512]);
    layers(&mut out, "nets.critic", &sizes.critic, &[2048, 2048, 1024, 1024, 512, 512]);
    match cfg.load_skeleton() {
        Ok(sk) => num(&mut out, "action_dim", sk.joint_count() as f64, 29.0),
        Err(e) => out.push(format!("skeleton: {e}")),
    }
    for kind in CommandKind::ALL {
        num(&mut out, &format!("{kind:?}.future_frames"), kind.future_frames() as f64, 10.0);
    }
    num(&mut out, "Robot.frame_interval", CommandKind::Robot.frame_interval(), 0.1);
    num(&mut out, "Hybrid.frame_interval", CommandKind::Hybrid.frame_interval(), 0.1);
    num(&mut out, "Human.frame_interval", CommandKind::Human.frame_interval(), 0.02);

    let p = &cfg.ppo;
    num(&mut out, "ppo.envs", p.envs as f64, 4096.0);
    num(&mut out, "ppo.steps_per_env", p.steps_per_env as f64, 24.0);
    num(&mut out, "ppo.epochs", p.epochs as f64, 5.0);
    num(&mut out, "ppo.minibatches", p.minibatches as f64, 4.0);
    num(&mut out, "ppo.gamma", p.gamma, 0.99);
    num(&mut out, "ppo.lambda", p.lambda, 0.95);
    num(&mut out, "ppo.clip", p.clip, 0.2);
    num(&mut out, "ppo.entropy_coef", p.entropy_coef, 0.013);
    num(&mut out, "ppo.value_coef", p.value_coef, 1.0);
    num(&mut out, "ppo.actor_lr", p.actor_lr, 2e-5);
    num(&mut out, "ppo.critic_lr", p.critic_lr, 1e-3);
    num(&mut out, "ppo.max_grad_norm", p.max_grad_norm, 0.1);
    num(&mut out, "ppo.desired_kl", p.desired_kl, 0.01);
    num(&mut out, "ppo.lr_min", p.lr_min, 1e-5);
    num(&mut out, "ppo.lr_max", p.lr_max, 2e-4);
    num(&mut out, "ppo.init_noise_std", p.init_noise_std, 0.05);
    num(&mut out, "ppo.std_min", p.std_min, 0.001);
    num(&mut out, "ppo.std_max", p.std_max, 0.5);
    num(&mut out, "sampler.bin_seconds", cfg.sampler.bin_seconds, 1.0);
    num(&mut out, "sampler.beta", cfg.sampler.beta, 200.0);
    num(&mut out, "sampler.alpha", cfg.sampler.alpha, 0.1);
    out
}

fn num(out: &mut Vec<String>, name: &str, got: f64, want: f64) {
    if got != want {
        out.push(format!("{name}: {got} != {want}"));
    }
}

fn layers(out: &mut Vec<String>, name: &str, got: &[usize], want: &[usize]) {
    if got != want {
        out.push(format!("{name}: {got:?} != {want:?}"));
    }
}
