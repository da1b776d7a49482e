//! Kinematic motion planner: spring-model targets, keyframe retrieval, a
//! strided latent codec and iterative masked-token in-betweening.

pub mod codec;
mod library;
pub mod predictor;
mod schedule;
pub mod spring;

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

pub use codec::{CodecSpec, Reconstruction, Token, Vocabulary};
pub use library::{align_keyframes, EntryKind, LibraryManifest, ManifestEntry, MotionLibrary, SkillKeyframe};
pub use predictor::{MlpPredictor, OraclePredictor, RetrievalPredictor, TokenPredictor, DURATIONS};
pub use schedule::{cosine_fraction, cosine_schedule, schedule_counts};
pub use spring::{spring_gap, spring_targets, RootState, SpringParams, SpringTarget};

use crate::motion::rotation::heading_of;
use crate::motion::{fill_velocities, MotionClip, MotionError, PoseFrame, SkeletonSpec, DEFAULT_FPS};
use codec::{canonical_frame, features_to_frame, frame_features, STRIDE};

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error("frame count {0} is not a positive multiple of 4")]
    FrameCount(usize),
    #[error("predictor produced non-finite logits")]
    NonFiniteLogits,
    #[error("logit shape: expected {expected} rows of {width}")]
    LogitShape { expected: usize, width: usize },
    #[error("empty library: {0}")]
    EmptyLibrary(String),
    #[error("unknown style {0:?}")]
    UnknownStyle(String),
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("need 4 context keyframes, got {0}")]
    Context(usize),
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("library manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Motion(#[from] MotionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const MAX_SPEED: f64 = 6.0;
pub const MAX_CRAWL_SPEED: f64 = 0.5;
pub const HEIGHT_RANGE: [f64; 2] = [0.3, 0.8];

/// What the planner is asked to do next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PlanCommand {
    /// Move at `velocity` m/s toward the world compass `direction_deg`, facing
    /// the direction of travel, in the given style.
    Navigate { velocity: f64, direction_deg: f64, style: String },
    /// Squat, kneel or crawl at a root height; crawling also moves.
    Skill { skill: String, height: f64, velocity: f64, direction_deg: f64 },
    /// Navigate with the lower body generated and the upper-body joints held
    /// at the given values.
    Layer { velocity: f64, direction_deg: f64, style: String, upper_body: Vec<f64> },
}

fn clamp_flag(x: f64, lo: f64, hi: f64, flag: &mut bool) -> f64 {
    let y = if x.is_nan() { lo } else { x.clamp(lo, hi) };
    *flag |= y != x;
    y
}

impl PlanCommand {
    /// Values forced into their envelopes; the flag is set when anything moved.
    pub fn clamped(&self) -> (Self, bool) {
        let mut w = false;
        let dir = |d: f64, w: &mut bool| {
            if d.is_finite() {
                d.rem_euclid(360.0)
            } else {
                *w = true;
                0.0
            }
        };
        let c = match self {
            Self::Navigate { velocity, direction_deg, style } => {
                Self::Navigate { velocity: clamp_flag(*velocity, 0.0, MAX_SPEED, &mut w), direction_deg: dir(*direction_deg, &mut w), style: style.clone() }
            }
            Self::Skill { skill, height, velocity, direction_deg } => {
                let vmax = if skill == "crawl" { MAX_CRAWL_SPEED } else { 0.0 };
                Self::Skill {
                    skill: skill.clone(),
                    height: clamp_flag(*height, HEIGHT_RANGE[0], HEIGHT_RANGE[1], &mut w),
                    velocity: clamp_flag(*velocity, 0.0, vmax, &mut w),
                    direction_deg: dir(*direction_deg, &mut w),
                }
            }
            Self::Layer { velocity, direction_deg, style, upper_body } => Self::Layer {
                velocity: clamp_flag(*velocity, 0.0, MAX_SPEED, &mut w),
                direction_deg: dir(*direction_deg, &mut w),
                style: style.clone(),
                upper_body: upper_body.clone(),
            },
        };
        (c, w)
    }

    fn motion(&self) -> (f64, f64) {
        match self {
            Self::Navigate { velocity, direction_deg, .. }
            | Self::Skill { velocity, direction_deg, .. }
            | Self::Layer { velocity, direction_deg, .. } => (*velocity, *direction_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanRequest {
    /// The 4 most recent realized frames.
    pub context: Vec<PoseFrame>,
    pub command: PlanCommand,
    /// Sequence number of the newest command reflected by this request.
    pub seq: u64,
}

/// An immutable planned segment at 50 Hz. The first 4 frames are the context
/// keyframes and the last 4 the target keyframes.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanSegment {
    pub seq: u64,
    pub duration: f64,
    pub clip: MotionClip,
    pub tokens: Vec<usize>,
    pub target: SpringTarget,
    /// Root state of the last context frame, where the spring started.
    pub anchor: RootState,
    /// The command was clamped into its envelope.
    pub clamped: bool,
}

impl PlanSegment {
    pub fn start_time(&self) -> f64 {
        self.clip.start_time()
    }

    pub fn end_time(&self) -> f64 {
        self.clip.end_time()
    }

    /// Largest joint change between consecutive frames, radians.
    pub fn max_joint_step(&self) -> f64 {
        self.clip
            .frames
            .windows(2)
            .flat_map(|w| w[0].joint_pos.iter().zip(&w[1].joint_pos).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max)
    }

    /// At most `max` evenly spaced frames, always including the last one.
    pub fn preview(&self, max: usize) -> Vec<&PoseFrame> {
        let n = self.clip.len();
        if n <= max || max < 2 {
            return self.clip.frames.iter().take(max.max(1).min(n)).collect();
        }
        (0..max).map(|i| &self.clip.frames[i * (n - 1) / (max - 1)]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Refinement iterations per segment.
    pub l_max: usize,
    pub spring: SpringParams,
    pub codec: CodecSpec,
    /// Seconds ahead at which the target keyframe is placed.
    pub horizon: f64,
    /// Largest accepted joint change between consecutive frames, radians.
    pub continuity_budget: f64,
    /// Offset decoded motion to meet the keyframes.
    pub blend_boundaries: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self { l_max: 8, spring: SpringParams::default(), codec: CodecSpec::default(), horizon: 1.0, continuity_budget: 0.25, blend_boundaries: true }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.l_max == 0 {
            return Err(PlanError::Config("l_max must be at least 1".into()));
        }
        self.spring.validate().map_err(PlanError::Config)?;
        if !(self.codec.step > 0.0) || !(self.horizon > 0.0) {
            return Err(PlanError::Config("codec step and horizon must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one in-betweening pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Inbetween {
    pub frames: Vec<PoseFrame>,
    pub tokens: Vec<usize>,
    pub duration: f64,
    /// Positions finalized at each iteration, in order.
    pub finalized: Vec<Vec<usize>>,
}

/// Fill the motion between 4 context and 4 target keyframes.
///
/// All positions start masked. Each iteration asks the predictor for logits,
/// then finalizes the most confident open positions until the cumulative
/// cosine-schedule count is reached; finalized positions are never revisited.
/// With `blend`, the decoded motion is offset to meet the keyframes. The
/// boundary frames of the result are the keyframes themselves.
pub fn inbetween(
    context: &[PoseFrame],
    target: &[PoseFrame],
    predictor: &dyn TokenPredictor,
    l_max: usize,
    codec: &CodecSpec,
    skeleton: &SkeletonSpec,
    blend: bool,
) -> Result<Inbetween, PlanError> {
    if context.len() != STRIDE {
        return Err(PlanError::Context(context.len()));
    }
    if target.len() != STRIDE {
        return Err(PlanError::Context(target.len()));
    }
    let hf = canonical_frame(&context[0]);
    let ctx: Vec<Vec<f64>> = context.iter().map(|f| frame_features(f, &hf)).collect();
    let tgt: Vec<Vec<f64>> = target.iter().map(|f| frame_features(f, &hf)).collect();
    let duration = predictor.duration(&ctx, &tgt);
    let n = predictor::segment_frames(duration);
    if n % STRIDE != 0 || n < 2 * STRIDE {
        return Err(PlanError::FrameCount(n));
    }
    let k = n / STRIDE;
    let vocab = predictor.vocab().len();
    let mut partial: Vec<Option<usize>> = vec![None; k];
    let mut finalized = Vec::with_capacity(l_max);
    for l in 1..=l_max {
        let logits = predictor.predict(&ctx, &tgt, &partial)?;
        if logits.len() != k || logits.iter().any(|r| r.len() != vocab) {
            return Err(PlanError::LogitShape { expected: k, width: vocab });
        }
        if logits.iter().flatten().any(|x| !x.is_finite()) {
            return Err(PlanError::NonFiniteLogits);
        }
        let mut open: Vec<(usize, usize, f64)> = (0..k)
            .filter(|&i| partial[i].is_none())
            .map(|i| {
                let row = &logits[i];
                let arg = (0..vocab).max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a))).expect("non-empty vocabulary");
                // confidence = softmax probability of the argmax
                let z: f64 = row.iter().map(|x| (x - row[arg]).exp()).sum();
                (i, arg, 1.0 / z)
            })
            .collect();
        open.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let done = k - open.len();
        let take = cosine_schedule(l, l_max, k).saturating_sub(done);
        let mut step = Vec::with_capacity(take);
        for &(i, id, _) in open.iter().take(take) {
            partial[i] = Some(id);
            step.push(i);
        }
        finalized.push(step);
    }
    let tokens: Vec<usize> = partial.into_iter().map(|p| p.expect("schedule finalizes every token")).collect();
    let mut feats = codec.decode(&predictor.vocab().tokens(&tokens));
    if blend {
        blend_boundaries(&mut feats, &ctx[STRIDE - 1], &tgt[0]);
    }
    let t0 = context[0].time;
    let dt = 1.0 / DEFAULT_FPS;
    let mut frames = feats
        .iter()
        .enumerate()
        .map(|(i, f)| features_to_frame(f, &hf, skeleton, t0 + i as f64 * dt))
        .collect::<Result<Vec<_>, _>>()?;
    fill_velocities(&mut frames, DEFAULT_FPS);
    for (i, kf) in context.iter().enumerate() {
        frames[i] = retimed(kf, t0 + i as f64 * dt);
    }
    for (i, kf) in target.iter().enumerate() {
        let j = n - STRIDE + i;
        frames[j] = retimed(kf, t0 + j as f64 * dt);
    }
    Ok(Inbetween { frames, tokens, duration, finalized })
}

/// Shift decoded features so frame 3 equals the last context frame and frame
/// `n - 4` the first target frame, interpolating the offset in between.
fn blend_boundaries(feats: &mut [Vec<f64>], ctx_last: &[f64], tgt_first: &[f64]) {
    let n = feats.len();
    let (a, b) = (STRIDE - 1, n - STRIDE);
    let r0: Vec<f64> = ctx_last.iter().zip(&feats[a]).map(|(x, y)| x - y).collect();
    let r1: Vec<f64> = tgt_first.iter().zip(&feats[b]).map(|(x, y)| x - y).collect();
    for (i, f) in feats.iter_mut().enumerate().take(b + 1).skip(a) {
        let w = (i - a) as f64 / (b - a) as f64;
        for d in 0..f.len() {
            f[d] += (1.0 - w) * r0[d] + w * r1[d];
        }
    }
}

fn retimed(frame: &PoseFrame, time: f64) -> PoseFrame {
    let mut f = frame.clone();
    f.time = time;
    f
}

/// Root state of the latest frame, for the spring model.
pub fn root_state(frame: &PoseFrame) -> RootState {
    RootState {
        pos: [frame.root_pos.x, frame.root_pos.y],
        heading: heading_of(&frame.root_rot),
        vel: [frame.root_lin_vel.x, frame.root_lin_vel.y],
        yaw_rate: frame.root_ang_vel.z,
    }
}

/// Planner with its keyframe library and token predictor.
#[derive(Clone)]
pub struct Planner {
    pub config: PlannerConfig,
    pub skeleton: Arc<SkeletonSpec>,
    pub library: Arc<MotionLibrary>,
    pub predictor: Arc<dyn TokenPredictor>,
}

impl Planner {
    pub fn new(config: PlannerConfig, skeleton: Arc<SkeletonSpec>, library: Arc<MotionLibrary>, predictor: Arc<dyn TokenPredictor>) -> Result<Self, PlanError> {
        config.validate()?;
        Ok(Self { config, skeleton, library, predictor })
    }

    /// Retrieval planner over every style clip of `library`.
    pub fn with_retrieval(config: PlannerConfig, skeleton: Arc<SkeletonSpec>, library: MotionLibrary, seed: u64) -> Result<Self, PlanError> {
        let clips = library.all_clips();
        if clips.is_empty() {
            return Err(PlanError::EmptyLibrary("no style clips".into()));
        }
        let predictor = RetrievalPredictor::from_clips(&clips, &config.codec, 5, seed)?;
        Self::new(config, skeleton, Arc::new(library), Arc::new(predictor))
    }

    /// Spring target for a command from the latest context frame.
    pub fn target_for(&self, latest: &PoseFrame, command: &PlanCommand) -> SpringTarget {
        let (speed, dir) = command.motion();
        let cur = root_state(latest);
        let heading = if speed > 0.0 { dir.to_radians() } else { cur.heading };
        let heading = match command {
            PlanCommand::Skill { .. } if speed == 0.0 => cur.heading,
            _ => heading,
        };
        spring_targets(&cur, spring::velocity_from_direction(speed, dir), heading, &self.config.spring, self.config.horizon)
    }

    pub fn plan<R: rand::Rng + ?Sized>(&self, req: &PlanRequest, rng: &mut R) -> Result<PlanSegment, PlanError> {
        if req.context.len() != STRIDE {
            return Err(PlanError::Context(req.context.len()));
        }
        let (command, clamped) = req.command.clamped();
        if clamped {
            warn!("plan command clamped into its envelope: {:?}", req.command);
        }
        let anchor = root_state(&req.context[STRIDE - 1]);
        let target = self.target_for(&req.context[STRIDE - 1], &command);
        let keyframes = match &command {
            PlanCommand::Navigate { style, .. } | PlanCommand::Layer { style, .. } => self.library.style_keyframes(style, rng)?,
            PlanCommand::Skill { skill, height, .. } => self.library.skill_keyframes(skill, *height)?,
        };
        let keyframes = align_keyframes(&keyframes, &target);
        let out = inbetween(&req.context, &keyframes, self.predictor.as_ref(), self.config.l_max, &self.config.codec, &self.skeleton, self.config.blend_boundaries)?;
        let mut frames = out.frames;
        if let PlanCommand::Layer { upper_body, .. } = &command {
            let upper = self.skeleton.upper_body_joints();
            let n = frames.len();
            for f in &mut frames[STRIDE..n - STRIDE] {
                for (j, v) in upper.iter().zip(upper_body) {
                    f.joint_pos[*j] = *v;
                }
                *f = PoseFrame::from_pose(&self.skeleton, f.time, f.root_pos, f.root_rot, f.joint_pos.clone());
            }
        }
        let clip = MotionClip::new("plan", DEFAULT_FPS, self.skeleton.clone(), frames)?;
        let seg = PlanSegment { seq: req.seq, duration: out.duration, clip, tokens: out.tokens, target, anchor, clamped };
        if seg.max_joint_step() > self.config.continuity_budget {
            warn!("plan joint step {:.3} rad exceeds the continuity budget", seg.max_joint_step());
        }
        Ok(seg)
    }
}

/// The last 4 realized frames, used as the next context.
pub fn context_from(realized: &[PoseFrame]) -> Result<Vec<PoseFrame>, PlanError> {
    if realized.len() < STRIDE {
        return Err(PlanError::Context(realized.len()));
    }
    Ok(realized[realized.len() - STRIDE..].to_vec())
}
