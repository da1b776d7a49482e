//! Skeleton and motion data model.

mod clip;
pub mod command;
pub mod io;
pub mod rotation;
mod skeleton;
pub mod synth;

pub use clip::{fill_velocities, LinkState, MotionClip, PoseFrame, Proprioception, DEFAULT_FPS, GRAVITY};
pub use command::{
    slice_command, CommandKind, CommandSlicer, CommandWindow, HumanLayout, MotionCommand, RobotCommandFrame,
};
pub use io::{load_clip, load_clip_with, save_clip, LoadOptions};
pub use rotation::{HeadingFrame, Rot6};
pub use skeleton::{BodyLink, Keypoints, SkeletonSpec};

#[derive(Debug, thiserror::Error)]
pub enum MotionError {
    #[error("invalid rotation: quaternion norm {0}")]
    InvalidRotation(f64),
    #[error("degenerate 6D rotation input")]
    DegenerateRotation,
    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("clip has no frames")]
    EmptyClip,
    #[error("not a clip file (bad magic)")]
    BadMagic,
    #[error("unsupported clip format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated clip file: needed {needed}, available {available}")]
    Truncated { needed: usize, available: usize },
    #[error("skeleton mismatch: expected {expected}, found {found}")]
    SkeletonMismatch { expected: String, found: String },
    #[error("clip recorded at {0} Hz; resampling not requested")]
    UnexpectedFps(f64),
    #[error("corrupt clip file: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
