//! Multi-rate control runtime on an integer tick grid: scheduler, mailboxes,
//! the four control tasks, a PD plant, closed-loop tracking and latency
//! bookkeeping. [`sim`] runs the task graph deterministically; [`live`] runs
//! the same tasks on threads against the wall clock.

pub mod clock;
pub mod live;
pub mod mailbox;
pub mod plant;
pub mod policy;
pub mod sim;
pub mod tasks;
pub mod trace;

pub use clock::{default_tasks, seconds, tick_counts, to_tick, Scheduler, TaskId, TaskSpec, TICKS_PER_SECOND};
pub use live::{LiveClock, LiveRuntime, TaskStats};
pub use mailbox::{Mailbox, Stamped};
pub use plant::{Plant, PlantConfig, RootTarget};
pub use policy::{ConstantPose, KinematicFollower, NeuralPolicy, Policy, PolicyInput};
pub use sim::{run_batch, steering, track_clip, ScriptedCommand, SimConfig, Simulation, TrackOptions, TrackOutcome};
pub use tasks::{ActionMsg, Bus, CommandMsg, Forwarded, PlanMsg, Reference, RuntimeSnapshot};
pub use trace::{command_latencies, measure_latency, pipeline_latency, to_jsonl, write_csv, write_jsonl, LatencyStats, TraceEvent};

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("no reference frame at t = {0}")]
    NoReference(f64),
    #[error("policy produced a non-finite action at t = {0}")]
    NonFiniteAction(f64),
    #[error("trace has no command/actuation pairs")]
    NoLatencyPairs,
    #[error("{task:?} task aborted at tick {tick}: {reason}")]
    Aborted { tick: u64, task: TaskId, reason: String },
    #[error("invalid runtime configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Motion(#[from] crate::motion::MotionError),
    #[error(transparent)]
    Token(#[from] crate::token::TokenError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
}
