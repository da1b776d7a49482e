//! Configuration, dataset ingestion, the steering wire protocol and the
//! TCP steering server.

pub mod config;
pub mod ingest;
pub mod server;
pub mod wire;

pub use config::{reference_mismatches, Config, Profile, BIND_ENV};
pub use ingest::{ingest_dataset, write_manifest, IngestOptions, IngestReport, Rejected};
pub use server::{demo_library, serve, steering_sim, Server};
pub use wire::{Ack, ClientMessage, ErrorReply, PlanInfo, ServerMessage, StateUpdate, SteerCommand, SteerMode};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Motion(#[from] crate::motion::MotionError),
    #[error(transparent)]
    Plan(#[from] crate::planner::PlanError),
    #[error(transparent)]
    Runtime(#[from] crate::runtime::RuntimeError),
}
