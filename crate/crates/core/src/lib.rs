//! Humanoid motion-tracking control stack at desk scale.
//!
//! The crate is organised by subsystem:
//!
//! - [`motion`]: skeletons, clips, rotation representations and command windows
//! - [`metrics`]: tracking error metrics and success criteria
//! - [`reward`]: tracking rewards, penalties and domain randomization
//! - [`token`]: FSQ token space, reference MLPs and alignment losses
//! - [`rl`]: GAE, PPO, adaptive learning rate and adaptive motion sampling
//! - [`planner`]: spring-model keyframes and masked-token in-betweening
//! - [`runtime`]: deterministic multi-rate scheduler, mailboxes and the PD plant
//! - [`service`]: configuration, dataset ingestion, wire protocol and the steering server

pub mod motion;
pub mod metrics;
pub mod reward;
pub mod token;
pub mod rl;
pub mod planner;
pub mod runtime;
pub mod service;
