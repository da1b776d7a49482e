//! Policy-optimization math: GAE, the clipped PPO objective, the adaptive
//! learning-rate rule and the adaptive motion sampler.

mod gae;
mod ppo;
mod sampler;
pub mod train;

pub use gae::gae;
pub use ppo::{adapt_lr, gaussian_entropy, gaussian_log_prob, normalize_advantages, ppo_loss, PpoConfig, PpoLoss};
pub use sampler::{sampling_distribution, AdaptiveSampler, Bin, FailureEstimator, SamplerConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RlError {
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("sampler has no bins")]
    NoBins,
}
