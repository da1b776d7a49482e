use serde::{Deserialize, Serialize};

use super::RlError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub max_grad_norm: f64,
    pub desired_kl: f64,
    pub lr_min: f64,
    pub lr_max: f64,
    pub init_noise_std: f64,
    pub std_min: f64,
    pub std_max: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub steps_per_env: usize,
    pub envs: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.013,
            value_coef: 1.0,
            actor_lr: 2e-5,
            critic_lr: 1e-3,
            max_grad_norm: 0.1,
            desired_kl: 0.01,
            lr_min: 1e-5,
            lr_max: 2e-4,
            init_noise_std: 0.05,
            std_min: 0.001,
            std_max: 0.5,
            epochs: 5,
            minibatches: 4,
            steps_per_env: 24,
            envs: 4096,
        }
    }
}

impl PpoConfig {
    /// Same hyperparameters with the environment count cut to 16.
    pub fn desk() -> Self {
        Self { envs: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Config(m.into()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must be in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return bad("learning-rate bounds");
        }
        if !(self.std_min > 0.0 && self.std_min <= self.std_max) {
            return bad("std bounds");
        }
        if self.epochs == 0 || self.minibatches == 0 || self.steps_per_env == 0 || self.envs == 0 {
            return bad("epochs, minibatches, steps and envs must be positive");
        }
        Ok(())
    }
}

/// Loss value, its parts and gradients with respect to each sample's new
/// log-probability and value.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
    /// Mean of `(ρ - 1) - ln ρ`, a non-negative KL estimate.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub d_logp: Vec<f64>,
    pub d_value: Vec<f64>,
    /// `d total / d entropy_i`.
    pub d_entropy: f64,
}

/// Clipped surrogate plus value and entropy terms. Advantages are used as
/// given; see [`normalize_advantages`].
pub fn ppo_loss(
    logp_new: &[f64],
    logp_old: &[f64],
    advantages: &[f64],
    values_new: &[f64],
    returns: &[f64],
    entropy: &[f64],
    cfg: &PpoConfig,
) -> Result<PpoLoss, RlError> {
    let n = logp_new.len();
    for (name, len) in [
        ("logp_old", logp_old.len()),
        ("advantages", advantages.len()),
        ("values", values_new.len()),
        ("returns", returns.len()),
        ("entropy", entropy.len()),
    ] {
        if len != n {
            return Err(RlError::Length(format!("{name}: {len} vs {n}")));
        }
    }
    if n == 0 {
        return Err(RlError::Length("empty batch".into()));
    }
    for (name, v) in [
        ("logp_new", logp_new),
        ("logp_old", logp_old),
        ("advantages", advantages),
        ("values", values_new),
        ("returns", returns),
        ("entropy", entropy),
    ] {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(RlError::NonFinite(name));
        }
    }
    let inv = 1.0 / n as f64;
    let (lo, hi) = (1.0 - cfg.clip, 1.0 + cfg.clip);
    let mut policy = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let mut d_logp = vec![0.0; n];
    for i in 0..n {
        let log_ratio = logp_new[i] - logp_old[i];
        let ratio = log_ratio.exp();
        let a = advantages[i];
        let unclipped = ratio * a;
        let clipped_obj = ratio.clamp(lo, hi) * a;
        if clipped_obj < unclipped {
            policy -= clipped_obj * inv;
            clipped += 1;
        } else {
            policy -= unclipped * inv;
            d_logp[i] = -a * ratio * inv;
        }
        kl += (ratio - 1.0 - log_ratio) * inv;
    }
    let mut value = 0.0;
    let mut d_value = vec![0.0; n];
    for i in 0..n {
        let e = values_new[i] - returns[i];
        value += e * e * inv;
        d_value[i] = cfg.value_coef * 2.0 * e * inv;
    }
    let ent = entropy.iter().sum::<f64>() * inv;
    Ok(PpoLoss {
        policy,
        value,
        entropy: ent,
        total: policy + cfg.value_coef * value - cfg.entropy_coef * ent,
        approx_kl: kl,
        clip_fraction: clipped as f64 * inv,
        d_logp,
        d_value,
        d_entropy: -cfg.entropy_coef * inv,
    })
}

/// Zero mean, unit standard deviation (population); a constant batch maps to zeros.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / (std + 1e-8) } else { 0.0 };
    }
}

/// Adaptive learning rate from the measured KL: shrink by 1.5 above twice the
/// target, grow by 1.5 below half of it, then clamp.
pub fn adapt_lr(kl: f64, lr: f64, cfg: &PpoConfig) -> f64 {
    let next = if kl > 2.0 * cfg.desired_kl {
        lr / 1.5
    } else if kl < cfg.desired_kl / 2.0 && kl > 0.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(cfg.lr_min, cfg.lr_max)
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Log-density of a diagonal Gaussian.
pub fn gaussian_log_prob(action: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    action
        .iter()
        .zip(mean)
        .zip(std)
        .map(|((a, m), s)| -0.5 * ((a - m) / s).powi(2) - s.ln() - 0.5 * LN_2PI)
        .sum()
}

pub fn gaussian_entropy(std: &[f64]) -> f64 {
    std.iter().map(|s| s.ln() + 0.5 * (LN_2PI + 1.0)).sum()
}
