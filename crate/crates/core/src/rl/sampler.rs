use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RlError;

/// Capped, normalized failure rates blended with the uniform distribution.
pub fn sampling_distribution(failure_rates: &[f64], alpha: f64, beta: f64) -> Vec<f64> {
    let n = failure_rates.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = failure_rates.iter().sum::<f64>() / n as f64;
    let cap = beta * mean;
    let f: Vec<f64> = failure_rates.iter().map(|x| x.max(0.0).min(cap)).collect();
    let total: f64 = f.iter().sum();
    let uniform = 1.0 / n as f64;
    if total <= 0.0 || f.iter().all(|x| *x == f[0]) {
        // p-hat is uniform, so the blend is exactly uniform too
        return vec![uniform; n];
    }
    let floor = (1.0 - alpha) / n as f64;
    f.iter().map(|x| alpha * (x / total) + floor).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FailureEstimator {
    /// failures / attempts over all episodes so far.
    Cumulative,
    /// Exponential average of per-episode outcomes; the weight of an outcome
    /// halves every `half_life` later episodes in the same bin.
    Ema { half_life: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub bin_seconds: f64,
    pub alpha: f64,
    pub beta: f64,
    pub estimator: FailureEstimator,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { bin_seconds: 1.0, alpha: 0.1, beta: 200.0, estimator: FailureEstimator::Ema { half_life: 20.0 } }
    }
}

/// A fixed-duration slice `[start, end)` of one clip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub clip: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSampler {
    pub config: SamplerConfig,
    pub bins: Vec<Bin>,
    pub attempts: Vec<u64>,
    pub failures: Vec<u64>,
    /// Current failure-rate estimate per bin.
    pub rates: Vec<f64>,
    pub probs: Vec<f64>,
}

impl AdaptiveSampler {
    /// Split clips of the given durations (seconds) into bins.
    pub fn new(config: SamplerConfig, clip_durations: &[f64]) -> Result<Self, RlError> {
        if !(config.bin_seconds > 0.0) || !(0.0..=1.0).contains(&config.alpha) || !(config.beta >= 0.0) {
            return Err(RlError::Config("sampler bin, alpha or beta out of range".into()));
        }
        let mut bins = Vec::new();
        for (clip, &d) in clip_durations.iter().enumerate() {
            let count = ((d / config.bin_seconds).ceil() as usize).max(1);
            for k in 0..count {
                let start = k as f64 * config.bin_seconds;
                bins.push(Bin { clip, start, end: (start + config.bin_seconds).min(d.max(0.0)) });
            }
        }
        if bins.is_empty() {
            return Err(RlError::NoBins);
        }
        let n = bins.len();
        Ok(Self {
            config,
            attempts: vec![0; n],
            failures: vec![0; n],
            rates: vec![0.0; n],
            probs: vec![1.0 / n as f64; n],
            bins,
        })
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    /// Bin containing time `t` of `clip`.
    pub fn bin_of(&self, clip: usize, t: f64) -> Option<usize> {
        let first = self.bins.iter().position(|b| b.clip == clip)?;
        let k = (t.max(0.0) / self.config.bin_seconds).floor() as usize;
        let idx = first + k;
        match self.bins.get(idx) {
            Some(b) if b.clip == clip => Some(idx),
            _ => self.bins.iter().rposition(|b| b.clip == clip),
        }
    }

    /// Record one finished episode that started in `bin`.
    pub fn record(&mut self, bin: usize, failed: bool) {
        self.attempts[bin] += 1;
        self.failures[bin] += failed as u64;
        let x = if failed { 1.0 } else { 0.0 };
        self.rates[bin] = match self.config.estimator {
            FailureEstimator::Cumulative => self.failures[bin] as f64 / self.attempts[bin] as f64,
            FailureEstimator::Ema { half_life } => {
                if self.attempts[bin] == 1 {
                    x
                } else {
                    let w = 1.0 - 0.5f64.powf(1.0 / half_life.max(1e-9));
                    self.rates[bin] + w * (x - self.rates[bin])
                }
            }
        };
    }

    /// Recompute the distribution from the current estimates.
    pub fn refresh(&mut self) -> &[f64] {
        self.probs = sampling_distribution(&self.rates, self.config.alpha, self.config.beta);
        &self.probs
    }

    /// Replace the counters and recompute with cumulative rates
    /// `failures / attempts` (0 where there were no attempts).
    pub fn update_counts(&mut self, failures: &[u64], attempts: &[u64]) -> Result<&[f64], RlError> {
        if failures.len() != self.len() || attempts.len() != self.len() {
            return Err(RlError::Length(format!("{} bins, got {} / {}", self.len(), failures.len(), attempts.len())));
        }
        self.failures = failures.to_vec();
        self.attempts = attempts.to_vec();
        self.rates = failures
            .iter()
            .zip(attempts)
            .map(|(&f, &a)| if a == 0 { 0.0 } else { f as f64 / a as f64 })
            .collect();
        Ok(self.refresh())
    }

    /// Draw a bin from the current distribution and a start time uniform
    /// within it. Returns `(bin, clip, start_time)`.
    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize, f64) {
        let bin = WeightedIndex::new(&self.probs).map(|w| w.sample(rng)).unwrap_or(0);
        let b = self.bins[bin];
        let t = if b.end > b.start { rng.gen_range(b.start..b.end) } else { b.start };
        (bin, b.clip, t)
    }

    /// Shannon entropy of the current distribution, nats.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_examples() {
        assert_eq!(sampling_distribution(&[0.0, 1.0], 0.1, 200.0), vec![0.45, 0.55]);
        assert_eq!(sampling_distribution(&[0.0, 0.0, 1.0], 0.1, 0.5), vec![0.3, 0.3, 0.4]);
        assert_eq!(sampling_distribution(&[0.0; 4], 0.1, 200.0), vec![0.25; 4]);
        assert_eq!(sampling_distribution(&[0.3; 5], 0.1, 200.0), vec![0.2; 5]);
    }

    #[test]
    fn cap_limits_outliers() {
        // mean 0.5/100 = 0.005, cap 2 * 0.005 = 0.01 on the outlier
        let mut f = vec![0.0; 100];
        f[0] = 0.5;
        let p = sampling_distribution(&f, 1.0, 2.0);
        assert!((p[0] - 1.0).abs() < 1e-12);
        f[1] = 0.004;
        let p = sampling_distribution(&f, 1.0, 2.0);
        // f0 capped to 2 * 0.504 / 100
        let cap = 2.0 * 0.504 / 100.0;
        assert!((p[0] - cap / (cap + 0.004)).abs() < 1e-12);
    }

    #[test]
    fn bins_cover_clips() {
        let s = AdaptiveSampler::new(SamplerConfig::default(), &[2.5, 0.4]).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.bins[2], Bin { clip: 0, start: 2.0, end: 2.5 });
        assert_eq!(s.bins[3], Bin { clip: 1, start: 0.0, end: 0.4 });
        assert_eq!(s.bin_of(0, 1.7), Some(1));
        assert_eq!(s.bin_of(0, 9.0), Some(2));
        assert_eq!(s.bin_of(1, 0.1), Some(3));
        assert!(AdaptiveSampler::new(SamplerConfig::default(), &[]).is_err());
    }

    #[test]
    fn single_bin_always_zero() {
        let s = AdaptiveSampler::new(SamplerConfig::default(), &[0.8]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let (b, c, t) = s.sample_start(&mut rng);
            assert_eq!((b, c), (0, 0));
            assert!((0.0..0.8).contains(&t));
        }
    }

    #[test]
    fn ema_tracks_recent_outcomes() {
        let cfg = SamplerConfig { estimator: FailureEstimator::Ema { half_life: 1.0 }, ..Default::default() };
        let mut s = AdaptiveSampler::new(cfg, &[1.0]).unwrap();
        s.record(0, true);
        assert_eq!(s.rates[0], 1.0);
        s.record(0, false);
        assert_eq!(s.rates[0], 0.5);
        let mut c = AdaptiveSampler::new(SamplerConfig { estimator: FailureEstimator::Cumulative, ..Default::default() }, &[1.0]).unwrap();
        for f in [true, false, false, true] {
            c.record(0, f);
        }
        assert_eq!(c.rates[0], 0.5);
    }
}
