//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use std::collections::HashSet;
use std::sync::Arc;

use humtrack::motion::{synth, SkeletonSpec};
use humtrack::token::{synced_samples, AlignSample, FsqSpec, NetProfile, QuantMode, TokenConfig, TokenModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn desk() -> Arc<SkeletonSpec> {
    Arc::new(SkeletonSpec::desk_7dof())
}

/// Count distinct tokens produced by a dense grid over `[-4, 4]^dims`.
pub fn enumerate_codebook(spec: &FsqSpec, steps: usize) -> usize {
    let axis: Vec<f64> = (0..steps).map(|i| -4.0 + 8.0 * i as f64 / (steps - 1) as f64).collect();
    let mut seen = HashSet::new();
    let mut idx = vec![0usize; spec.dims];
    loop {
        let z: Vec<f64> = idx.iter().map(|&i| axis[i]).collect();
        seen.insert(spec.quantize(&z).codes);
        let mut d = 0;
        loop {
            if d == spec.dims {
                return seen.len();
            }
            idx[d] += 1;
            if idx[d] < steps {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Outcome of one central-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// `‖backprop − fd‖ / max(‖backprop‖, ‖fd‖)` over the checked entries.
    pub rel_err: f64,
    pub checked: usize,
    pub bp_norm: f64,
}

/// Compare backprop gradients of the total alignment loss with central
/// finite differences on `n` randomly chosen parameters.
pub fn alignment_grad_check(model: &TokenModel, batch: &[AlignSample], mode: QuantMode, n: usize, rng: &mut ChaCha8Rng) -> GradCheck {
    let (_, grads) = model.alignment_grads(batch, mode).unwrap();
    let bp = grads.flatten();
    let base = model.params_flat();
    // only the alignment networks receive gradients from these losses
    let live = model.enc_r.param_count() + model.enc_h.param_count() + model.enc_m.param_count() + model.dec_motion.param_count();
    let h = 1e-6;
    let mut probe = model.clone();
    let (mut num, mut den_bp, mut den_fd) = (0.0, 0.0, 0.0);
    let mut checked = 0;
    for k in 0..n {
        // a few probes go to parameters that must have exactly zero gradient
        let i = if k % 10 == 9 { rng.gen_range(live..base.len()) } else { rng.gen_range(0..live) };
        let mut p = base.clone();
        p[i] += h;
        probe.set_params_flat(&p);
        let up = probe.alignment_losses(batch, mode).unwrap().total;
        p[i] -= 2.0 * h;
        probe.set_params_flat(&p);
        let down = probe.alignment_losses(batch, mode).unwrap().total;
        let fd = (up - down) / (2.0 * h);
        num += (fd - bp[i]).powi(2);
        den_bp += bp[i] * bp[i];
        den_fd += fd * fd;
        checked += 1;
    }
    let den = den_bp.sqrt().max(den_fd.sqrt());
    GradCheck { rel_err: if den == 0.0 { num.sqrt() } else { num.sqrt() / den }, checked, bp_norm: den_bp.sqrt() }
}

/// A random gradient-check point: fresh desk model, a few synchronized
/// samples, and a forward pass at least `margin` away from every rounding
/// boundary.
pub fn grad_point(seed: u64, margin: f64) -> (TokenModel, Vec<AlignSample>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clip = synth::wave_with_heading(desk(), 3.0, rng.gen_range(0.2..1.0), 0.3, rng.gen_range(-3.0..3.0), rng.gen_range(-0.5..0.5));
    let mut cfg = TokenConfig::for_skeleton(&clip.skeleton, NetProfile::Desk);
    cfg.fsq = FsqSpec { dims: 4, levels: 7 };
    let mut attempt = 0u64;
    loop {
        let model = TokenModel::new(cfg.clone(), seed * 1000 + attempt).unwrap();
        let times: Vec<f64> = (0..2).map(|_| (rng.gen_range(0..100) as f64) * 0.02).collect();
        let batch = synced_samples(&clip, &times).unwrap();
        if batch.iter().all(|s| model.boundary_margin(s) >= margin) {
            return (model, batch);
        }
        attempt += 1;
    }
}

/// k-step return from `t`: rewards until a terminal transition, then the
/// bootstrap value if the episode is still alive after k steps.
pub fn k_step_return(r: &[f64], v: &[f64], dones: &[bool], gamma: f64, t: usize, k: usize) -> f64 {
    let mut g = 0.0;
    let mut disc = 1.0;
    for i in 0..k {
        g += disc * r[t + i];
        if dones[t + i] {
            return g;
        }
        disc *= gamma;
    }
    g + disc * v[t + k]
}

/// Advantages as the λ-weighted mixture of k-step returns minus the value,
/// with the residual weight on the longest available return.
pub fn lambda_return_advantages(r: &[f64], v: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = r.len();
    (0..n)
        .map(|t| {
            let h = n - t;
            let mut g = 0.0;
            for k in 1..h {
                g += (1.0 - lambda) * lambda.powi(k as i32 - 1) * k_step_return(r, v, dones, gamma, t, k);
            }
            g += lambda.powi(h as i32 - 1) * k_step_return(r, v, dones, gamma, t, h);
            g - v[t]
        })
        .collect()
}

/// Largest |gae - oracle| over every done mask of every length up to `max_len`.
pub fn gae_exhaustive_max_error(max_len: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for n in 1..=max_len {
        for mask in 0u32..(1 << n) {
            let dones: Vec<bool> = (0..n).map(|i| mask & (1 << i) != 0).collect();
            let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let v: Vec<f64> = (0..=n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let gamma = rng.gen_range(0.5..1.0);
            let lambda = rng.gen_range(0.0..=1.0);
            let (adv, ret) = humtrack::rl::gae(&r, &v, &dones, gamma, lambda).unwrap();
            let oracle = lambda_return_advantages(&r, &v, &dones, gamma, lambda);
            for t in 0..n {
                worst = worst.max((adv[t] - oracle[t]).abs());
                worst = worst.max((ret[t] - (oracle[t] + v[t])).abs());
            }
        }
    }
    worst
}

/// Largest |empirical - p| over bins after `draws` samples.
pub fn sampler_frequency_error(probs: &[f64], draws: usize, seed: u64) -> f64 {
    use humtrack::rl::{AdaptiveSampler, SamplerConfig};
    let durations = vec![1.0; probs.len()];
    let mut s = AdaptiveSampler::new(SamplerConfig::default(), &durations).unwrap();
    s.probs = probs.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; probs.len()];
    for _ in 0..draws {
        counts[s.sample_start(&mut rng).0] += 1;
    }
    counts
        .iter()
        .zip(probs)
        .map(|(c, p)| (*c as f64 / draws as f64 - p).abs())
        .fold(0.0, f64::max)
}

/// `(x, x', x'')` of `(A + B t) e^{-ct/2}` with `A = xT - x0`,
/// `B = v0 + cA/2`, differentiated by hand.
pub fn spring_derivatives(x0: f64, xt: f64, v0: f64, c: f64, t: f64) -> (f64, f64, f64) {
    let a = xt - x0;
    let b = v0 + c * a / 2.0;
    let e = (-c * t / 2.0).exp();
    let u = a + b * t;
    (u * e, (b - c / 2.0 * u) * e, (-c * b + c * c / 4.0 * u) * e)
}

/// Largest `|x'' + c x' + c^2/4 x|` over `draws` random parameter sets,
/// using the planner's value and the hand derivatives.
pub fn spring_residual_max(draws: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..draws {
        let x0 = rng.gen_range(-5.0..5.0);
        let xt = rng.gen_range(-5.0..5.0);
        let v0 = rng.gen_range(-5.0..5.0);
        let c = rng.gen_range(0.5..20.0);
        let t = rng.gen_range(0.0..3.0);
        let (x, dx, ddx) = spring_derivatives(x0, xt, v0, c, t);
        let value = humtrack::planner::spring_gap(x0, xt, v0, c, t);
        worst = worst.max((value - x).abs());
        worst = worst.max((ddx + c * dx + c * c / 4.0 * x).abs());
    }
    worst
}

/// Cumulative finalize count via `1 - cos 2θ = 2 sin^2 θ`.
pub fn schedule_oracle(l: usize, l_max: usize, k: usize) -> usize {
    if l == l_max {
        return k;
    }
    let s = (std::f64::consts::PI * l as f64 / (4.0 * l_max as f64)).sin();
    ((2.0 * s * s * k as f64).ceil() as usize).min(k)
}

/// Number of `(K, L_max)` grid points where the schedule is non-monotone,
/// does not end at K, or disagrees with the oracle.
pub fn schedule_grid_failures(k_max: usize, l_max_max: usize) -> usize {
    let mut bad = 0;
    for k in 1..=k_max {
        for l_max in 1..=l_max_max {
            let counts = humtrack::planner::schedule_counts(l_max, k);
            let oracle: Vec<usize> = (1..=l_max).map(|l| schedule_oracle(l, l_max, k)).collect();
            if counts != oracle || counts.windows(2).any(|w| w[0] > w[1]) || counts[l_max - 1] != k {
                bad += 1;
            }
        }
    }
    bad
}

/// Oracle in-betweening of a ground-truth window of `clip`: returns the
/// largest feature error against the truth, whether the boundary frames
/// are exact, and the segment duration.
pub fn oracle_inbetween_check(clip: &humtrack::motion::MotionClip, start: usize, duration: f64, l_max: usize) -> (f64, bool, f64) {
    use humtrack::planner::codec::{canonical_frame, frame_features};
    use humtrack::planner::{inbetween, predictor::segment_from_frames, CodecSpec, OraclePredictor, Vocabulary};
    let codec = CodecSpec::default();
    let n = (duration * 50.0).round() as usize;
    let gt = &clip.frames[start..start + n];
    let mut vocab = Vocabulary::default();
    let seg = segment_from_frames(gt, &codec, &mut vocab, duration).unwrap();
    let oracle = OraclePredictor { vocab, truth: seg.tokens.clone(), duration };
    let out = inbetween(&gt[..4], &gt[n - 4..], &oracle, l_max, &codec, &clip.skeleton, true).unwrap();
    let hf = canonical_frame(&gt[0]);
    let mut worst: f64 = 0.0;
    for (a, b) in out.frames.iter().zip(gt) {
        let fa = frame_features(a, &hf);
        let fb = frame_features(b, &hf);
        worst = fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).fold(worst, f64::max);
    }
    let exact = (0..4).all(|i| {
        let same = |a: &humtrack::motion::PoseFrame, b: &humtrack::motion::PoseFrame| {
            a.root_pos == b.root_pos && a.root_rot == b.root_rot && a.joint_pos == b.joint_pos && a.links == b.links
        };
        same(&out.frames[i], &gt[i]) && same(&out.frames[n - 4 + i], &gt[n - 4 + i])
    });
    (worst, exact, out.duration)
}
