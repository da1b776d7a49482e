use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::codec::{canonical_frame, frame_features, CodecSpec, Vocabulary, STRIDE};
use super::PlanError;
use crate::motion::{MotionClip, DEFAULT_FPS};
use crate::token::nn::{clip_grad_norm, Activation, Adam, Mlp};

/// Segment durations the planner may choose, in seconds.
pub const DURATIONS: [f64; 5] = [0.8, 1.2, 1.6, 2.0, 2.4];

/// Frames in a segment of `duration` seconds at 50 Hz.
pub fn segment_frames(duration: f64) -> usize {
    (duration * DEFAULT_FPS).round() as usize
}

/// Masked token prediction over a fixed vocabulary.
///
/// `ctx` and `tgt` hold the 4 context and 4 target keyframes as planner
/// features in the segment frame; `partial[i]` is `Some(id)` for finalized
/// positions. Returns one logit row of width `vocab().len()` per position.
pub trait TokenPredictor: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn predict(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError>;

    fn duration(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
        heuristic_duration(ctx, tgt, &DURATIONS)
    }
}

/// Shortest allowed duration that covers the root travel at 1.5 m/s, the
/// heading change at 3 rad/s and the largest joint change at 2 rad/s.
pub fn heuristic_duration(ctx: &[Vec<f64>], tgt: &[Vec<f64>], allowed: &[f64]) -> f64 {
    let a = &ctx[ctx.len() - 1];
    let b = &tgt[0];
    let dist = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let yaw = |f: &[f64]| f[4].atan2(f[3]);
    let turn = crate::motion::rotation::wrap_angle(yaw(b) - yaw(a)).abs();
    let joints = a[9..].iter().zip(&b[9..]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let need = (dist / 1.5).max(turn / 3.0).max(joints / 2.0);
    allowed.iter().copied().find(|d| *d >= need).unwrap_or_else(|| allowed.iter().copied().fold(f64::MIN, f64::max))
}

/// A library segment in its own canonical frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibrarySegment {
    pub ctx: Vec<Vec<f64>>,
    pub tgt: Vec<Vec<f64>>,
    pub tokens: Vec<usize>,
    pub duration: f64,
}

/// Cut every clip into segments of each allowed duration, starting every
/// `hop` frames. Each clip is first turned by a random yaw, which the
/// canonical frame removes again.
pub fn build_segments(clips: &[MotionClip], codec: &CodecSpec, hop: usize, vocab: &mut Vocabulary, seed: u64) -> Result<Vec<LibrarySegment>, PlanError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for clip in clips {
        let yaw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        let clip = clip.transformed(yaw, &nalgebra::Vector3::zeros());
        for &d in &DURATIONS {
            let t = segment_frames(d);
            if clip.len() < t {
                continue;
            }
            for s in (0..=clip.len() - t).step_by(hop.max(1)) {
                out.push(segment_from_frames(&clip.frames[s..s + t], codec, vocab, d)?);
            }
        }
    }
    Ok(out)
}

/// Encode a ground-truth segment, adding its tokens to `vocab`.
pub fn segment_from_frames(frames: &[crate::motion::PoseFrame], codec: &CodecSpec, vocab: &mut Vocabulary, duration: f64) -> Result<LibrarySegment, PlanError> {
    let hf = canonical_frame(&frames[0]);
    let feats: Vec<Vec<f64>> = frames.iter().map(|f| frame_features(f, &hf)).collect();
    let tokens = codec.encode(&feats)?.iter().map(|t| vocab.insert(t)).collect();
    let n = feats.len();
    Ok(LibrarySegment { ctx: feats[..STRIDE].to_vec(), tgt: feats[n - STRIDE..].to_vec(), tokens, duration })
}

fn finite(logits: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, PlanError> {
    if logits.iter().flatten().all(|x| x.is_finite()) {
        Ok(logits)
    } else {
        Err(PlanError::NonFiniteLogits)
    }
}

/// Knows the true tokens of one segment. Confidence differs per position so
/// the finalization order is exercised.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub vocab: Vocabulary,
    pub truth: Vec<usize>,
    pub duration: f64,
}

impl TokenPredictor for OraclePredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict(&self, _ctx: &[Vec<f64>], _tgt: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError> {
        let k = partial.len();
        Ok((0..k)
            .map(|i| {
                let mut row = vec![0.0; self.vocab.len()];
                row[self.truth[i]] = 5.0 + ((i * 7919) % k) as f64 / k as f64;
                row
            })
            .collect())
    }

    fn duration(&self, _ctx: &[Vec<f64>], _tgt: &[Vec<f64>]) -> f64 {
        self.duration
    }
}

/// Soft nearest-neighbour retrieval over library segments of the requested
/// length. Logits are log posterior token frequencies with segment weights
/// `exp(-d / temperature)`, where `d` is the squared keyframe distance plus a
/// penalty per disagreement with finalized tokens.
#[derive(Debug, Clone)]
pub struct RetrievalPredictor {
    pub vocab: Vocabulary,
    pub segments: Vec<LibrarySegment>,
    pub temperature: f64,
    pub mismatch_penalty: f64,
}

impl RetrievalPredictor {
    pub fn new(vocab: Vocabulary, segments: Vec<LibrarySegment>) -> Self {
        Self { vocab, segments, temperature: 0.05, mismatch_penalty: 1.0 }
    }

    pub fn from_clips(clips: &[MotionClip], codec: &CodecSpec, hop: usize, seed: u64) -> Result<Self, PlanError> {
        let mut vocab = Vocabulary::default();
        let segments = build_segments(clips, codec, hop, &mut vocab, seed)?;
        Ok(Self::new(vocab, segments))
    }

    fn distance(&self, s: &LibrarySegment, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>]) -> f64 {
        let sq = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
            a.iter().zip(b).flat_map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).powi(2))).sum()
        };
        let mismatches = partial.iter().zip(&s.tokens).filter(|(p, t)| matches!(p, Some(id) if id != *t)).count();
        sq(ctx, &s.ctx) + sq(tgt, &s.tgt) + self.mismatch_penalty * mismatches as f64
    }
}

impl TokenPredictor for RetrievalPredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError> {
        let k = partial.len();
        let cands: Vec<(&LibrarySegment, f64)> = self
            .segments
            .iter()
            .filter(|s| s.tokens.len() == k)
            .map(|s| (s, self.distance(s, ctx, tgt, partial)))
            .collect();
        if cands.is_empty() {
            return Err(PlanError::EmptyLibrary(format!("no segments with {k} tokens")));
        }
        let best = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = cands.iter().map(|c| (-(c.1 - best) / self.temperature).exp()).collect();
        let total: f64 = weights.iter().sum();
        let mut probs = vec![vec![0.0; self.vocab.len()]; k];
        for ((s, _), w) in cands.iter().zip(&weights) {
            for (i, &t) in s.tokens.iter().enumerate() {
                probs[i][t] += w / total;
            }
        }
        finite(probs.into_iter().map(|row| row.into_iter().map(|p| (p + 1e-12).ln()).collect()).collect())
    }

    fn duration(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
        let mut allowed: Vec<f64> = DURATIONS.iter().copied().filter(|d| self.segments.iter().any(|s| s.duration == *d)).collect();
        if allowed.is_empty() {
            allowed = DURATIONS.to_vec();
        }
        heuristic_duration(ctx, tgt, &allowed)
    }
}

/// Position-wise masked-token classifier. The input for position `i` is the
/// last context frame, the first target frame, the relative position, the
/// segment length and the embeddings of both neighbours; a neighbour that is
/// not finalized uses the learned mask embedding.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpPredictor {
    pub codec: CodecSpec,
    #[serde(skip)]
    pub vocab: Vocabulary,
    pub net: Mlp,
    pub mask: Vec<f64>,
    pub width: usize,
    /// Per-input standardization fitted on the training segments.
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
}

/// Per-epoch mean cross-entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorLogRow {
    pub epoch: usize,
    pub loss: f64,
}

impl MlpPredictor {
    pub fn new(vocab: Vocabulary, codec: CodecSpec, width: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(4 * width + 2, hidden, vocab.len(), Activation::Elu, 1.0, &mut rng);
        let n_in = 4 * width + 2;
        Self { codec, vocab, net, mask: vec![0.0; width], width, input_mean: vec![0.0; n_in], input_std: vec![1.0; n_in] }
    }

    fn embed(&self, slot: Option<usize>) -> Vec<f64> {
        match slot {
            Some(id) => self.codec.dequantize(&self.vocab.entries[id]),
            None => vec![0.0; self.width],
        }
    }

    /// Input row and, for each neighbour, whether it used the mask embedding.
    fn input(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>], i: usize) -> (Vec<f64>, [bool; 2]) {
        let k = partial.len();
        let left = if i == 0 { None } else { partial[i - 1] };
        let right = partial.get(i + 1).copied().flatten();
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(&ctx[ctx.len() - 1]);
        x.extend_from_slice(&tgt[0]);
        x.push(if k > 1 { i as f64 / (k - 1) as f64 } else { 0.0 });
        x.push(k as f64 / 30.0);
        x.extend(self.embed(left));
        x.extend(self.embed(right));
        for (v, (m, s)) in x.iter_mut().zip(self.input_mean.iter().zip(&self.input_std)) {
            *v = (*v - m) / s;
        }
        // the mask embedding lives in the standardized space
        let w = self.width;
        for (side, slot) in [left, right].iter().enumerate() {
            if slot.is_none() {
                let off = 2 * w + 2 + side * w;
                x[off..off + w].copy_from_slice(&self.mask);
            }
        }
        (x, [left.is_none(), right.is_none()])
    }

    /// Fit the input standardization on fully unmasked inputs of `segments`.
    pub fn fit_normalization(&mut self, segments: &[LibrarySegment]) {
        let n_in = self.net.input_dim();
        self.input_mean = vec![0.0; n_in];
        self.input_std = vec![1.0; n_in];
        let rows: Vec<Vec<f64>> = segments
            .iter()
            .flat_map(|s| {
                let partial: Vec<Option<usize>> = s.tokens.iter().map(|&t| Some(t)).collect();
                (0..partial.len()).map(move |i| (s, partial.clone(), i))
            })
            .map(|(s, p, i)| self.input(&s.ctx, &s.tgt, &p, i).0)
            .collect();
        if rows.is_empty() {
            return;
        }
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..n_in).map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n).collect();
        let std = (0..n_in)
            .map(|d| {
                let v = rows.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / n;
                v.sqrt().max(1e-3)
            })
            .collect();
        self.input_mean = mean;
        self.input_std = std;
    }

    /// Cross-entropy training on random maskings of the library segments.
    /// Fits the input standardization first.
    pub fn train(&mut self, segments: &[LibrarySegment], epochs: usize, lr: f64, seed: u64) -> Vec<PredictorLogRow> {
        self.fit_normalization(segments);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_net = self.net.param_count();
        let mut opt = Adam::new(n_net + self.width, lr);
        let mut log = Vec::with_capacity(epochs);
        let mut order: Vec<usize> = (0..segments.len()).collect();
        for epoch in 0..epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            let mut count = 0usize;
            for &si in &order {
                let s = &segments[si];
                let ratio: f64 = rng.gen_range(0.05..=1.0);
                let partial: Vec<Option<usize>> = s.tokens.iter().map(|&t| if rng.gen::<f64>() < ratio { None } else { Some(t) }).collect();
                let mut grads = vec![0.0; n_net + self.width];
                let mut terms = 0usize;
                for i in (0..partial.len()).filter(|&i| partial[i].is_none()) {
                    let (x, masked) = self.input(&s.ctx, &s.tgt, &partial, i);
                    let (logits, cache) = self.net.forward_cached(&x);
                    let p = softmax(&logits);
                    total -= p[s.tokens[i]].max(1e-300).ln();
                    let mut d = p;
                    d[s.tokens[i]] -= 1.0;
                    let dx = self.net.backward(&cache, &d, &mut grads[..n_net]);
                    let w = self.width;
                    for (side, used) in masked.iter().enumerate() {
                        if *used {
                            let off = 2 * w + 2 + side * w;
                            for j in 0..w {
                                grads[n_net + j] += dx[off + j];
                            }
                        }
                    }
                    terms += 1;
                }
                if terms == 0 {
                    continue;
                }
                count += terms;
                grads.iter_mut().for_each(|g| *g /= terms as f64);
                clip_grad_norm(&mut grads, 1.0);
                let mut params = self.net.params.clone();
                params.extend_from_slice(&self.mask);
                opt.step(&mut params, &grads);
                self.mask.copy_from_slice(&params[n_net..]);
                params.truncate(n_net);
                self.net.params = params;
            }
            log.push(PredictorLogRow { epoch, loss: total / count.max(1) as f64 });
        }
        log
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl TokenPredictor for MlpPredictor {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn predict(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError> {
        finite((0..partial.len()).map(|i| self.net.forward(&self.input(ctx, tgt, partial, i).0)).collect())
    }
}
