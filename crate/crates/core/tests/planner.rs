mod common;

use std::f64::consts::LN_2;
use std::sync::Arc;

use common::{desk, oracle_inbetween_check, schedule_grid_failures, spring_residual_max};
use humtrack::motion::rotation::heading_of;
use humtrack::motion::{synth, MotionClip, PoseFrame};
use humtrack::planner::codec::{canonical_frame, frame_features};
use humtrack::planner::spring::half_life;
use humtrack::planner::{
    context_from, inbetween, spring_gap, CodecSpec, MotionLibrary, OraclePredictor, PlanCommand, PlanError, PlanRequest, Planner,
    PlannerConfig, TokenPredictor, Vocabulary, DURATIONS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn spring_satisfies_critically_damped_ode() {
    assert!(spring_residual_max(1000, 11) < 1e-9);
}

#[test]
fn spring_half_lives() {
    for (c, want) in [(5.0 * LN_2, 0.4), (20.0 * LN_2, 0.1)] {
        let h = half_life(c);
        assert!((h - want).abs() < 1e-9);
        for t in [0.0, 0.3, 1.7] {
            // with v0 chosen to cancel the linear term the decay is a pure exponential
            let ratio = spring_gap(0.0, 1.0, -c / 2.0, c, t + h) / spring_gap(0.0, 1.0, -c / 2.0, c, t);
            assert!((ratio - 0.5).abs() < 1e-9);
        }
    }
}

#[test]
fn schedule_grid_is_exhaustive_and_monotone() {
    assert_eq!(schedule_grid_failures(64, 16), 0);
}

#[test]
fn codec_round_trip_on_smooth_motion() {
    let sk = desk();
    let codec = CodecSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let clip = synth::wave_with_heading(sk.clone(), 4.78, rng.gen_range(0.0..2.0), rng.gen_range(0.1..0.5), rng.gen_range(-3.0..3.0), rng.gen_range(-0.5..0.5));
        assert_eq!(clip.len(), 240);
        let hf = canonical_frame(&clip.frames[0]);
        let feats: Vec<Vec<f64>> = clip.frames.iter().map(|f| frame_features(f, &hf)).collect();
        let tokens = codec.encode(&feats).unwrap();
        assert_eq!(tokens.len(), 60);
        let back = codec.decode(&tokens);
        let err = back.iter().flatten().zip(feats.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < codec.tolerance, "{err}");
    }
}

#[test]
fn oracle_inbetween_reconstructs_ground_truth() {
    let clip = synth::wave_with_heading(desk(), 5.0, 0.8, 0.3, 0.7, 0.2);
    for (start, d, l_max) in [(0, 0.8, 1), (13, 1.6, 8), (40, 2.4, 5), (101, 1.2, 3)] {
        let (err, exact, dur) = oracle_inbetween_check(&clip, start, d, l_max);
        assert!(exact);
        assert_eq!(dur, d);
        assert!(err < CodecSpec::default().tolerance, "{err}");
    }
}

fn window(clip: &MotionClip, start: usize, n: usize) -> (Vec<PoseFrame>, Vec<PoseFrame>, OraclePredictor) {
    let codec = CodecSpec::default();
    let mut vocab = Vocabulary::default();
    let gt = &clip.frames[start..start + n];
    let seg = humtrack::planner::predictor::segment_from_frames(gt, &codec, &mut vocab, n as f64 / 50.0).unwrap();
    // spare entries so argmax has competition
    vocab.insert(&vec![0; gt[0].joint_pos.len() + 9]);
    (gt[..4].to_vec(), gt[n - 4..].to_vec(), OraclePredictor { vocab, truth: seg.tokens, duration: n as f64 / 50.0 })
}

#[test]
fn single_pass_finalizes_everything() {
    let clip = synth::wave(desk(), 2.0, 0.5, 0.3);
    let (c, t, o) = window(&clip, 0, 60);
    let out = inbetween(&c, &t, &o, 1, &CodecSpec::default(), &clip.skeleton, true).unwrap();
    assert_eq!(out.finalized.len(), 1);
    assert_eq!(out.finalized[0].len(), 15);
    let counts: Vec<usize> = out.finalized.iter().map(Vec::len).collect();
    let out8 = inbetween(&c, &t, &o, 8, &CodecSpec::default(), &clip.skeleton, true).unwrap();
    let steps: Vec<usize> = out8.finalized.iter().map(Vec::len).collect();
    assert_eq!(steps.iter().sum::<usize>(), 15);
    assert_eq!(counts, vec![15]);
    assert_eq!(out.tokens, out8.tokens);
}

/// Scrambles the rows of already-finalized positions.
struct Scrambler<'a> {
    inner: &'a OraclePredictor,
    seed: std::sync::atomic::AtomicU64,
}

impl TokenPredictor for Scrambler<'_> {
    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }
    fn predict(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError> {
        let mut rows = self.inner.predict(ctx, tgt, partial)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.fetch_add(1, std::sync::atomic::Ordering::Relaxed));
        for (row, p) in rows.iter_mut().zip(partial) {
            if p.is_some() {
                row.iter_mut().for_each(|x| *x = rng.gen_range(-50.0..50.0));
            }
        }
        Ok(rows)
    }
    fn duration(&self, ctx: &[Vec<f64>], tgt: &[Vec<f64>]) -> f64 {
        self.inner.duration(ctx, tgt)
    }
}

#[test]
fn finalized_positions_are_never_repredicted() {
    let clip = synth::wave(desk(), 3.0, 0.5, 0.3);
    let (c, t, o) = window(&clip, 10, 100);
    let plain = inbetween(&c, &t, &o, 6, &CodecSpec::default(), &clip.skeleton, true).unwrap();
    let s = Scrambler { inner: &o, seed: 0.into() };
    let scrambled = inbetween(&c, &t, &s, 6, &CodecSpec::default(), &clip.skeleton, true).unwrap();
    assert_eq!(plain, scrambled);
}

struct Broken(Vocabulary);

impl TokenPredictor for Broken {
    fn vocab(&self) -> &Vocabulary {
        &self.0
    }
    fn predict(&self, _: &[Vec<f64>], _: &[Vec<f64>], partial: &[Option<usize>]) -> Result<Vec<Vec<f64>>, PlanError> {
        Ok(vec![vec![f64::NAN; self.0.len()]; partial.len()])
    }
}

#[test]
fn non_finite_logits_are_rejected() {
    let clip = synth::wave(desk(), 2.0, 0.5, 0.3);
    let (c, t, o) = window(&clip, 0, 40);
    let err = inbetween(&c, &t, &Broken(o.vocab.clone()), 4, &CodecSpec::default(), &clip.skeleton, true).unwrap_err();
    assert!(matches!(err, PlanError::NonFiniteLogits));
}

fn planner() -> Planner {
    let sk = desk();
    let mut lib = MotionLibrary::default();
    lib.add_style("walk", synth::wave(sk.clone(), 6.0, 1.0, 0.3));
    lib.add_style("walk", synth::wave(sk.clone(), 6.0, 0.5, 0.2));
    lib.add_style("stand", synth::idle(sk.clone(), 4.0));
    lib.add_skill("squat", &synth::desk_squat(sk.clone(), 3.0, 0.7), 3);
    Planner::with_retrieval(PlannerConfig::default(), sk, lib, 0).unwrap()
}

fn standing_context(sk: &Arc<humtrack::motion::SkeletonSpec>) -> Vec<PoseFrame> {
    synth::idle(sk.clone(), 0.2).frames[..4].to_vec()
}

#[test]
fn navigation_plan_lands_on_spring_target() {
    let p = planner();
    let ctx = standing_context(&p.skeleton);
    let req = PlanRequest { context: ctx.clone(), command: PlanCommand::Navigate { velocity: 1.0, direction_deg: 30.0, style: "walk".into() }, seq: 7 };
    let seg = p.plan(&req, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    assert_eq!(seg.seq, 7);
    assert!(DURATIONS.contains(&seg.duration));
    assert_eq!(seg.clip.len() % 4, 0);
    assert_eq!(seg.tokens.len(), seg.clip.len() / 4);
    let first_target = &seg.clip.frames[seg.clip.len() - 4];
    assert!((first_target.root_pos.x - seg.target.pos[0]).abs() < 1e-9);
    assert!((first_target.root_pos.y - seg.target.pos[1]).abs() < 1e-9);
    assert!((heading_of(&first_target.root_rot) - seg.target.heading).abs() < 1e-9);
    for i in 0..4 {
        assert_eq!(seg.clip.frames[i].joint_pos, ctx[i].joint_pos);
        assert_eq!(seg.clip.frames[i].root_pos, ctx[i].root_pos);
    }
}

#[test]
fn durations_stay_in_range_and_motion_is_continuous() {
    let p = planner();
    let ctx = standing_context(&p.skeleton);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..12 {
        let cmd = PlanCommand::Navigate { velocity: rng.gen_range(0.0..6.0), direction_deg: rng.gen_range(0.0..360.0), style: "walk".into() };
        let seg = p.plan(&PlanRequest { context: ctx.clone(), command: cmd, seq: 0 }, &mut rng).unwrap();
        assert!((0.8..=2.4).contains(&seg.duration));
        assert!(seg.max_joint_step() <= p.config.continuity_budget, "{}", seg.max_joint_step());
    }
}

#[test]
fn envelope_clamping_is_flagged() {
    let p = planner();
    let ctx = standing_context(&p.skeleton);
    let req = PlanRequest { context: ctx, command: PlanCommand::Navigate { velocity: 9.0, direction_deg: 370.0, style: "walk".into() }, seq: 1 };
    let seg = p.plan(&req, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(seg.clamped);
    let (c, w) = req.command.clamped();
    assert!(w);
    assert_eq!(c, PlanCommand::Navigate { velocity: 6.0, direction_deg: 10.0, style: "walk".into() });
}

#[test]
fn skill_plan_uses_nearest_height() {
    let p = planner();
    let ctx = standing_context(&p.skeleton);
    let cmd = PlanCommand::Skill { skill: "squat".into(), height: 0.55, velocity: 0.0, direction_deg: 0.0 };
    let seg = p.plan(&PlanRequest { context: ctx, command: cmd, seq: 2 }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let z = seg.clip.frames[seg.clip.len() - 4].root_pos.z;
    let best = p.library.skills["squat"].iter().map(|k| k.height).min_by(|a, b| (a - 0.55).abs().total_cmp(&(b - 0.55).abs())).unwrap();
    assert_eq!(z, best);
    assert!(p.plan(&PlanRequest { context: standing_context(&p.skeleton), command: PlanCommand::Skill { skill: "box".into(), height: 0.5, velocity: 0.0, direction_deg: 0.0 }, seq: 3 }, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn layer_mode_holds_upper_body() {
    let p = planner();
    let ctx = standing_context(&p.skeleton);
    let cmd = PlanCommand::Layer { velocity: 0.8, direction_deg: 0.0, style: "walk".into(), upper_body: vec![0.4] };
    let seg = p.plan(&PlanRequest { context: ctx, command: cmd, seq: 4 }, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let n = seg.clip.len();
    assert!(seg.clip.frames[4..n - 4].iter().all(|f| f.joint_pos[6] == 0.4));
}

#[test]
fn replanning_chains_on_realized_frames() {
    let p = planner();
    let mut realized = standing_context(&p.skeleton);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in 0..4 {
        let context = context_from(&realized).unwrap();
        let cmd = PlanCommand::Navigate { velocity: 1.0, direction_deg: 90.0 * n as f64, style: "walk".into() };
        let seg = p.plan(&PlanRequest { context: context.clone(), command: cmd, seq: n }, &mut rng).unwrap();
        for i in 0..4 {
            assert_eq!(seg.clip.frames[i].joint_pos, context[i].joint_pos);
            assert_eq!(seg.clip.frames[i].root_pos, context[i].root_pos);
            assert_eq!(seg.clip.frames[i].root_rot, context[i].root_rot);
        }
        // execute five replanning periods worth of frames before the next plan
        realized.extend(seg.clip.frames[4..4 + 5].iter().cloned());
    }
}
