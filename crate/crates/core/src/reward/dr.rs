use nalgebra::{UnitQuaternion, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::RewardError;
use crate::motion::command::{CommandWindow, Keypoint};
use crate::motion::rotation::{quat_from_6d, quat_to_6d, Rot6};
use crate::motion::MotionCommand;

/// Closed uniform range `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn sym(half: f64) -> Self {
        Self { lo: -half, hi: half }
    }

    pub const ZERO: Range = Range { lo: 0.0, hi: 0.0 };

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.gen_range(self.lo..=self.hi)
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }
}

fn sample3<R: Rng + ?Sized>(r: &[Range; 3], rng: &mut R) -> Vector3<f64> {
    Vector3::new(r[0].sample(rng), r[1].sample(rng), r[2].sample(rng))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrConfig {
    pub static_friction: Range,
    pub dynamic_friction: Range,
    pub restitution: Range,
    /// Additive offset on every default joint position, rad.
    pub default_joint: Range,
    /// Base center-of-mass offset per axis, m.
    pub com_offset: [Range; 3],
    /// Root linear velocity impulse per axis, m/s.
    pub push_lin_vel: [Range; 3],
    /// Root angular velocity impulse (roll, pitch, yaw), rad/s.
    pub push_ang_vel: [Range; 3],
    pub push_duration: Range,
    /// Idle time between the end of one push and the start of the next, s.
    pub push_gap: Range,
    pub target_pos: [Range; 3],
    /// Target orientation jitter (roll, pitch, yaw), rad.
    pub target_rot: [Range; 3],
    pub target_lin_vel: [Range; 3],
    pub target_ang_vel: [Range; 3],
    pub target_joint: Range,
}

impl Default for DrConfig {
    fn default() -> Self {
        Self {
            static_friction: Range::new(0.3, 1.6),
            dynamic_friction: Range::new(0.3, 1.2),
            restitution: Range::new(0.0, 0.5),
            default_joint: Range::sym(0.01),
            com_offset: [Range::sym(0.075), Range::sym(0.1), Range::sym(0.1)],
            push_lin_vel: [Range::sym(0.5), Range::sym(0.5), Range::sym(0.2)],
            push_ang_vel: [Range::sym(0.52), Range::sym(0.52), Range::sym(0.78)],
            push_duration: Range::new(1.0, 3.0),
            push_gap: Range::new(2.0, 5.0),
            target_pos: [Range::sym(0.05), Range::sym(0.05), Range::sym(0.01)],
            target_rot: [Range::sym(0.1), Range::sym(0.1), Range::sym(0.2)],
            target_lin_vel: [Range::sym(0.5), Range::sym(0.5), Range::sym(0.2)],
            target_ang_vel: [Range::sym(0.52), Range::sym(0.52), Range::sym(0.78)],
            target_joint: Range::sym(0.1),
        }
    }
}

impl DrConfig {
    /// Nominal physics, no pushes and no target jitter.
    pub fn disabled() -> Self {
        let z3 = [Range::ZERO; 3];
        Self {
            static_friction: Range::new(1.0, 1.0),
            dynamic_friction: Range::new(0.8, 0.8),
            restitution: Range::ZERO,
            default_joint: Range::ZERO,
            com_offset: z3,
            push_lin_vel: z3,
            push_ang_vel: z3,
            push_duration: Range::new(1.0, 1.0),
            push_gap: Range::new(1e9, 1e9),
            target_pos: z3,
            target_rot: z3,
            target_lin_vel: z3,
            target_ang_vel: z3,
            target_joint: Range::ZERO,
        }
    }

    fn ranges(&self) -> Vec<(String, Range)> {
        let mut v = vec![
            ("static_friction".to_string(), self.static_friction),
            ("dynamic_friction".into(), self.dynamic_friction),
            ("restitution".into(), self.restitution),
            ("default_joint".into(), self.default_joint),
            ("push_duration".into(), self.push_duration),
            ("push_gap".into(), self.push_gap),
            ("target_joint".into(), self.target_joint),
        ];
        for (name, r) in [
            ("com_offset", &self.com_offset),
            ("push_lin_vel", &self.push_lin_vel),
            ("push_ang_vel", &self.push_ang_vel),
            ("target_pos", &self.target_pos),
            ("target_rot", &self.target_rot),
            ("target_lin_vel", &self.target_lin_vel),
            ("target_ang_vel", &self.target_ang_vel),
        ] {
            for (i, x) in r.iter().enumerate() {
                v.push((format!("{name}[{i}]"), *x));
            }
        }
        v
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        for (name, r) in self.ranges() {
            if !(r.lo <= r.hi) || !r.lo.is_finite() || !r.hi.is_finite() {
                return Err(RewardError::InvalidRange { name, lo: r.lo, hi: r.hi });
            }
        }
        if self.push_duration.lo < 0.0 || self.push_gap.lo < 0.0 {
            return Err(RewardError::InvalidRange {
                name: "push timing".into(),
                lo: self.push_duration.lo.min(self.push_gap.lo),
                hi: 0.0,
            });
        }
        Ok(())
    }
}

/// Per-episode physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrSample {
    pub static_friction: f64,
    pub dynamic_friction: f64,
    pub restitution: f64,
    pub default_joint_offset: Vec<f64>,
    pub com_offset: Vector3<f64>,
}

pub fn sample_dr<R: Rng + ?Sized>(cfg: &DrConfig, joints: usize, rng: &mut R) -> DrSample {
    DrSample {
        static_friction: cfg.static_friction.sample(rng),
        dynamic_friction: cfg.dynamic_friction.sample(rng),
        restitution: cfg.restitution.sample(rng),
        default_joint_offset: (0..joints).map(|_| cfg.default_joint.sample(rng)).collect(),
        com_offset: sample3(&cfg.com_offset, rng),
    }
}

/// Root-velocity perturbation, applied as an additive impulse at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushEvent {
    pub start: f64,
    pub duration: f64,
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
}

impl PushEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

/// Non-overlapping pushes covering `[0, episode_length)`. Each push is
/// preceded by an idle gap drawn from `push_gap`.
pub fn push_schedule<R: Rng + ?Sized>(cfg: &DrConfig, episode_length: f64, rng: &mut R) -> Vec<PushEvent> {
    let mut events = Vec::new();
    let mut t = 0.0;
    loop {
        t += cfg.push_gap.sample(rng);
        if t >= episode_length {
            break;
        }
        let e = PushEvent {
            start: t,
            duration: cfg.push_duration.sample(rng),
            lin_vel: sample3(&cfg.push_lin_vel, rng),
            ang_vel: sample3(&cfg.push_ang_vel, rng),
        };
        t = e.end();
        events.push(e);
    }
    events
}

fn jitter_rot6<R: Rng + ?Sized>(rot: &Rot6, cfg: &DrConfig, rng: &mut R) -> Rot6 {
    let (r, p, y) = (cfg.target_rot[0].sample(rng), cfg.target_rot[1].sample(rng), cfg.target_rot[2].sample(rng));
    // target rotations come from valid quaternions, so the 6D decode cannot fail
    let q = quat_from_6d(rot).unwrap_or_else(|_| UnitQuaternion::identity());
    quat_to_6d(&(UnitQuaternion::from_euler_angles(r, p, y) * q))
}

fn jitter_joints<R: Rng + ?Sized>(q: &mut [f64], cfg: &DrConfig, rng: &mut R) {
    for x in q {
        *x += cfg.target_joint.sample(rng);
    }
}

fn jitter_keypoint<R: Rng + ?Sized>(k: &Keypoint, cfg: &DrConfig, rng: &mut R) -> Keypoint {
    Keypoint { pos: k.pos + sample3(&cfg.target_pos, rng), rot6d: jitter_rot6(&k.rot6d, cfg, rng) }
}

/// Independently jitter every frame of a command window. Human joint sets get
/// one translation per frame; root-relative link positions are left as is.
pub fn perturb_target<R: Rng + ?Sized>(cmd: &MotionCommand, cfg: &DrConfig, rng: &mut R) -> MotionCommand {
    let mut out = cmd.clone();
    match &mut out.window {
        CommandWindow::Robot(frames) => {
            for f in frames {
                f.root_pos += sample3(&cfg.target_pos, rng);
                f.root_rot6d = jitter_rot6(&f.root_rot6d, cfg, rng);
                f.root_lin_vel += sample3(&cfg.target_lin_vel, rng);
                f.root_ang_vel += sample3(&cfg.target_ang_vel, rng);
                jitter_joints(&mut f.joint_pos, cfg, rng);
            }
        }
        CommandWindow::Human(frames) => {
            for f in frames {
                let d = sample3(&cfg.target_pos, rng);
                f.joints.iter_mut().for_each(|p| *p += d);
            }
        }
        CommandWindow::Hybrid(h) => {
            h.head = jitter_keypoint(&h.head, cfg, rng);
            h.left_wrist = jitter_keypoint(&h.left_wrist, cfg, rng);
            h.right_wrist = jitter_keypoint(&h.right_wrist, cfg, rng);
            for f in &mut h.lower {
                f.root_pos += sample3(&cfg.target_pos, rng);
                f.root_rot6d = jitter_rot6(&f.root_rot6d, cfg, rng);
                jitter_joints(&mut f.joint_pos, cfg, rng);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{slice_command, synth, CommandKind, SkeletonSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn static_friction_moments() {
        let cfg = DrConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 1_000_000;
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for _ in 0..n {
            let x = cfg.static_friction.sample(&mut rng);
            lo = lo.min(x);
            hi = hi.max(x);
            sum += x;
        }
        assert!(lo >= 0.3 && hi <= 1.6);
        assert!((sum / n as f64 - 0.95).abs() < 0.01);
    }

    #[test]
    fn all_samples_in_range() {
        let cfg = DrConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100_000 {
            let s = sample_dr(&cfg, 29, &mut rng);
            assert!(cfg.static_friction.contains(s.static_friction));
            assert!(cfg.dynamic_friction.contains(s.dynamic_friction));
            assert!(cfg.restitution.contains(s.restitution));
            assert!(s.default_joint_offset.iter().all(|x| cfg.default_joint.contains(*x)));
            for i in 0..3 {
                assert!(cfg.com_offset[i].contains(s.com_offset[i]));
            }
        }
    }

    #[test]
    fn zero_width_is_constant() {
        let cfg = DrConfig::disabled();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = sample_dr(&cfg, 7, &mut rng);
        let b = sample_dr(&cfg, 7, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a.static_friction, 1.0);
        assert!(push_schedule(&cfg, 100.0, &mut rng).is_empty());
    }

    #[test]
    fn same_seed_same_stream() {
        let cfg = DrConfig::default();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            ((0..10).map(|_| sample_dr(&cfg, 7, &mut rng)).collect::<Vec<_>>(), push_schedule(&cfg, 30.0, &mut rng))
        };
        assert_eq!(run(11), run(11));
        assert_ne!(run(11), run(12));
    }

    #[test]
    fn pushes_in_range_and_disjoint() {
        let cfg = DrConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut count = 0;
        while count < 100_000 {
            let events = push_schedule(&cfg, 60.0, &mut rng);
            for w in events.windows(2) {
                assert!(w[0].end() <= w[1].start);
            }
            for e in &events {
                assert!(e.start >= 0.0 && e.start < 60.0);
                assert!(cfg.push_duration.contains(e.duration));
                for i in 0..3 {
                    assert!(cfg.push_lin_vel[i].contains(e.lin_vel[i]));
                    assert!(cfg.push_ang_vel[i].contains(e.ang_vel[i]));
                }
            }
            count += events.len();
        }
    }

    #[test]
    fn validate_rejects_inverted_range() {
        let mut cfg = DrConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.com_offset[1] = Range::new(0.2, -0.2);
        assert!(matches!(cfg.validate(), Err(RewardError::InvalidRange { .. })));
    }

    #[test]
    fn target_jitter_respects_axis_bounds() {
        let sk = Arc::new(SkeletonSpec::desk_7dof());
        let clip = synth::wave_with_heading(sk, 3.0, 0.8, 0.3, 0.4, 0.3);
        let cmd = slice_command(&clip, 0.5, CommandKind::Robot).unwrap();
        let cfg = DrConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = cmd.robot_frames().unwrap();
        for _ in 0..2000 {
            let p = perturb_target(&cmd, &cfg, &mut rng);
            for (a, b) in p.robot_frames().unwrap().iter().zip(base) {
                let d = a.root_pos - b.root_pos;
                assert!(d.x.abs() <= 0.05 && d.y.abs() <= 0.05 && d.z.abs() <= 0.01);
                let dv = a.root_lin_vel - b.root_lin_vel;
                assert!(dv.x.abs() <= 0.5 && dv.z.abs() <= 0.2);
                let dw = a.root_ang_vel - b.root_ang_vel;
                assert!(dw.x.abs() <= 0.52 && dw.z.abs() <= 0.78);
                let qa = quat_from_6d(&a.root_rot6d).unwrap();
                let qb = quat_from_6d(&b.root_rot6d).unwrap();
                let (r, pch, y) = (qa * qb.inverse()).euler_angles();
                assert!(r.abs() <= 0.1 + 1e-9 && pch.abs() <= 0.1 + 1e-9 && y.abs() <= 0.2 + 1e-9);
                for (x, y) in a.joint_pos.iter().zip(&b.joint_pos) {
                    assert!((x - y).abs() <= 0.1 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn disabled_jitter_is_identity_for_all_kinds() {
        let sk = Arc::new(SkeletonSpec::desk_7dof());
        let clip = synth::wave(sk, 2.0, 0.5, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for kind in CommandKind::ALL {
            let cmd = slice_command(&clip, 0.2, kind).unwrap();
            let p = perturb_target(&cmd, &DrConfig::disabled(), &mut rng);
            let (a, b) = (p.flatten(), cmd.flatten());
            assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12), "{kind:?}");
        }
    }
}
