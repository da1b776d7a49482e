//! Procedural clips for tests, demos and the desk-scale training loops.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};

use super::rotation::yaw_quat;
use super::{MotionClip, SkeletonSpec, DEFAULT_FPS};

/// Root height that puts the lowest foot link on the ground plane.
pub fn grounded_root_height(skeleton: &SkeletonSpec, root_rot: &UnitQuaternion<f64>, joint_pos: &[f64]) -> f64 {
    if skeleton.feet.is_empty() {
        return 0.0;
    }
    let links = skeleton.forward_kinematics(&Vector3::zeros(), root_rot, joint_pos);
    let lowest = skeleton
        .feet
        .iter()
        .map(|&f| links[f].0.z)
        .fold(f64::INFINITY, f64::min);
    -lowest
}

/// Sample `pose(t) -> (x, y, yaw, joints)` at 50 Hz; the root height is grounded.
pub fn clip_from_fn(
    skeleton: Arc<SkeletonSpec>,
    name: &str,
    duration: f64,
    pose: impl Fn(f64) -> (f64, f64, f64, Vec<f64>),
) -> MotionClip {
    let n = (duration * DEFAULT_FPS).round() as usize + 1;
    let mut root_pos = Vec::with_capacity(n);
    let mut root_rot = Vec::with_capacity(n);
    let mut joints = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / DEFAULT_FPS;
        let (x, y, yaw, q) = pose(t);
        let rot = yaw_quat(yaw);
        let z = grounded_root_height(&skeleton, &rot, &q);
        root_pos.push(Vector3::new(x, y, z));
        root_rot.push(rot);
        joints.push(q);
    }
    MotionClip::from_kinematics(name, DEFAULT_FPS, skeleton, &root_pos, &root_rot, &joints)
        .expect("procedural clips are well formed")
}

/// Forward locomotion at `speed` m/s with every joint oscillating inside its
/// limits; `amplitude` is the fraction of each joint's half-range used (capped
/// at 0.4 rad).
pub fn wave(skeleton: Arc<SkeletonSpec>, duration: f64, speed: f64, amplitude: f64) -> MotionClip {
    wave_with_heading(skeleton, duration, speed, amplitude, 0.0, 0.0)
}

pub fn wave_with_heading(
    skeleton: Arc<SkeletonSpec>,
    duration: f64,
    speed: f64,
    amplitude: f64,
    heading: f64,
    turn_rate: f64,
) -> MotionClip {
    let sk = skeleton.clone();
    let omega = 2.0 * std::f64::consts::PI * 0.8;
    clip_from_fn(skeleton, "wave", duration, move |t| {
        let yaw = heading + turn_rate * t;
        let (x, y) = if turn_rate.abs() < 1e-12 {
            (speed * t * heading.cos(), speed * t * heading.sin())
        } else {
            let r = speed / turn_rate;
            (r * (yaw.sin() - heading.sin()), r * (heading.cos() - yaw.cos()))
        };
        let q = (0..sk.joint_count())
            .map(|j| {
                let [lo, hi] = sk.joint_limits[j];
                let mid = sk.default_pose[j].clamp(lo, hi);
                let half = ((hi - lo) / 2.0 * amplitude).min(0.4);
                let room = (mid - lo).min(hi - mid);
                let a = half.min(room.max(0.0)).min(0.4);
                mid + a * (omega * t + 0.7 * j as f64).sin()
            })
            .collect();
        (x, y, yaw, q)
    })
}

/// Desk-skeleton leg pose for a squat of `bend` radians: hip -bend,
/// knee +2 bend, ankle -bend keeps the feet flat and the torso upright.
pub fn desk_squat_pose(bend: f64) -> Vec<f64> {
    vec![-bend, 2.0 * bend, -bend, -bend, 2.0 * bend, -bend, 0.0]
}

/// Desk-skeleton clip that stands, squats down to `depth` radians of knee
/// half-bend and stands back up.
pub fn desk_squat(skeleton: Arc<SkeletonSpec>, duration: f64, depth: f64) -> MotionClip {
    clip_from_fn(skeleton, "squat", duration, move |t| {
        let s = (std::f64::consts::PI * t / duration).sin().powi(2);
        (0.0, 0.0, 0.0, desk_squat_pose(depth * s))
    })
}

/// Standing still at the default pose.
pub fn idle(skeleton: Arc<SkeletonSpec>, duration: f64) -> MotionClip {
    let q = skeleton.default_pose.clone();
    clip_from_fn(skeleton, "idle", duration, move |_| (0.0, 0.0, 0.0, q.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feet_stay_on_ground() {
        let sk = Arc::new(SkeletonSpec::desk_7dof());
        let clip = wave(sk.clone(), 2.0, 0.5, 0.3);
        for f in &clip.frames {
            let lowest = sk.feet.iter().map(|&i| f.links[i].pos.z).fold(f64::INFINITY, f64::min);
            assert!(lowest.abs() < 1e-12);
        }
    }

    #[test]
    fn squat_lowers_pelvis() {
        let sk = Arc::new(SkeletonSpec::desk_7dof());
        let clip = desk_squat(sk, 2.0, 0.9);
        let z0 = clip.frames[0].root_pos.z;
        let zmid = clip.frames[50].root_pos.z;
        assert!((z0 - 0.75).abs() < 1e-12);
        assert!(z0 - zmid > 0.25, "squat depth {}", z0 - zmid);
    }

    #[test]
    fn turning_wave_is_smooth() {
        let sk = Arc::new(SkeletonSpec::g1_29dof());
        let clip = wave_with_heading(sk, 1.0, 1.0, 0.2, 0.3, 0.5);
        assert_eq!(clip.len(), 51);
        let v = clip.frames[10].root_lin_vel;
        assert!((v.xy().norm() - 1.0).abs() < 0.02);
    }
}
