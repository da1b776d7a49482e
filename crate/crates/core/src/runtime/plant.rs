use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::motion::rotation::{heading_of, wrap_angle, yaw_quat};
use crate::motion::synth::grounded_root_height;
use crate::motion::{PoseFrame, SkeletonSpec};
use crate::reward::{ContactReport, DrSample, PushEvent};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    /// Time constant of the root's pursuit of its reference, seconds.
    pub root_lag: f64,
    pub gravity: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self { root_lag: 0.1, gravity: crate::motion::GRAVITY }
    }
}

/// Planar root reference the surrogate root chases.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RootTarget {
    pub pos: [f64; 2],
    pub yaw: f64,
}

impl RootTarget {
    pub fn of(frame: &PoseFrame) -> Self {
        Self { pos: [frame.root_pos.x, frame.root_pos.y], yaw: heading_of(&frame.root_rot) }
    }
}

/// Desk-scale surrogate: joints are unit double integrators under a PD law,
/// the root height keeps the lowest foot on the ground, and the planar root
/// follows its reference through a first-order lag plus push velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub skeleton: Arc<SkeletonSpec>,
    pub config: PlantConfig,
    pub time: f64,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub root_xy: [f64; 2],
    pub yaw: f64,
    pub root_vel: [f64; 2],
    pub yaw_rate: f64,
    pub root_z: f64,
    pub dr: DrSample,
    pub pushes: Vec<PushEvent>,
    /// Constant torque per joint from the COM offset.
    bias: Vec<f64>,
}

impl Plant {
    pub fn new(skeleton: Arc<SkeletonSpec>, config: PlantConfig, start: &PoseFrame) -> Self {
        let n = skeleton.joint_count();
        let mut p = Self {
            config,
            time: start.time,
            q: start.joint_pos.clone(),
            qd: start.joint_vel.clone(),
            root_xy: [start.root_pos.x, start.root_pos.y],
            yaw: heading_of(&start.root_rot),
            root_vel: [0.0; 2],
            yaw_rate: 0.0,
            root_z: 0.0,
            dr: DrSample { static_friction: 1.0, dynamic_friction: 0.8, restitution: 0.0, default_joint_offset: vec![0.0; n], com_offset: Vector3::zeros() },
            pushes: Vec::new(),
            bias: vec![0.0; n],
            skeleton,
        };
        p.root_z = p.grounded_height();
        p
    }

    /// Apply randomized physical parameters. The COM offset along x loads the
    /// hip pitch joints with `m g dx / 2` each; friction and restitution are
    /// recorded only.
    pub fn with_dr(mut self, dr: DrSample, pushes: Vec<PushEvent>) -> Self {
        let load = self.skeleton.mass * self.config.gravity * dr.com_offset.x / 2.0;
        self.bias = self
            .skeleton
            .joint_names
            .iter()
            .map(|n| if n.ends_with("hip_pitch") || n.ends_with("hip_pitch_joint") { load } else { 0.0 })
            .collect();
        self.dr = dr;
        self.pushes = pushes;
        self
    }

    fn grounded_height(&self) -> f64 {
        grounded_root_height(&self.skeleton, &yaw_quat(self.yaw), &self.q)
    }

    fn push_velocity(&self, t: f64) -> (Vector3<f64>, Vector3<f64>) {
        self.pushes
            .iter()
            .filter(|p| t >= p.start && t < p.end())
            .fold((Vector3::zeros(), Vector3::zeros()), |(l, a), p| (l + p.lin_vel, a + p.ang_vel))
    }

    /// Advance by `dt` with joint targets `targets` (the calibration offset
    /// is added) and the root chasing `root`.
    ///
    /// Each joint solves the implicit Euler step of
    /// `I q'' = kp (q* - q) - kd q' + bias`; if the resulting torque exceeds
    /// the limit, the clamped torque is applied semi-implicitly instead.
    pub fn step(&mut self, dt: f64, targets: &[f64], root: &RootTarget) {
        let sk = &self.skeleton;
        for j in 0..self.q.len() {
            let [kp, kd] = sk.pd_gains[j];
            let inertia = sk.joint_inertia[j];
            let target = targets[j] + self.dr.default_joint_offset[j];
            let (q, qd) = (self.q[j], self.qd[j]);
            let qd_new = (qd + dt * (kp * (target - q) + self.bias[j]) / inertia) / (1.0 + dt * kd / inertia + dt * dt * kp / inertia);
            let q_new = q + dt * qd_new;
            let tau = kp * (target - q_new) - kd * qd_new;
            let limit = sk.torque_limits[j];
            let (mut q1, mut qd1) = (q_new, qd_new);
            if tau.abs() > limit {
                let tau = (kp * (target - q) - kd * qd).clamp(-limit, limit) + self.bias[j];
                qd1 = qd + dt * tau / inertia;
                q1 = q + dt * qd1;
            }
            let [lo, hi] = sk.joint_limits[j];
            if q1 < lo || q1 > hi {
                q1 = q1.clamp(lo, hi);
                qd1 = 0.0;
            }
            self.q[j] = q1;
            self.qd[j] = qd1;
        }
        let (push_lin, push_ang) = self.push_velocity(self.time);
        let a = 1.0 - (-dt / self.config.root_lag).exp();
        let mut next = [0.0; 2];
        for k in 0..2 {
            next[k] = self.root_xy[k] + a * (root.pos[k] - self.root_xy[k]) + dt * push_lin[k];
            self.root_vel[k] = (next[k] - self.root_xy[k]) / dt;
        }
        self.root_xy = next;
        let yaw = self.yaw + a * wrap_angle(root.yaw - self.yaw) + dt * push_ang[2];
        self.yaw_rate = wrap_angle(yaw - self.yaw) / dt;
        self.yaw = wrap_angle(yaw);
        self.root_z = self.grounded_height();
        self.time += dt;
    }

    /// Frame of the current state. Link velocities are left at zero.
    pub fn frame(&self) -> PoseFrame {
        let mut f = PoseFrame::from_pose(
            &self.skeleton,
            self.time,
            Vector3::new(self.root_xy[0], self.root_xy[1], self.root_z),
            yaw_quat(self.yaw),
            self.q.clone(),
        );
        f.joint_vel = self.qd.clone();
        f.root_lin_vel = Vector3::new(self.root_vel[0], self.root_vel[1], 0.0);
        f.root_ang_vel = Vector3::new(0.0, 0.0, self.yaw_rate);
        f
    }

    /// Stored joint energy relative to `targets`: kinetic plus PD spring.
    pub fn joint_energy(&self, targets: &[f64]) -> f64 {
        (0..self.q.len())
            .map(|j| {
                let e = targets[j] + self.dr.default_joint_offset[j] - self.q[j];
                0.5 * self.skeleton.joint_inertia[j] * self.qd[j].powi(2) + 0.5 * self.skeleton.pd_gains[j][0] * e * e
            })
            .sum()
    }

    pub fn kinetic_energy(&self) -> f64 {
        (0..self.q.len()).map(|j| 0.5 * self.skeleton.joint_inertia[j] * self.qd[j].powi(2)).sum()
    }

    /// Links below `height` touch the ground and share the body weight.
    pub fn contacts(&self, height: f64) -> ContactReport {
        let frame = self.frame();
        let in_contact: Vec<bool> = frame.links.iter().map(|l| l.pos.z < height).collect();
        let n = in_contact.iter().filter(|c| **c).count().max(1) as f64;
        let w = self.skeleton.mass * self.config.gravity / n;
        let force = in_contact.iter().map(|c| if *c { w } else { 0.0 }).collect();
        ContactReport { in_contact, force }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).chain(&self.root_xy).all(|x| x.is_finite()) && self.yaw.is_finite() && self.root_z.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth;

    fn desk() -> Arc<SkeletonSpec> {
        Arc::new(SkeletonSpec::desk_7dof())
    }

    #[test]
    fn settles_on_target() {
        let sk = desk();
        let start = synth::idle(sk.clone(), 0.1).frames[0].clone();
        let mut p = Plant::new(sk, PlantConfig::default(), &start);
        let target = synth::desk_squat_pose(0.3);
        for _ in 0..2000 {
            p.step(0.002, &target, &RootTarget::default());
        }
        for (q, t) in p.q.iter().zip(&target) {
            assert!((q - t).abs() < 1e-6);
        }
        assert!(p.is_finite());
    }

    #[test]
    fn energy_never_grows_under_fixed_targets() {
        let sk = desk();
        let mut start = synth::idle(sk.clone(), 0.1).frames[0].clone();
        start.joint_pos = vec![0.4, 0.9, -0.3, -0.6, 1.5, 0.2, 0.5];
        start.joint_vel = vec![2.0, -1.0, 0.5, 0.0, 3.0, -2.0, 1.0];
        let mut p = Plant::new(sk, PlantConfig::default(), &start);
        let zero = vec![0.0; 7];
        let mut e = p.joint_energy(&zero);
        for _ in 0..1000 {
            p.step(0.002, &zero, &RootTarget::default());
            let e1 = p.joint_energy(&zero);
            assert!(e1 <= e + 1e-12);
            e = e1;
        }
    }

    #[test]
    fn root_follows_reference() {
        let sk = desk();
        let start = synth::idle(sk.clone(), 0.1).frames[0].clone();
        let mut p = Plant::new(sk, PlantConfig::default(), &start);
        let goal = RootTarget { pos: [1.0, -2.0], yaw: 3.0 };
        for _ in 0..1000 {
            p.step(0.002, &[0.0; 7], &goal);
        }
        assert!((p.root_xy[0] - 1.0).abs() < 1e-6 && (p.root_xy[1] + 2.0).abs() < 1e-6);
        assert!(wrap_angle(p.yaw - 3.0).abs() < 1e-6);
        assert!((p.frame().links[1].pos.z).abs() < 1e-12);
    }
}
