use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};

use super::rotation::{quat_to_6d, yaw_quat, HeadingFrame, Rot6};
use super::{MotionError, SkeletonSpec};

pub const DEFAULT_FPS: f64 = 50.0;
pub const GRAVITY: f64 = 9.81;

/// World-frame state of one tracked body link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub pos: Vector3<f64>,
    pub rot: UnitQuaternion<f64>,
    pub lin_vel: Vector3<f64>,
    pub ang_vel: Vector3<f64>,
}

impl LinkState {
    pub fn at_rest(pos: Vector3<f64>, rot: UnitQuaternion<f64>) -> Self {
        Self { pos, rot, lin_vel: Vector3::zeros(), ang_vel: Vector3::zeros() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub time: f64,
    pub root_pos: Vector3<f64>,
    pub root_rot: UnitQuaternion<f64>,
    pub root_lin_vel: Vector3<f64>,
    pub root_ang_vel: Vector3<f64>,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub links: Vec<LinkState>,
}

impl PoseFrame {
    pub fn root_rot6d(&self) -> Rot6 {
        quat_to_6d(&self.root_rot)
    }

    pub fn heading_frame(&self) -> Result<HeadingFrame, MotionError> {
        HeadingFrame::from_root(self.root_pos, *self.root_rot.quaternion())
    }

    /// Same pose with every velocity zeroed.
    pub fn held(&self) -> Self {
        let mut f = self.clone();
        f.root_lin_vel = Vector3::zeros();
        f.root_ang_vel = Vector3::zeros();
        f.joint_vel.iter_mut().for_each(|v| *v = 0.0);
        for l in &mut f.links {
            l.lin_vel = Vector3::zeros();
            l.ang_vel = Vector3::zeros();
        }
        f
    }

    /// Static frame at `time` computed by forward kinematics.
    pub fn from_pose(
        skeleton: &SkeletonSpec,
        time: f64,
        root_pos: Vector3<f64>,
        root_rot: UnitQuaternion<f64>,
        joint_pos: Vec<f64>,
    ) -> Self {
        let links = skeleton
            .forward_kinematics(&root_pos, &root_rot, &joint_pos)
            .into_iter()
            .map(|(p, r)| LinkState::at_rest(p, r))
            .collect();
        let n = joint_pos.len();
        Self {
            time,
            root_pos,
            root_rot,
            root_lin_vel: Vector3::zeros(),
            root_ang_vel: Vector3::zeros(),
            joint_pos,
            joint_vel: vec![0.0; n],
            links,
        }
    }

    /// Apply a rigid world transform: rotate by `yaw` about the world z-axis,
    /// then translate.
    pub fn transformed(&self, yaw: f64, translation: &Vector3<f64>) -> Self {
        let q = yaw_quat(yaw);
        let mut f = self.clone();
        f.root_pos = q * self.root_pos + translation;
        f.root_rot = q * self.root_rot;
        f.root_lin_vel = q * self.root_lin_vel;
        f.root_ang_vel = q * self.root_ang_vel;
        for l in &mut f.links {
            l.pos = q * l.pos + translation;
            l.rot = q * l.rot;
            l.lin_vel = q * l.lin_vel;
            l.ang_vel = q * l.ang_vel;
        }
        f
    }
}

/// Ordered 50 Hz kinematic trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionClip {
    pub name: String,
    pub fps: f64,
    pub skeleton: Arc<SkeletonSpec>,
    pub frames: Vec<PoseFrame>,
}

impl MotionClip {
    pub fn new(
        name: impl Into<String>,
        fps: f64,
        skeleton: Arc<SkeletonSpec>,
        frames: Vec<PoseFrame>,
    ) -> Result<Self, MotionError> {
        let clip = Self { name: name.into(), fps, skeleton, frames };
        clip.validate()?;
        Ok(clip)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let bad = |m: String| Err(MotionError::InvalidClip(m));
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return bad(format!("fps {} is not positive", self.fps));
        }
        let nj = self.skeleton.joint_count();
        let nl = self.skeleton.link_count();
        let dt = 1.0 / self.fps;
        for (i, f) in self.frames.iter().enumerate() {
            if f.joint_pos.len() != nj || f.joint_vel.len() != nj {
                return bad(format!("frame {i} joint arrays do not match {nj} joints"));
            }
            if f.links.len() != nl {
                return bad(format!("frame {i} has {} links, expected {nl}", f.links.len()));
            }
            if (f.root_rot.quaternion().norm() - 1.0).abs() > 1e-9
                || f.links.iter().any(|l| (l.rot.quaternion().norm() - 1.0).abs() > 1e-9)
            {
                return bad(format!("frame {i} holds a non-unit quaternion"));
            }
            if i > 0 {
                let expect = self.frames[0].time + i as f64 * dt;
                if (f.time - expect).abs() > 1e-9 * expect.abs().max(1.0) {
                    return bad(format!("frame {i} at t={} breaks the 1/fps spacing", f.time));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.frames.first().map(|f| f.time).unwrap_or(0.0)
    }

    pub fn end_time(&self) -> f64 {
        self.frames.last().map(|f| f.time).unwrap_or(0.0)
    }

    pub fn duration(&self) -> f64 {
        self.end_time() - self.start_time()
    }

    /// Index of the frame nearest to `t`, clamped to the clip.
    pub fn index_at(&self, t: f64) -> usize {
        let i = ((t - self.start_time()) * self.fps).round();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.frames.len().saturating_sub(1))
        }
    }

    pub fn frame_at(&self, t: f64) -> Option<&PoseFrame> {
        self.frames.get(self.index_at(t))
    }

    pub fn transformed(&self, yaw: f64, translation: &Vector3<f64>) -> Self {
        Self {
            frames: self.frames.iter().map(|f| f.transformed(yaw, translation)).collect(),
            ..self.clone()
        }
    }

    /// Build a clip from root and joint trajectories, deriving link states by
    /// forward kinematics and all velocities by forward differences (the last
    /// frame repeats the previous velocity).
    pub fn from_kinematics(
        name: impl Into<String>,
        fps: f64,
        skeleton: Arc<SkeletonSpec>,
        root_pos: &[Vector3<f64>],
        root_rot: &[UnitQuaternion<f64>],
        joint_pos: &[Vec<f64>],
    ) -> Result<Self, MotionError> {
        let n = root_pos.len();
        if root_rot.len() != n || joint_pos.len() != n {
            return Err(MotionError::InvalidClip("trajectory lengths differ".into()));
        }
        let mut frames: Vec<PoseFrame> = (0..n)
            .map(|i| {
                PoseFrame::from_pose(&skeleton, i as f64 / fps, root_pos[i], root_rot[i], joint_pos[i].clone())
            })
            .collect();
        fill_velocities(&mut frames, fps);
        Self::new(name, fps, skeleton, frames)
    }

    /// Resample to `target_fps` by linear interpolation (slerp for rotations).
    pub fn resampled(&self, target_fps: f64) -> Result<Self, MotionError> {
        if self.frames.is_empty() {
            return Err(MotionError::EmptyClip);
        }
        let t0 = self.start_time();
        let count = (self.duration() * target_fps + 1e-9).floor() as usize + 1;
        let mut frames = Vec::with_capacity(count);
        for k in 0..count {
            let t = t0 + k as f64 / target_fps;
            let x = (t - t0) * self.fps;
            let i = (x.floor() as usize).min(self.frames.len() - 1);
            let j = (i + 1).min(self.frames.len() - 1);
            let w = (x - i as f64).clamp(0.0, 1.0);
            let (a, b) = (&self.frames[i], &self.frames[j]);
            let lerp = |u: &Vector3<f64>, v: &Vector3<f64>| u.lerp(v, w);
            let lerpv = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p + (q - p) * w).collect::<Vec<_>>();
            let slerp = |p: &UnitQuaternion<f64>, q: &UnitQuaternion<f64>| UnitQuaternion::new_normalize(p.try_slerp(q, w, 1e-12).unwrap_or(*p).into_inner());
            frames.push(PoseFrame {
                time: t,
                root_pos: lerp(&a.root_pos, &b.root_pos),
                root_rot: slerp(&a.root_rot, &b.root_rot),
                root_lin_vel: lerp(&a.root_lin_vel, &b.root_lin_vel),
                root_ang_vel: lerp(&a.root_ang_vel, &b.root_ang_vel),
                joint_pos: lerpv(&a.joint_pos, &b.joint_pos),
                joint_vel: lerpv(&a.joint_vel, &b.joint_vel),
                links: a
                    .links
                    .iter()
                    .zip(&b.links)
                    .map(|(la, lb)| LinkState {
                        pos: lerp(&la.pos, &lb.pos),
                        rot: slerp(&la.rot, &lb.rot),
                        lin_vel: lerp(&la.lin_vel, &lb.lin_vel),
                        ang_vel: lerp(&la.ang_vel, &lb.ang_vel),
                    })
                    .collect(),
            });
        }
        Self::new(self.name.clone(), target_fps, self.skeleton.clone(), frames)
    }
}

fn angular_velocity(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, fps: f64) -> Vector3<f64> {
    (b * a.inverse()).scaled_axis() * fps
}

/// Overwrite every velocity field with forward differences of the poses.
pub fn fill_velocities(frames: &mut [PoseFrame], fps: f64) {
    let n = frames.len();
    if n < 2 {
        return;
    }
    for i in 0..n {
        let (a, b) = if i + 1 < n { (i, i + 1) } else { (n - 2, n - 1) };
        let (fa, fb) = (frames[a].clone(), frames[b].clone());
        let f = &mut frames[i];
        f.root_lin_vel = (fb.root_pos - fa.root_pos) * fps;
        f.root_ang_vel = angular_velocity(&fa.root_rot, &fb.root_rot, fps);
        for j in 0..f.joint_vel.len() {
            f.joint_vel[j] = (fb.joint_pos[j] - fa.joint_pos[j]) * fps;
        }
        for (k, l) in f.links.iter_mut().enumerate() {
            l.lin_vel = (fb.links[k].pos - fa.links[k].pos) * fps;
            l.ang_vel = angular_velocity(&fa.links[k].rot, &fb.links[k].rot, fps);
        }
    }
}

/// Proprioceptive observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Proprioception {
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    /// Root angular velocity in the root frame.
    pub root_ang_vel: Vector3<f64>,
    pub gravity_in_root: Vector3<f64>,
    pub prev_action: Vec<f64>,
}

impl Proprioception {
    pub fn from_frame(frame: &PoseFrame, prev_action: Vec<f64>, gravity: f64) -> Self {
        let inv = frame.root_rot.inverse();
        Self {
            joint_pos: frame.joint_pos.clone(),
            joint_vel: frame.joint_vel.clone(),
            root_ang_vel: inv * frame.root_ang_vel,
            gravity_in_root: inv * Vector3::new(0.0, 0.0, -gravity),
            prev_action,
        }
    }

    pub fn dim(joints: usize) -> usize {
        3 * joints + 6
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.joint_pos.len()));
        v.extend_from_slice(&self.joint_pos);
        v.extend_from_slice(&self.joint_vel);
        v.extend(self.root_ang_vel.iter());
        v.extend(self.gravity_in_root.iter());
        v.extend_from_slice(&self.prev_action);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth;

    #[test]
    fn gravity_norm_is_preserved() {
        let clip = synth::wave(Arc::new(SkeletonSpec::desk_7dof()), 2.0, 0.5, 0.3);
        for f in &clip.frames {
            let p = Proprioception::from_frame(f, vec![0.0; 7], GRAVITY);
            assert!((p.gravity_in_root.norm() - 9.81).abs() < 1e-6);
            assert_eq!(p.flatten().len(), Proprioception::dim(7));
        }
    }

    #[test]
    fn rejects_uneven_spacing() {
        let mut clip = synth::wave(Arc::new(SkeletonSpec::desk_7dof()), 1.0, 0.5, 0.3);
        clip.frames[3].time += 0.001;
        assert!(matches!(clip.validate(), Err(MotionError::InvalidClip(_))));
    }

    #[test]
    fn resample_keeps_endpoints() {
        let clip = synth::wave(Arc::new(SkeletonSpec::desk_7dof()), 1.0, 0.5, 0.3);
        let r = clip.resampled(25.0).unwrap();
        assert_eq!(r.len(), 26);
        assert!((r.frames[25].root_pos - clip.frames[50].root_pos).norm() < 1e-12);
        let back = r.resampled(50.0).unwrap();
        assert_eq!(back.len(), 51);
    }

    #[test]
    fn index_clamps() {
        let clip = synth::wave(Arc::new(SkeletonSpec::desk_7dof()), 1.0, 0.5, 0.3);
        assert_eq!(clip.index_at(-1.0), 0);
        assert_eq!(clip.index_at(0.5), 25);
        assert_eq!(clip.index_at(10.0), 50);
    }
}
