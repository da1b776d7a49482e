//! Data-driven skeleton description and forward kinematics.

use std::path::Path;

use nalgebra::{Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::MotionError;

/// A tracked body link, rigidly attached to a joint frame (or to the root
/// when `joint` is `None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyLink {
    pub name: String,
    pub joint: Option<usize>,
    /// Offset from the joint frame origin, expressed in the joint frame.
    pub offset: [f64; 3],
}

/// Body-link indices of the sparse upper-body keypoints used by hybrid commands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Keypoints {
    pub head: usize,
    pub left_wrist: usize,
    pub right_wrist: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSpec {
    pub name: String,
    pub joint_names: Vec<String>,
    /// Per joint `[min, max]` in radians.
    pub joint_limits: Vec<[f64; 2]>,
    /// Parent joint of each joint; `None` attaches the joint to the root.
    pub parent_indices: Vec<Option<usize>>,
    pub joint_offsets: Vec<[f64; 3]>,
    pub joint_axes: Vec<[f64; 3]>,
    /// Per joint `(kp, kd)`.
    pub pd_gains: Vec<[f64; 2]>,
    pub joint_inertia: Vec<f64>,
    pub torque_limits: Vec<f64>,
    pub default_pose: Vec<f64>,
    /// The tracked link set.
    pub body_links: Vec<BodyLink>,
    pub keypoints: Keypoints,
    /// Body links that support the robot on the ground.
    pub feet: Vec<usize>,
    pub lower_body_joints: Vec<usize>,
    /// Total mass in kg, used for contact force estimates.
    pub mass: f64,
}

impl SkeletonSpec {
    pub fn joint_count(&self) -> usize {
        self.joint_names.len()
    }

    pub fn link_count(&self) -> usize {
        self.body_links.len()
    }

    pub fn upper_body_joints(&self) -> Vec<usize> {
        (0..self.joint_count())
            .filter(|j| !self.lower_body_joints.contains(j))
            .collect()
    }

    /// Links exempt from the undesired-contact penalty (ankles and wrists).
    pub fn is_contact_exempt(&self, link: usize) -> bool {
        self.body_links
            .get(link)
            .map(|l| l.name.contains("ankle") || l.name.contains("wrist"))
            .unwrap_or(false)
    }

    pub fn validate(&self) -> Result<(), MotionError> {
        let n = self.joint_count();
        let bad = |msg: String| Err(MotionError::InvalidSkeleton(msg));
        if n == 0 {
            return bad("skeleton has no joints".into());
        }
        let lens = [
            ("joint_limits", self.joint_limits.len()),
            ("parent_indices", self.parent_indices.len()),
            ("joint_offsets", self.joint_offsets.len()),
            ("joint_axes", self.joint_axes.len()),
            ("pd_gains", self.pd_gains.len()),
            ("joint_inertia", self.joint_inertia.len()),
            ("torque_limits", self.torque_limits.len()),
            ("default_pose", self.default_pose.len()),
        ];
        for (field, len) in lens {
            if len != n {
                return bad(format!("{field} has {len} entries, expected {n}"));
            }
        }
        for (j, parent) in self.parent_indices.iter().enumerate() {
            // parents must precede children, which makes the topology a rooted tree
            if let Some(p) = parent {
                if *p >= j {
                    return bad(format!("joint {j} has parent {p}, parents must precede children"));
                }
            }
        }
        for (j, [lo, hi]) in self.joint_limits.iter().enumerate() {
            if !(lo <= hi) {
                return bad(format!("joint {j} limits [{lo}, {hi}] are inverted"));
            }
        }
        for (j, axis) in self.joint_axes.iter().enumerate() {
            if Vector3::from(*axis).norm() < 1e-9 {
                return bad(format!("joint {j} has a zero axis"));
            }
        }
        for (j, [kp, kd]) in self.pd_gains.iter().enumerate() {
            if *kp < 0.0 || *kd < 0.0 || self.joint_inertia[j] <= 0.0 {
                return bad(format!("joint {j} has non-physical gains or inertia"));
            }
        }
        for link in &self.body_links {
            if let Some(j) = link.joint {
                if j >= n {
                    return bad(format!("link {} references joint {j}", link.name));
                }
            }
        }
        let links = self.link_count();
        let kp = self.keypoints;
        if kp.head >= links || kp.left_wrist >= links || kp.right_wrist >= links {
            return bad("keypoint index out of range".into());
        }
        if self.feet.iter().any(|&f| f >= links) || self.lower_body_joints.iter().any(|&j| j >= n) {
            return bad("feet or lower-body index out of range".into());
        }
        if self.mass <= 0.0 {
            return bad("mass must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, MotionError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| MotionError::InvalidSkeleton(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("skeleton serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, MotionError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    /// World poses of every joint frame.
    pub fn joint_frames(
        &self,
        root_pos: &Vector3<f64>,
        root_rot: &UnitQuaternion<f64>,
        joint_pos: &[f64],
    ) -> Vec<(Vector3<f64>, UnitQuaternion<f64>)> {
        let mut frames: Vec<(Vector3<f64>, UnitQuaternion<f64>)> = Vec::with_capacity(self.joint_count());
        for j in 0..self.joint_count() {
            let (ppos, prot) = match self.parent_indices[j] {
                Some(p) => frames[p],
                None => (*root_pos, *root_rot),
            };
            let pos = ppos + prot * Vector3::from(self.joint_offsets[j]);
            let axis = nalgebra::Unit::new_normalize(Vector3::from(self.joint_axes[j]));
            let rot = prot * UnitQuaternion::from_axis_angle(&axis, joint_pos[j]);
            frames.push((pos, rot));
        }
        frames
    }

    /// World position and orientation of every tracked body link.
    pub fn forward_kinematics(
        &self,
        root_pos: &Vector3<f64>,
        root_rot: &UnitQuaternion<f64>,
        joint_pos: &[f64],
    ) -> Vec<(Vector3<f64>, UnitQuaternion<f64>)> {
        let frames = self.joint_frames(root_pos, root_rot, joint_pos);
        self.body_links
            .iter()
            .map(|link| {
                let (pos, rot) = match link.joint {
                    Some(j) => frames[j],
                    None => (*root_pos, *root_rot),
                };
                let p = Translation3::from(pos) * rot * nalgebra::Point3::from(Vector3::from(link.offset));
                (p.coords, rot)
            })
            .collect()
    }

    /// Desk-scale 7-DoF chain: two 3-joint pitch legs and a waist, with head and
    /// wrist end-effectors rigidly attached to the torso.
    pub fn desk_7dof() -> Self {
        let y = [0.0, 1.0, 0.0];
        let joint_names = [
            "left_hip_pitch",
            "left_knee",
            "left_ankle_pitch",
            "right_hip_pitch",
            "right_knee",
            "right_ankle_pitch",
            "waist_pitch",
        ];
        let leg_limits = [[-2.0, 1.0], [-0.1, 2.6], [-1.2, 1.0]];
        let mut joint_limits = Vec::new();
        joint_limits.extend_from_slice(&leg_limits);
        joint_limits.extend_from_slice(&leg_limits);
        joint_limits.push([-0.5, 1.2]);
        let joint_offsets = vec![
            [0.0, 0.1, 0.0],
            [0.0, 0.0, -0.35],
            [0.0, 0.0, -0.35],
            [0.0, -0.1, 0.0],
            [0.0, 0.0, -0.35],
            [0.0, 0.0, -0.35],
            [0.0, 0.0, 0.1],
        ];
        let link = |name: &str, joint: usize, offset: [f64; 3]| BodyLink {
            name: name.to_string(),
            joint: Some(joint),
            offset,
        };
        let body_links = vec![
            link("left_knee_link", 1, [0.0; 3]),
            link("left_ankle_link", 2, [0.0, 0.0, -0.05]),
            link("right_knee_link", 4, [0.0; 3]),
            link("right_ankle_link", 5, [0.0, 0.0, -0.05]),
            link("torso_link", 6, [0.0, 0.0, 0.25]),
            link("head_link", 6, [0.0, 0.0, 0.45]),
            link("left_wrist_link", 6, [0.1, 0.2, 0.0]),
            link("right_wrist_link", 6, [0.1, -0.2, 0.0]),
        ];
        Self {
            name: "desk-7dof".into(),
            joint_names: joint_names.iter().map(|s| s.to_string()).collect(),
            joint_limits,
            parent_indices: vec![None, Some(0), Some(1), None, Some(3), Some(4), None],
            joint_offsets,
            joint_axes: vec![y; 7],
            pd_gains: vec![[100.0, 20.0]; 7],
            joint_inertia: vec![1.0; 7],
            torque_limits: vec![300.0; 7],
            default_pose: vec![0.0; 7],
            body_links,
            keypoints: Keypoints { head: 5, left_wrist: 6, right_wrist: 7 },
            feet: vec![1, 3],
            lower_body_joints: (0..6).collect(),
            mass: 35.0,
        }
    }

    /// 29-DoF layout following the Unitree G1 joint naming, with approximate
    /// link geometry.
    pub fn g1_29dof() -> Self {
        let x = [1.0, 0.0, 0.0];
        let y = [0.0, 1.0, 0.0];
        let z = [0.0, 0.0, 1.0];
        let mut names = Vec::new();
        let mut parents = Vec::new();
        let mut offsets = Vec::new();
        let mut axes = Vec::new();
        let mut limits = Vec::new();
        let mut gains = Vec::new();
        let mut push = |name: String, parent: Option<usize>, offset: [f64; 3], axis: [f64; 3], lim: [f64; 2], kp: f64| {
            names.push(name);
            parents.push(parent);
            offsets.push(offset);
            axes.push(axis);
            limits.push(lim);
            gains.push([kp, kp / 10.0]);
            names.len() - 1
        };
        for (side, sy) in [("left", 1.0), ("right", -1.0)] {
            let hp = push(format!("{side}_hip_pitch_joint"), None, [0.0, 0.064 * sy, -0.103], y, [-2.53, 2.88], 100.0);
            let hr = push(format!("{side}_hip_roll_joint"), Some(hp), [0.0, 0.052 * sy, -0.03], x, [-0.52, 2.97], 100.0);
            let hy = push(format!("{side}_hip_yaw_joint"), Some(hr), [0.025, 0.0, -0.124], z, [-2.76, 2.76], 100.0);
            let kn = push(format!("{side}_knee_joint"), Some(hy), [-0.078, 0.002, -0.177], y, [-0.087, 2.88], 150.0);
            let ap = push(format!("{side}_ankle_pitch_joint"), Some(kn), [0.0, 0.0, -0.3], y, [-0.87, 0.52], 40.0);
            push(format!("{side}_ankle_roll_joint"), Some(ap), [0.0, 0.0, -0.017], x, [-0.26, 0.26], 40.0);
        }
        let wy = push("waist_yaw_joint".into(), None, [0.0, 0.0, 0.0], z, [-2.62, 2.62], 150.0);
        let wr = push("waist_roll_joint".into(), Some(wy), [-0.004, 0.0, 0.044], x, [-0.52, 0.52], 150.0);
        let wp = push("waist_pitch_joint".into(), Some(wr), [0.0, 0.0, 0.0], y, [-0.52, 0.52], 150.0);
        for (side, sy) in [("left", 1.0), ("right", -1.0)] {
            let sp = push(format!("{side}_shoulder_pitch_joint"), Some(wp), [0.004, 0.1 * sy, 0.24], y, [-3.09, 2.67], 40.0);
            let sr = push(format!("{side}_shoulder_roll_joint"), Some(sp), [0.0, 0.038 * sy, -0.014], x, [-1.59, 2.25], 40.0);
            let sw = push(format!("{side}_shoulder_yaw_joint"), Some(sr), [0.0, 0.006 * sy, -0.1], z, [-2.62, 2.62], 40.0);
            let el = push(format!("{side}_elbow_joint"), Some(sw), [0.016, 0.0, -0.08], y, [-1.05, 2.09], 40.0);
            let wr = push(format!("{side}_wrist_roll_joint"), Some(el), [0.1, 0.002 * sy, -0.01], x, [-1.97, 1.97], 20.0);
            let wpi = push(format!("{side}_wrist_pitch_joint"), Some(wr), [0.038, 0.0, 0.0], y, [-1.61, 1.61], 20.0);
            push(format!("{side}_wrist_yaw_joint"), Some(wpi), [0.046, 0.0, 0.0], z, [-1.61, 1.61], 20.0);
        }
        let idx = |n: &str| names.iter().position(|x| x == n).expect("joint exists");
        let link = |name: &str, joint: &str, offset: [f64; 3]| BodyLink {
            name: name.to_string(),
            joint: Some(idx(joint)),
            offset,
        };
        let body_links = vec![
            link("left_hip_roll_link", "left_hip_roll_joint", [0.0; 3]),
            link("left_knee_link", "left_knee_joint", [0.0; 3]),
            link("left_ankle_roll_link", "left_ankle_roll_joint", [0.0, 0.0, -0.03]),
            link("right_hip_roll_link", "right_hip_roll_joint", [0.0; 3]),
            link("right_knee_link", "right_knee_joint", [0.0; 3]),
            link("right_ankle_roll_link", "right_ankle_roll_joint", [0.0, 0.0, -0.03]),
            link("torso_link", "waist_pitch_joint", [0.0, 0.0, 0.2]),
            link("head_link", "waist_pitch_joint", [0.0, 0.0, 0.45]),
            link("left_shoulder_roll_link", "left_shoulder_roll_joint", [0.0; 3]),
            link("left_elbow_link", "left_elbow_joint", [0.0; 3]),
            link("left_wrist_yaw_link", "left_wrist_yaw_joint", [0.05, 0.0, 0.0]),
            link("right_shoulder_roll_link", "right_shoulder_roll_joint", [0.0; 3]),
            link("right_elbow_link", "right_elbow_joint", [0.0; 3]),
            link("right_wrist_yaw_link", "right_wrist_yaw_joint", [0.05, 0.0, 0.0]),
        ];
        let n = names.len();
        let lower_body_joints = names
            .iter()
            .enumerate()
            .filter(|(_, n)| n.contains("hip") || n.contains("knee") || n.contains("ankle"))
            .map(|(i, _)| i)
            .collect();
        let torque_limits = gains.iter().map(|[kp, _]| kp * 1.5).collect();
        Self {
            name: "g1-29dof".into(),
            joint_names: names,
            joint_limits: limits,
            parent_indices: parents,
            joint_offsets: offsets,
            joint_axes: axes,
            pd_gains: gains,
            joint_inertia: vec![0.5; n],
            torque_limits,
            default_pose: vec![0.0; n],
            body_links,
            keypoints: Keypoints { head: 7, left_wrist: 10, right_wrist: 13 },
            feet: vec![2, 5],
            lower_body_joints,
            mass: 35.0,
        }
    }
}
