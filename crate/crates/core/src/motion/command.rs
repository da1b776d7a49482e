//! Motion-command windows for the three command families, canonicalized in
//! the heading frame of the current frame.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::rotation::{quat_to_6d, HeadingFrame, Rot6};
use super::{MotionClip, MotionError, PoseFrame, SkeletonSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CommandKind {
    Robot,
    Human,
    Hybrid,
}

impl CommandKind {
    pub const ALL: [CommandKind; 3] = [CommandKind::Robot, CommandKind::Human, CommandKind::Hybrid];

    /// Number of future frames in the window.
    pub fn future_frames(self) -> usize {
        10
    }

    /// Spacing of the future frames, in seconds.
    pub fn frame_interval(self) -> f64 {
        match self {
            CommandKind::Robot | CommandKind::Hybrid => 0.1,
            CommandKind::Human => 0.02,
        }
    }
}

/// One future frame of a robot command. Positions and orientations are in the
/// heading frame at the command time; `link_pos` is relative to that frame's
/// root position.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotCommandFrame {
    pub root_pos: Vector3<f64>,
    pub root_rot6d: Rot6,
    pub root_lin_vel: Vector3<f64>,
    pub root_ang_vel: Vector3<f64>,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
    pub link_pos: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HumanCommandFrame {
    pub joints: Vec<Vector3<f64>>,
}

/// SE(3) keypoint in the heading frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub pos: Vector3<f64>,
    pub rot6d: Rot6,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBodyFrame {
    pub root_pos: Vector3<f64>,
    pub root_rot6d: Rot6,
    pub joint_pos: Vec<f64>,
    pub joint_vel: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HybridCommand {
    pub head: Keypoint,
    pub left_wrist: Keypoint,
    pub right_wrist: Keypoint,
    pub lower: Vec<LowerBodyFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandWindow {
    Robot(Vec<RobotCommandFrame>),
    Human(Vec<HumanCommandFrame>),
    Hybrid(HybridCommand),
}

/// A command window sliced at `time` from a reference motion.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionCommand {
    pub time: f64,
    pub window: CommandWindow,
}

impl MotionCommand {
    pub fn kind(&self) -> CommandKind {
        match self.window {
            CommandWindow::Robot(_) => CommandKind::Robot,
            CommandWindow::Human(_) => CommandKind::Human,
            CommandWindow::Hybrid(_) => CommandKind::Hybrid,
        }
    }

    pub fn robot_frames(&self) -> Option<&[RobotCommandFrame]> {
        match &self.window {
            CommandWindow::Robot(f) => Some(f),
            _ => None,
        }
    }

    /// Flatten in the fixed feature layout documented in `docs/features.md`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        match &self.window {
            CommandWindow::Robot(frames) => {
                for f in frames {
                    v.extend(f.root_pos.iter());
                    v.extend_from_slice(&f.root_rot6d);
                    v.extend(f.root_lin_vel.iter());
                    v.extend(f.root_ang_vel.iter());
                    v.extend_from_slice(&f.joint_pos);
                    v.extend_from_slice(&f.joint_vel);
                    for p in &f.link_pos {
                        v.extend(p.iter());
                    }
                }
            }
            CommandWindow::Human(frames) => {
                for f in frames {
                    for p in &f.joints {
                        v.extend(p.iter());
                    }
                }
            }
            CommandWindow::Hybrid(h) => {
                for k in [&h.head, &h.left_wrist, &h.right_wrist] {
                    v.extend(k.pos.iter());
                    v.extend_from_slice(&k.rot6d);
                }
                for f in &h.lower {
                    v.extend(f.root_pos.iter());
                    v.extend_from_slice(&f.root_rot6d);
                    v.extend_from_slice(&f.joint_pos);
                    v.extend_from_slice(&f.joint_vel);
                }
            }
        }
        v
    }
}

/// Flattened feature width of each command kind for a skeleton.
pub fn feature_dim(kind: CommandKind, skeleton: &SkeletonSpec, layout: &HumanLayout) -> usize {
    let frames = kind.future_frames();
    let nj = skeleton.joint_count();
    match kind {
        CommandKind::Robot => frames * (15 + 2 * nj + 3 * skeleton.link_count()),
        CommandKind::Human => frames * 3 * layout.joints.len(),
        CommandKind::Hybrid => 27 + frames * (9 + 2 * skeleton.lower_body_joints.len()),
    }
}

/// Rebuild robot command frames from a flat feature vector (inverse of
/// [`MotionCommand::flatten`] for the robot layout).
pub fn unflatten_robot(features: &[f64], skeleton: &SkeletonSpec) -> Vec<RobotCommandFrame> {
    let nj = skeleton.joint_count();
    let nl = skeleton.link_count();
    let per = 15 + 2 * nj + 3 * nl;
    features
        .chunks_exact(per)
        .map(|c| {
            let v3 = |o: usize| Vector3::new(c[o], c[o + 1], c[o + 2]);
            let mut rot = [0.0; 6];
            rot.copy_from_slice(&c[3..9]);
            let jp = 15;
            let lp = jp + 2 * nj;
            RobotCommandFrame {
                root_pos: v3(0),
                root_rot6d: rot,
                root_lin_vel: v3(9),
                root_ang_vel: v3(12),
                joint_pos: c[jp..jp + nj].to_vec(),
                joint_vel: c[jp + nj..lp].to_vec(),
                link_pos: (0..nl).map(|k| v3(lp + 3 * k)).collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanJoint {
    pub name: String,
    /// Body link the joint is attached to; `None` attaches it to the root.
    pub link: Option<usize>,
    pub offset: [f64; 3],
}

/// Positional layout of the human command (24 joints by default).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanLayout {
    pub joints: Vec<HumanJoint>,
}

impl HumanLayout {
    /// Default 24-joint layout, attached to the skeleton's links by name.
    pub fn default_for(skeleton: &SkeletonSpec) -> Self {
        // (name, keyword alternatives tried in order, offset in the link frame)
        let table: [(&str, &[&[&str]], [f64; 3]); 24] = [
            ("pelvis", &[], [0.0, 0.0, 0.0]),
            ("left_hip", &[], [0.0, 0.09, -0.05]),
            ("right_hip", &[], [0.0, -0.09, -0.05]),
            ("spine1", &[&["torso"]], [0.0, 0.0, -0.15]),
            ("left_knee", &[&["left", "knee"]], [0.0; 3]),
            ("right_knee", &[&["right", "knee"]], [0.0; 3]),
            ("spine2", &[&["torso"]], [0.0, 0.0, -0.05]),
            ("left_ankle", &[&["left", "ankle"]], [0.0, 0.0, 0.05]),
            ("right_ankle", &[&["right", "ankle"]], [0.0, 0.0, 0.05]),
            ("spine3", &[&["torso"]], [0.0, 0.0, 0.05]),
            ("left_foot", &[&["left", "ankle"]], [0.12, 0.0, 0.0]),
            ("right_foot", &[&["right", "ankle"]], [0.12, 0.0, 0.0]),
            ("neck", &[&["head"]], [0.0, 0.0, -0.12]),
            ("left_collar", &[&["torso"]], [0.0, 0.08, 0.1]),
            ("right_collar", &[&["torso"]], [0.0, -0.08, 0.1]),
            ("head", &[&["head"]], [0.0, 0.0, 0.0]),
            ("left_shoulder", &[&["left", "shoulder"], &["torso"]], [0.0, 0.0, 0.0]),
            ("right_shoulder", &[&["right", "shoulder"], &["torso"]], [0.0, 0.0, 0.0]),
            ("left_elbow", &[&["left", "elbow"], &["left", "wrist"]], [0.0; 3]),
            ("right_elbow", &[&["right", "elbow"], &["right", "wrist"]], [0.0; 3]),
            ("left_wrist", &[&["left", "wrist"]], [0.0; 3]),
            ("right_wrist", &[&["right", "wrist"]], [0.0; 3]),
            ("left_hand", &[&["left", "wrist"]], [0.08, 0.0, 0.0]),
            ("right_hand", &[&["right", "wrist"]], [0.08, 0.0, 0.0]),
        ];
        let find = |alts: &[&[&str]]| {
            alts.iter().find_map(|keys| {
                skeleton
                    .body_links
                    .iter()
                    .position(|l| keys.iter().all(|k| l.name.contains(k)))
            })
        };
        let mut joints = Vec::with_capacity(24);
        for (name, alts, offset) in table {
            let link = find(alts);
            // shoulders attached to the torso sit to the side of it
            let offset = match (name, link.map(|l| skeleton.body_links[l].name.contains("shoulder"))) {
                ("left_shoulder", Some(false)) => [0.0, 0.15, 0.15],
                ("right_shoulder", Some(false)) => [0.0, -0.15, 0.15],
                _ => offset,
            };
            joints.push(HumanJoint { name: name.to_string(), link, offset });
        }
        Self { joints }
    }

    /// World positions of the human joints for a frame.
    pub fn positions(&self, frame: &PoseFrame) -> Vec<Vector3<f64>> {
        self.joints
            .iter()
            .map(|j| {
                let (pos, rot) = match j.link {
                    Some(l) => (frame.links[l].pos, frame.links[l].rot),
                    None => (frame.root_pos, frame.root_rot),
                };
                pos + rot * Vector3::from(j.offset)
            })
            .collect()
    }
}

/// Slices command windows out of clips.
#[derive(Debug, Clone)]
pub struct CommandSlicer {
    pub layout: HumanLayout,
}

impl CommandSlicer {
    pub fn new(skeleton: &SkeletonSpec) -> Self {
        Self { layout: HumanLayout::default_for(skeleton) }
    }

    /// Future window starting at `t`. Samples at or past the final frame hold
    /// the final pose with zero velocities.
    pub fn slice(&self, clip: &MotionClip, t: f64, kind: CommandKind) -> Result<MotionCommand, MotionError> {
        if clip.is_empty() {
            return Err(MotionError::EmptyClip);
        }
        let heading = clip.frames[clip.index_at(t)].heading_frame()?;
        let dt = kind.frame_interval();
        let sample = |k: usize| sample_frame(clip, t + k as f64 * dt);
        let frames = kind.future_frames();
        let window = match kind {
            CommandKind::Robot => CommandWindow::Robot(
                (0..frames).map(|k| robot_frame(&heading, &sample(k))).collect(),
            ),
            CommandKind::Human => CommandWindow::Human(
                (0..frames)
                    .map(|k| HumanCommandFrame {
                        joints: self
                            .layout
                            .positions(&sample(k))
                            .iter()
                            .map(|p| heading.point_to_local(p))
                            .collect(),
                    })
                    .collect(),
            ),
            CommandKind::Hybrid => {
                let now = sample(0);
                let kp = clip.skeleton.keypoints;
                let key = |i: usize| Keypoint {
                    pos: heading.point_to_local(&now.links[i].pos),
                    rot6d: quat_to_6d(&heading.rot_to_local(&now.links[i].rot)),
                };
                let lower = &clip.skeleton.lower_body_joints;
                CommandWindow::Hybrid(HybridCommand {
                    head: key(kp.head),
                    left_wrist: key(kp.left_wrist),
                    right_wrist: key(kp.right_wrist),
                    lower: (0..frames)
                        .map(|k| {
                            let f = sample(k);
                            LowerBodyFrame {
                                root_pos: heading.point_to_local(&f.root_pos),
                                root_rot6d: quat_to_6d(&heading.rot_to_local(&f.root_rot)),
                                joint_pos: lower.iter().map(|&j| f.joint_pos[j]).collect(),
                                joint_vel: lower.iter().map(|&j| f.joint_vel[j]).collect(),
                            }
                        })
                        .collect(),
                })
            }
        };
        Ok(MotionCommand { time: t, window })
    }
}

/// Convenience wrapper building a slicer with the default human layout.
pub fn slice_command(clip: &MotionClip, t: f64, kind: CommandKind) -> Result<MotionCommand, MotionError> {
    CommandSlicer::new(&clip.skeleton).slice(clip, t, kind)
}

fn sample_frame(clip: &MotionClip, s: f64) -> PoseFrame {
    let last = clip.frames.len() - 1;
    let i = clip.index_at(s);
    if i >= last {
        clip.frames[last].held()
    } else {
        clip.frames[i].clone()
    }
}

fn robot_frame(heading: &HeadingFrame, f: &PoseFrame) -> RobotCommandFrame {
    RobotCommandFrame {
        root_pos: heading.point_to_local(&f.root_pos),
        root_rot6d: quat_to_6d(&heading.rot_to_local(&f.root_rot)),
        root_lin_vel: heading.vector_to_local(&f.root_lin_vel),
        root_ang_vel: heading.vector_to_local(&f.root_ang_vel),
        joint_pos: f.joint_pos.clone(),
        joint_vel: f.joint_vel.clone(),
        link_pos: f.links.iter().map(|l| heading.vector_to_local(&(l.pos - f.root_pos))).collect(),
    }
}
