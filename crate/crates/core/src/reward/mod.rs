//! Tracking reward, penalty terms and domain randomization.

mod dr;

pub use dr::{perturb_target, push_schedule, sample_dr, DrConfig, DrSample, PushEvent, Range};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::motion::rotation::{quat_to_6d, rot6_dist2, Rot6};
use crate::motion::{PoseFrame, SkeletonSpec};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("link sets differ: {0} vs {1} links")]
    LinkMismatch(usize, usize),
    #[error("empty body link set")]
    NoLinks,
    #[error("length mismatch in {what}: {expected} vs {found}")]
    Length { what: &'static str, expected: usize, found: usize },
    #[error("invalid randomization range {name}: [{lo}, {hi}]")]
    InvalidRange { name: String, lo: f64, hi: f64 },
}

/// Kernel scales of the exponential tracking terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelScales {
    pub ori: f64,
    pub pos: f64,
    pub lin: f64,
    pub ang: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub root_ori: f64,
    pub body_pos: f64,
    pub body_ori: f64,
    pub body_lin: f64,
    pub body_ang: f64,
    pub action_rate: f64,
    pub joint_limit: f64,
    pub undesired_contact: f64,
    /// Contact force above which a non-exempt link counts as an undesired contact, N.
    pub contact_force_threshold: f64,
    pub scales: KernelScales,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            root_ori: 0.5,
            body_pos: 1.0,
            body_ori: 1.0,
            body_lin: 1.0,
            body_ang: 1.0,
            action_rate: -0.1,
            joint_limit: -10.0,
            undesired_contact: -0.1,
            contact_force_threshold: 1.0,
            scales: KernelScales { ori: 0.4, pos: 0.3, lin: 1.0, ang: 3.14 },
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        let tracking = [self.root_ori, self.body_pos, self.body_ori, self.body_lin, self.body_ang];
        if tracking.iter().any(|w| !(*w > 0.0)) {
            return Err("tracking weights must be positive".into());
        }
        if [self.action_rate, self.joint_limit, self.undesired_contact].iter().any(|w| !(*w < 0.0)) {
            return Err("penalty weights must be negative".into());
        }
        let s = self.scales;
        if [s.ori, s.pos, s.lin, s.ang].iter().any(|x| !(*x > 0.0)) {
            return Err("kernel scales must be positive".into());
        }
        Ok(())
    }

    /// Upper bound of the tracking reward (every term at 1).
    pub fn max_tracking(&self) -> f64 {
        self.root_ori + self.body_pos + self.body_ori + self.body_lin + self.body_ang
    }
}

/// State compared by the tracking reward. Link positions and orientations are
/// relative to the root; root orientation and link velocities are in a frame
/// shared by both sides (world or heading).
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    pub root_rot6d: Rot6,
    pub link_pos_rel: Vec<Vector3<f64>>,
    pub link_rot6d_rel: Vec<Rot6>,
    pub link_lin_vel: Vec<Vector3<f64>>,
    pub link_ang_vel: Vec<Vector3<f64>>,
}

impl TrackingState {
    pub fn from_frame(frame: &PoseFrame) -> Self {
        let inv = frame.root_rot.inverse();
        Self {
            root_rot6d: frame.root_rot6d(),
            link_pos_rel: frame.links.iter().map(|l| inv * (l.pos - frame.root_pos)).collect(),
            link_rot6d_rel: frame.links.iter().map(|l| quat_to_6d(&(inv * l.rot))).collect(),
            link_lin_vel: frame.links.iter().map(|l| l.lin_vel).collect(),
            link_ang_vel: frame.links.iter().map(|l| l.ang_vel).collect(),
        }
    }

    fn link_count(&self) -> Result<usize, RewardError> {
        let n = self.link_pos_rel.len();
        for (what, len) in [
            ("link orientations", self.link_rot6d_rel.len()),
            ("link linear velocities", self.link_lin_vel.len()),
            ("link angular velocities", self.link_ang_vel.len()),
        ] {
            if len != n {
                return Err(RewardError::Length { what, expected: n, found: len });
            }
        }
        Ok(n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingBreakdown {
    pub root_ori: f64,
    pub body_pos: f64,
    pub body_ori: f64,
    pub body_lin: f64,
    pub body_ang: f64,
    pub total: f64,
}

fn kernel(err2: f64, scale: f64) -> f64 {
    (-err2 / (scale * scale)).exp()
}

fn mean_dist2<T>(a: &[T], b: &[T], d: impl Fn(&T, &T) -> f64) -> f64 {
    a.iter().zip(b).map(|(x, y)| d(x, y)).sum::<f64>() / a.len() as f64
}

/// Weighted tracking terms; each term is already multiplied by its weight and
/// `total` is their sum.
pub fn tracking_reward(p: &TrackingState, g: &TrackingState, w: &RewardWeights) -> Result<TrackingBreakdown, RewardError> {
    let (np, ng) = (p.link_count()?, g.link_count()?);
    if np != ng {
        return Err(RewardError::LinkMismatch(np, ng));
    }
    if np == 0 {
        return Err(RewardError::NoLinks);
    }
    let s = w.scales;
    let v2 = |a: &Vector3<f64>, b: &Vector3<f64>| (a - b).norm_squared();
    let root_ori = w.root_ori * kernel(rot6_dist2(&p.root_rot6d, &g.root_rot6d), s.ori);
    let body_pos = w.body_pos * kernel(mean_dist2(&p.link_pos_rel, &g.link_pos_rel, v2), s.pos);
    let body_ori = w.body_ori * kernel(mean_dist2(&p.link_rot6d_rel, &g.link_rot6d_rel, rot6_dist2), s.ori);
    let body_lin = w.body_lin * kernel(mean_dist2(&p.link_lin_vel, &g.link_lin_vel, v2), s.lin);
    let body_ang = w.body_ang * kernel(mean_dist2(&p.link_ang_vel, &g.link_ang_vel, v2), s.ang);
    Ok(TrackingBreakdown {
        root_ori,
        body_pos,
        body_ori,
        body_lin,
        body_ang,
        total: root_ori + body_pos + body_ori + body_lin + body_ang,
    })
}

/// Per-link contact flags and force magnitudes, N.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContactReport {
    pub in_contact: Vec<bool>,
    pub force: Vec<f64>,
}

impl ContactReport {
    pub fn none(links: usize) -> Self {
        Self { in_contact: vec![false; links], force: vec![0.0; links] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyBreakdown {
    pub action_rate: f64,
    pub joint_limit: f64,
    pub undesired_contact: f64,
    pub violations: usize,
    pub undesired_contacts: usize,
    pub total: f64,
}

/// Action-rate, joint-limit and undesired-contact penalties (all ≤ 0).
pub fn penalty(
    skeleton: &SkeletonSpec,
    joint_pos: &[f64],
    action: &[f64],
    prev_action: &[f64],
    contacts: &ContactReport,
    w: &RewardWeights,
) -> Result<PenaltyBreakdown, RewardError> {
    let nj = skeleton.joint_count();
    for (what, len) in [("joint positions", joint_pos.len()), ("action", action.len()), ("previous action", prev_action.len())] {
        if len != nj {
            return Err(RewardError::Length { what, expected: nj, found: len });
        }
    }
    if contacts.force.len() != skeleton.link_count() {
        return Err(RewardError::Length { what: "contact forces", expected: skeleton.link_count(), found: contacts.force.len() });
    }
    let rate: f64 = action.iter().zip(prev_action).map(|(a, b)| (a - b) * (a - b)).sum();
    let violations = joint_pos
        .iter()
        .zip(&skeleton.joint_limits)
        .filter(|(q, [lo, hi])| **q < *lo || **q > *hi)
        .count();
    let undesired = contacts
        .force
        .iter()
        .enumerate()
        .filter(|(i, f)| **f > w.contact_force_threshold && !skeleton.is_contact_exempt(*i))
        .count();
    let action_rate = w.action_rate * rate;
    let joint_limit = w.joint_limit * violations as f64;
    let undesired_contact = w.undesired_contact * undesired as f64;
    Ok(PenaltyBreakdown {
        action_rate,
        joint_limit,
        undesired_contact,
        violations,
        undesired_contacts: undesired,
        total: action_rate + joint_limit + undesired_contact,
    })
}
