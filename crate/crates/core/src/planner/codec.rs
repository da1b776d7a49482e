use std::collections::HashMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::motion::rotation::{heading_of, quat_from_6d, quat_to_6d, HeadingFrame};
use crate::motion::{PoseFrame, SkeletonSpec};

/// Frames per token.
pub const STRIDE: usize = 4;

/// Width of the per-frame representation for `joints` joints: local root
/// position, local root 6D rotation, joint angles.
pub fn feature_width(joints: usize) -> usize {
    9 + joints
}

/// Heading frame at the root of `frame`; planner features are expressed in it.
/// The origin sits on the ground below the root so features keep the
/// absolute root height.
pub fn canonical_frame(frame: &PoseFrame) -> HeadingFrame {
    HeadingFrame::new(Vector3::new(frame.root_pos.x, frame.root_pos.y, 0.0), heading_of(&frame.root_rot))
}

pub fn frame_features(frame: &PoseFrame, hf: &HeadingFrame) -> Vec<f64> {
    let mut v = Vec::with_capacity(feature_width(frame.joint_pos.len()));
    v.extend_from_slice(hf.point_to_local(&frame.root_pos).as_slice());
    v.extend_from_slice(&quat_to_6d(&hf.rot_to_local(&frame.root_rot)));
    v.extend_from_slice(&frame.joint_pos);
    v
}

/// Static frame from features, by forward kinematics.
pub fn features_to_frame(feat: &[f64], hf: &HeadingFrame, skeleton: &SkeletonSpec, time: f64) -> Result<PoseFrame, PlanError> {
    let pos = hf.point_to_world(&Vector3::new(feat[0], feat[1], feat[2]));
    let r6: [f64; 6] = feat[3..9].try_into().expect("feature width");
    let rot = hf.rot_to_world(&quat_from_6d(&r6)?);
    Ok(PoseFrame::from_pose(skeleton, time, pos, rot, feat[9..].to_vec()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reconstruction {
    /// Each token's value is repeated over its 4 frames.
    Hold,
    /// Linear interpolation between token centers, extrapolated past the ends.
    Linear,
}

/// Strided-average codec with a uniform quantization lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodecSpec {
    pub step: f64,
    /// Codes are clamped to `[-max_code, max_code]`.
    pub max_code: i32,
    pub reconstruction: Reconstruction,
    /// Accepted round-trip error per feature on smooth motion.
    pub tolerance: f64,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self { step: 1e-3, max_code: 1 << 20, reconstruction: Reconstruction::Linear, tolerance: 0.05 }
    }
}

pub type Token = Vec<i32>;

impl CodecSpec {
    pub fn encode(&self, frames: &[Vec<f64>]) -> Result<Vec<Token>, PlanError> {
        if frames.len() % STRIDE != 0 || frames.is_empty() {
            return Err(PlanError::FrameCount(frames.len()));
        }
        Ok(frames
            .chunks(STRIDE)
            .map(|block| {
                (0..block[0].len())
                    .map(|d| {
                        let mean = block.iter().map(|f| f[d]).sum::<f64>() / STRIDE as f64;
                        ((mean / self.step).round() as i64).clamp(-self.max_code as i64, self.max_code as i64) as i32
                    })
                    .collect()
            })
            .collect())
    }

    pub fn dequantize(&self, token: &[i32]) -> Vec<f64> {
        token.iter().map(|&c| c as f64 * self.step).collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = tokens.iter().map(|t| self.dequantize(t)).collect();
        let n = tokens.len() * STRIDE;
        match self.reconstruction {
            Reconstruction::Hold => (0..n).map(|f| values[f / STRIDE].clone()).collect(),
            Reconstruction::Linear => (0..n)
                .map(|f| {
                    // token k sits at frame 4k + 1.5; the ends extrapolate the outer pair
                    if values.len() == 1 {
                        return values[0].clone();
                    }
                    let u = (f as f64 - 1.5) / STRIDE as f64;
                    let k = (u.floor().max(0.0) as usize).min(values.len() - 2);
                    let a = u - k as f64;
                    values[k].iter().zip(&values[k + 1]).map(|(x, y)| x + a * (y - x)).collect()
                })
                .collect(),
        }
    }
}

/// Finite token vocabulary: every distinct token seen while building a library.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub entries: Vec<Token>,
    index: HashMap<Token, usize>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Id of `token`, adding it if new.
    pub fn insert(&mut self, token: &[i32]) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.entries.push(token.to_vec());
        self.index.insert(token.to_vec(), self.entries.len() - 1);
        self.entries.len() - 1
    }

    pub fn id(&self, token: &[i32]) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self, ids: &[usize]) -> Vec<Token> {
        ids.iter().map(|&i| self.entries[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::synth;
    use std::sync::Arc;

    #[test]
    fn token_count_is_quarter() {
        let c = CodecSpec::default();
        let frames = vec![vec![0.1, 0.2]; 240];
        assert_eq!(c.encode(&frames).unwrap().len(), 60);
        assert!(matches!(c.encode(&frames[..238]), Err(PlanError::FrameCount(238))));
    }

    #[test]
    fn piecewise_constant_on_lattice_is_exact() {
        let c = CodecSpec { reconstruction: Reconstruction::Hold, ..Default::default() };
        let frames: Vec<Vec<f64>> = (0..16).map(|f| vec![(f / 4) as f64 * 0.25, -0.5]).collect();
        assert_eq!(c.decode(&c.encode(&frames).unwrap()), frames);
        let lin = CodecSpec::default();
        let constant = vec![vec![0.125, -2.0, 3.0]; 12];
        assert_eq!(lin.decode(&lin.encode(&constant).unwrap()), constant);
    }

    #[test]
    fn features_invert() {
        let sk = Arc::new(SkeletonSpec::desk_7dof());
        let clip = synth::wave_with_heading(sk.clone(), 1.0, 0.8, 0.3, 2.0, 0.3);
        let hf = canonical_frame(&clip.frames[3]);
        for f in &clip.frames {
            let back = features_to_frame(&frame_features(f, &hf), &hf, &sk, f.time).unwrap();
            assert!((back.root_pos - f.root_pos).norm() < 1e-12);
            assert!(back.root_rot.angle_to(&f.root_rot) < 1e-7);
            for (a, b) in back.links.iter().zip(&f.links) {
                assert!((a.pos - b.pos).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn vocabulary_dedups() {
        let mut v = Vocabulary::default();
        assert_eq!(v.insert(&[1, 2]), 0);
        assert_eq!(v.insert(&[3, 2]), 1);
        assert_eq!(v.insert(&[1, 2]), 0);
        assert_eq!(v.id(&[3, 2]), Some(1));
        assert_eq!(v.len(), 2);
    }
}
