use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::codec::STRIDE;
use super::spring::SpringTarget;
use super::PlanError;
use crate::motion::rotation::{heading_of, wrap_angle};
use crate::motion::{load_clip, MotionClip, PoseFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Style,
    Skill,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Clip file name relative to the library directory.
    pub file: String,
    pub kind: EntryKind,
    pub id: String,
    /// Root height range over the clip, meters.
    pub pelvis_height: [f64; 2],
    pub frames: usize,
}

/// `manifest.json` of a library directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LibraryManifest {
    pub skeleton: String,
    pub entries: Vec<ManifestEntry>,
}

impl LibraryManifest {
    pub const FILE: &'static str = "manifest.json";
}

/// Four consecutive frames and the root height of the first one.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillKeyframe {
    pub height: f64,
    pub frames: Vec<PoseFrame>,
}

/// Style clips for navigation and height-indexed keyframes for skills.
#[derive(Debug, Clone, Default)]
pub struct MotionLibrary {
    pub styles: BTreeMap<String, Vec<MotionClip>>,
    pub skills: BTreeMap<String, Vec<SkillKeyframe>>,
}

impl MotionLibrary {
    pub fn add_style(&mut self, id: &str, clip: MotionClip) {
        self.styles.entry(id.to_string()).or_default().push(clip);
    }

    /// Index a skill clip: one keyframe window every `hop` frames.
    pub fn add_skill(&mut self, id: &str, clip: &MotionClip, hop: usize) {
        let list = self.skills.entry(id.to_string()).or_default();
        if clip.len() < STRIDE {
            return;
        }
        for s in (0..=clip.len() - STRIDE).step_by(hop.max(1)) {
            let frames = clip.frames[s..s + STRIDE].to_vec();
            list.push(SkillKeyframe { height: frames[0].root_pos.z, frames });
        }
    }

    pub fn add_skill_keyframe(&mut self, id: &str, keyframe: SkillKeyframe) {
        self.skills.entry(id.to_string()).or_default().push(keyframe);
    }

    /// Every style clip, for building predictor libraries.
    pub fn all_clips(&self) -> Vec<MotionClip> {
        self.styles.values().flatten().cloned().collect()
    }

    /// Load `manifest.json` and its clips from `dir`.
    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, LibraryManifest), PlanError> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join(LibraryManifest::FILE))?;
        let manifest: LibraryManifest = serde_json::from_str(&text).map_err(|e| PlanError::Manifest(e.to_string()))?;
        let mut lib = Self::default();
        for e in &manifest.entries {
            let clip = load_clip(dir.join(&e.file))?;
            match e.kind {
                EntryKind::Style => lib.add_style(&e.id, clip),
                EntryKind::Skill => lib.add_skill(&e.id, &clip, 5),
            }
        }
        Ok((lib, manifest))
    }

    /// A random 4-frame window from a random clip of `style`.
    pub fn style_keyframes<R: Rng + ?Sized>(&self, style: &str, rng: &mut R) -> Result<Vec<PoseFrame>, PlanError> {
        let clips = self.styles.get(style).filter(|c| !c.is_empty()).ok_or_else(|| PlanError::UnknownStyle(style.into()))?;
        let clip = &clips[rng.gen_range(0..clips.len())];
        if clip.len() < STRIDE {
            return Err(PlanError::EmptyLibrary(format!("style clip {} is shorter than {STRIDE} frames", clip.name)));
        }
        let s = rng.gen_range(0..=clip.len() - STRIDE);
        Ok(clip.frames[s..s + STRIDE].to_vec())
    }

    /// The keyframe of `skill` whose root height is nearest to `height`; ties
    /// go to the lower height.
    pub fn skill_keyframes(&self, skill: &str, height: f64) -> Result<Vec<PoseFrame>, PlanError> {
        let list = self.skills.get(skill).filter(|l| !l.is_empty()).ok_or_else(|| PlanError::UnknownSkill(skill.into()))?;
        let best = list
            .iter()
            .min_by(|a, b| (a.height - height).abs().total_cmp(&(b.height - height).abs()).then(a.height.total_cmp(&b.height)))
            .expect("non-empty");
        Ok(best.frames.clone())
    }
}

/// Move keyframes rigidly so the first one sits at the target position and
/// heading; heights are unchanged.
pub fn align_keyframes(frames: &[PoseFrame], target: &SpringTarget) -> Vec<PoseFrame> {
    let first = &frames[0];
    let yaw = wrap_angle(target.heading - heading_of(&first.root_rot));
    let turned = nalgebra::UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw) * first.root_pos;
    let shift = Vector3::new(target.pos[0] - turned.x, target.pos[1] - turned.y, 0.0);
    frames.iter().map(|f| f.transformed(yaw, &shift)).collect()
}
