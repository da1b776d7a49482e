use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use super::ServiceError;
use crate::motion::io::{load_clip_with, LoadOptions};
use crate::motion::{MotionClip, SkeletonSpec};
use crate::planner::{EntryKind, LibraryManifest, ManifestEntry, MotionLibrary};

/// Clip ids treated as skills; everything else is a navigation style.
pub const SKILLS: [&str; 4] = ["squat", "kneel", "crawl", "box"];

#[derive(Debug, Clone, Default)]
pub struct IngestOptions<'a> {
    pub expected_skeleton: Option<&'a SkeletonSpec>,
    /// Resample clips recorded at other rates instead of rejecting them.
    pub resample: bool,
    /// Keyframe hop for skill clips, frames.
    pub skill_hop: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub manifest: LibraryManifest,
    pub library: MotionLibrary,
    pub rejected: Vec<Rejected>,
    pub warnings: Vec<String>,
}

/// Id of a clip file: the stem up to the first `_` (`walk_03.mclp` is a
/// `walk` clip).
pub fn clip_id(file: &Path) -> String {
    let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stem.split('_').next().unwrap_or_default().to_string()
}

fn is_clip_file(p: &Path) -> bool {
    p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("mclp" | "jsonl"))
}

/// Validate every clip in `dir` and index the good ones. Two files with
/// the same stem or the same embedded clip name fail the whole ingest.
pub fn ingest_dataset(dir: impl AsRef<Path>, opts: &IngestOptions) -> Result<IngestReport, ServiceError> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_clip_file(p)).collect();
    files.sort();

    let mut stems: BTreeMap<String, &Path> = BTreeMap::new();
    for f in &files {
        let stem = f.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(prev) = stems.insert(stem.clone(), f) {
            return Err(ServiceError::Ingest(format!("duplicate clip name {stem}: {} and {}", prev.display(), f.display())));
        }
    }

    let load = LoadOptions { expected_skeleton: opts.expected_skeleton, resample: opts.resample };
    let mut accepted: Vec<(PathBuf, MotionClip)> = Vec::new();
    let mut rejected = Vec::new();
    let mut names: BTreeMap<String, PathBuf> = BTreeMap::new();
    for f in files {
        let file = f.file_name().unwrap_or_default().to_string_lossy().into_owned();
        match load_clip_with(&f, &load).and_then(|c| c.validate().map(|_| c)) {
            Ok(clip) => {
                if let Some(prev) = names.insert(clip.name.clone(), f.clone()) {
                    return Err(ServiceError::Ingest(format!("duplicate clip name {}: {} and {}", clip.name, prev.display(), f.display())));
                }
                accepted.push((f, clip));
            }
            Err(e) => rejected.push(Rejected { file, reason: e.to_string() }),
        }
    }

    let mut warnings = Vec::new();
    if accepted.is_empty() {
        let w = format!("no usable clips in {}", dir.display());
        warn!("{w}");
        warnings.push(w);
    }
    let skeletons: Vec<&str> = accepted.iter().map(|(_, c)| c.skeleton.name.as_str()).collect();
    if let Some(first) = skeletons.first() {
        if skeletons.iter().any(|s| s != first) {
            return Err(ServiceError::Ingest("clips use more than one skeleton".into()));
        }
    }

    let mut manifest = LibraryManifest { skeleton: skeletons.first().map(|s| s.to_string()).unwrap_or_default(), entries: Vec::new() };
    let mut library = MotionLibrary::default();
    for (path, clip) in accepted {
        let id = clip_id(&path);
        let kind = if SKILLS.contains(&id.as_str()) { EntryKind::Skill } else { EntryKind::Style };
        let z = clip.frames.iter().map(|f| f.root_pos.z);
        let pelvis_height = [z.clone().fold(f64::INFINITY, f64::min), z.fold(f64::NEG_INFINITY, f64::max)];
        manifest.entries.push(ManifestEntry {
            file: path.file_name().unwrap_or_default().to_string_lossy().into_owned(),
            kind,
            id: id.clone(),
            pelvis_height,
            frames: clip.len(),
        });
        match kind {
            EntryKind::Style => library.add_style(&id, clip),
            EntryKind::Skill => library.add_skill(&id, &clip, opts.skill_hop.max(1)),
        }
    }
    Ok(IngestReport { manifest, library, rejected, warnings })
}

/// Write `manifest.json` into `dir`.
pub fn write_manifest(dir: impl AsRef<Path>, manifest: &LibraryManifest) -> Result<PathBuf, ServiceError> {
    let path = dir.as_ref().join(LibraryManifest::FILE);
    let text = serde_json::to_string_pretty(manifest).map_err(|e| ServiceError::Ingest(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}
