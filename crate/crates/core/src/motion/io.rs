//! Clip files: the binary `MCLP` v1 format and its line-delimited JSON twin.
//! Both layouts are described in `docs/formats.md`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{LinkState, MotionClip, MotionError, PoseFrame, SkeletonSpec, DEFAULT_FPS};

pub const MAGIC: &[u8; 4] = b"MCLP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default)]
pub struct LoadOptions<'a> {
    /// Reject clips whose embedded skeleton differs from this one.
    pub expected_skeleton: Option<&'a SkeletonSpec>,
    /// Resample clips recorded at another rate to 50 Hz instead of failing.
    pub resample: bool,
}

/// Number of f64 values in one frame record.
pub fn record_len(joints: usize, links: usize) -> usize {
    1 + 3 + 4 + 3 + 3 + 2 * joints + 13 * links
}

fn push_quat(out: &mut Vec<f64>, q: &UnitQuaternion<f64>) {
    let q = q.quaternion();
    out.extend([q.w, q.i, q.j, q.k]);
}

/// Frame fields in declared order.
pub fn frame_record(f: &PoseFrame) -> Vec<f64> {
    let mut v = Vec::with_capacity(record_len(f.joint_pos.len(), f.links.len()));
    v.push(f.time);
    v.extend(f.root_pos.iter());
    push_quat(&mut v, &f.root_rot);
    v.extend(f.root_lin_vel.iter());
    v.extend(f.root_ang_vel.iter());
    v.extend_from_slice(&f.joint_pos);
    v.extend_from_slice(&f.joint_vel);
    for l in &f.links {
        v.extend(l.pos.iter());
        push_quat(&mut v, &l.rot);
        v.extend(l.lin_vel.iter());
        v.extend(l.ang_vel.iter());
    }
    v
}

fn frame_from_record(r: &[f64], joints: usize, links: usize) -> Result<PoseFrame, MotionError> {
    if r.len() != record_len(joints, links) {
        return Err(MotionError::Corrupt(format!(
            "frame record has {} values, expected {}",
            r.len(),
            record_len(joints, links)
        )));
    }
    let v3 = |o: usize| Vector3::new(r[o], r[o + 1], r[o + 2]);
    // stored quaternions are unit already; keep their exact bits
    let quat = |o: usize| -> Result<UnitQuaternion<f64>, MotionError> {
        let q = Quaternion::new(r[o], r[o + 1], r[o + 2], r[o + 3]);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(MotionError::InvalidRotation(q.norm()));
        }
        Ok(UnitQuaternion::new_unchecked(q))
    };
    let jp = 14;
    let lp = jp + 2 * joints;
    let mut link_states = Vec::with_capacity(links);
    for k in 0..links {
        let o = lp + 13 * k;
        link_states.push(LinkState { pos: v3(o), rot: quat(o + 3)?, lin_vel: v3(o + 7), ang_vel: v3(o + 10) });
    }
    Ok(PoseFrame {
        time: r[0],
        root_pos: v3(1),
        root_rot: quat(4)?,
        root_lin_vel: v3(8),
        root_ang_vel: v3(11),
        joint_pos: r[jp..jp + joints].to_vec(),
        joint_vel: r[jp + joints..lp].to_vec(),
        links: link_states,
    })
}

pub fn encode_binary(clip: &MotionClip) -> Vec<u8> {
    let skel = clip.skeleton.to_json();
    let nj = clip.skeleton.joint_count();
    let nl = clip.skeleton.link_count();
    let mut out = Vec::with_capacity(64 + skel.len() + clip.len() * 8 * record_len(nj, nl));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&clip.fps.to_le_bytes());
    out.extend_from_slice(&(skel.len() as u32).to_le_bytes());
    out.extend_from_slice(skel.as_bytes());
    out.extend_from_slice(&(clip.name.len() as u32).to_le_bytes());
    out.extend_from_slice(clip.name.as_bytes());
    out.extend_from_slice(&(nj as u32).to_le_bytes());
    out.extend_from_slice(&(nl as u32).to_le_bytes());
    out.extend_from_slice(&(clip.len() as u64).to_le_bytes());
    for f in &clip.frames {
        for x in frame_record(f) {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], MotionError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(MotionError::Truncated { needed: n, available });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MotionError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, MotionError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, MotionError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, MotionError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| MotionError::Corrupt(e.to_string()))
    }
}

pub fn decode_binary(bytes: &[u8], opts: &LoadOptions) -> Result<MotionClip, MotionError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(MotionError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(MotionError::UnsupportedVersion(version));
    }
    let fps = r.f64()?;
    let skeleton = SkeletonSpec::from_json(&r.string()?)?;
    let name = r.string()?;
    let nj = r.u32()? as usize;
    let nl = r.u32()? as usize;
    if nj != skeleton.joint_count() || nl != skeleton.link_count() {
        return Err(MotionError::Corrupt("record widths disagree with the embedded skeleton".into()));
    }
    let count = r.u64()? as usize;
    let width = record_len(nj, nl);
    let needed = count.checked_mul(width * 8).ok_or_else(|| MotionError::Corrupt("frame count overflow".into()))?;
    if needed > bytes.len() - r.pos {
        return Err(MotionError::Truncated { needed, available: bytes.len() - r.pos });
    }
    let mut frames = Vec::with_capacity(count);
    let mut record = vec![0.0; width];
    for _ in 0..count {
        for x in record.iter_mut() {
            *x = r.f64()?;
        }
        frames.push(frame_from_record(&record, nj, nl)?);
    }
    if r.pos != bytes.len() {
        return Err(MotionError::Corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    finish(name, fps, skeleton, frames, opts)
}

fn finish(
    name: String,
    fps: f64,
    skeleton: SkeletonSpec,
    frames: Vec<PoseFrame>,
    opts: &LoadOptions,
) -> Result<MotionClip, MotionError> {
    if let Some(expected) = opts.expected_skeleton {
        if *expected != skeleton {
            return Err(MotionError::SkeletonMismatch { expected: expected.name.clone(), found: skeleton.name });
        }
    }
    let clip = MotionClip::new(name, fps, Arc::new(skeleton), frames)?;
    if fps != DEFAULT_FPS {
        if opts.resample {
            return clip.resampled(DEFAULT_FPS);
        }
        return Err(MotionError::UnexpectedFps(fps));
    }
    Ok(clip)
}

#[derive(Serialize, Deserialize)]
struct TextHeader {
    format: String,
    version: u32,
    fps: f64,
    name: String,
    frames: usize,
    skeleton: SkeletonSpec,
}

/// Line-delimited JSON: a header object, then one array per frame.
pub fn encode_text(clip: &MotionClip) -> String {
    let header = TextHeader {
        format: "MCLP".into(),
        version: VERSION,
        fps: clip.fps,
        name: clip.name.clone(),
        frames: clip.len(),
        skeleton: (*clip.skeleton).clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for f in &clip.frames {
        out.push_str(&serde_json::to_string(&frame_record(f)).expect("numbers serialize"));
        out.push('\n');
    }
    out
}

pub fn decode_text(text: &str, opts: &LoadOptions) -> Result<MotionClip, MotionError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(MotionError::Truncated { needed: 1, available: 0 })?;
    let header: TextHeader =
        serde_json::from_str(first).map_err(|e| MotionError::Corrupt(format!("header: {e}")))?;
    if header.format != "MCLP" {
        return Err(MotionError::BadMagic);
    }
    if header.version != VERSION {
        return Err(MotionError::UnsupportedVersion(header.version));
    }
    header.skeleton.validate()?;
    let nj = header.skeleton.joint_count();
    let nl = header.skeleton.link_count();
    let mut frames = Vec::with_capacity(header.frames);
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let rec: Vec<f64> = serde_json::from_str(line).map_err(|e| MotionError::Corrupt(e.to_string()))?;
        frames.push(frame_from_record(&rec, nj, nl)?);
    }
    if frames.len() != header.frames {
        return Err(MotionError::Truncated { needed: header.frames, available: frames.len() });
    }
    finish(header.name, header.fps, header.skeleton, frames, opts)
}

/// Text variant is chosen for `.jsonl` paths.
pub fn save_clip(clip: &MotionClip, path: impl AsRef<Path>) -> Result<(), MotionError> {
    let path = path.as_ref();
    if is_text_path(path) {
        std::fs::write(path, encode_text(clip))?;
    } else {
        std::fs::write(path, encode_binary(clip))?;
    }
    Ok(())
}

pub fn load_clip(path: impl AsRef<Path>) -> Result<MotionClip, MotionError> {
    load_clip_with(path, &LoadOptions::default())
}

/// Format is sniffed from the leading bytes.
pub fn load_clip_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<MotionClip, MotionError> {
    let bytes = std::fs::read(path)?;
    decode_bytes(&bytes, opts)
}

pub fn decode_bytes(bytes: &[u8], opts: &LoadOptions) -> Result<MotionClip, MotionError> {
    if bytes.first() == Some(&b'{') {
        let text = std::str::from_utf8(bytes).map_err(|e| MotionError::Corrupt(e.to_string()))?;
        decode_text(text, opts)
    } else {
        decode_binary(bytes, opts)
    }
}

fn is_text_path(path: &Path) -> bool {
    path.extension().map(|e| e == "jsonl").unwrap_or(false)
}
