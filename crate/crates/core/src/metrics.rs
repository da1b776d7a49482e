//! Motion-imitation evaluation: MPJPE, velocity and acceleration errors, and
//! the strict / relaxed success criteria.
//!
//! Internal units are meters; every reported error is converted to mm (per
//! frame, per frame squared) at this boundary.

use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::motion::{MotionClip, PoseFrame};

/// Root height deviation beyond which tracking has failed, meters.
pub const HEIGHT_THRESHOLD: f64 = 0.25;
/// Geodesic root orientation error beyond which strict tracking has failed, radians.
pub const ORIENTATION_THRESHOLD: f64 = 1.0;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("clip lengths differ: {0} vs {1} frames")]
    LengthMismatch(usize, usize),
    #[error("clips use different skeletons")]
    SkeletonMismatch,
    #[error("need at least {needed} frames, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error(transparent)]
    Motion(#[from] crate::motion::MotionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SuccessMode {
    /// Root height and root orientation thresholds.
    Strict,
    /// Root height threshold only.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureReason {
    None,
    HeightDeviation,
    OrientationDeviation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameErrors {
    pub time: f64,
    pub mpjpe_mm: f64,
    pub height_dev_m: f64,
    pub orientation_err_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingReport {
    pub success: bool,
    pub failure_time: Option<f64>,
    pub failure_reason: FailureReason,
    pub mpjpe_mm: f64,
    pub e_vel_mm_per_frame: f64,
    pub e_acc_mm_per_frame2: f64,
    pub per_frame: Vec<FrameErrors>,
}

fn check_aligned(reference: &MotionClip, actual: &MotionClip) -> Result<(), MetricsError> {
    if reference.len() != actual.len() {
        return Err(MetricsError::LengthMismatch(reference.len(), actual.len()));
    }
    if reference.skeleton.link_count() != actual.skeleton.link_count() {
        return Err(MetricsError::SkeletonMismatch);
    }
    Ok(())
}

fn frame_mpjpe(r: &PoseFrame, a: &PoseFrame) -> f64 {
    if r.links.is_empty() {
        return 0.0;
    }
    let sum: f64 = r
        .links
        .iter()
        .zip(&a.links)
        .map(|(lr, la)| ((lr.pos - r.root_pos) - (la.pos - a.root_pos)).norm())
        .sum();
    sum / r.links.len() as f64
}

/// Root-relative mean per-link position error over the tracked link set, mm.
pub fn mpjpe(reference: &MotionClip, actual: &MotionClip) -> Result<f64, MetricsError> {
    check_aligned(reference, actual)?;
    if reference.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = reference.frames.iter().zip(&actual.frames).map(|(r, a)| frame_mpjpe(r, a)).sum();
    Ok(total / reference.len() as f64 * 1000.0)
}

/// k-th forward difference of every link position series.
fn link_differences(clip: &MotionClip, order: usize) -> Vec<Vec<Vector3<f64>>> {
    let mut series: Vec<Vec<Vector3<f64>>> =
        clip.frames.iter().map(|f| f.links.iter().map(|l| l.pos).collect()).collect();
    for _ in 0..order {
        series = series.windows(2).map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| b - a).collect()).collect();
    }
    series
}

fn mean_norm_diff(a: &[Vec<Vector3<f64>>], b: &[Vec<Vector3<f64>>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (x, y) in fa.iter().zip(fb) {
            sum += (x - y).norm();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Velocity (mm/frame) and acceleration (mm/frame^2) errors from forward
/// differences of link positions.
pub fn velocity_acceleration_errors(reference: &MotionClip, actual: &MotionClip) -> Result<(f64, f64), MetricsError> {
    check_aligned(reference, actual)?;
    if reference.len() < 3 {
        return Err(MetricsError::TooShort { needed: 3, got: reference.len() });
    }
    let vel = mean_norm_diff(&link_differences(reference, 1), &link_differences(actual, 1));
    let acc = mean_norm_diff(&link_differences(reference, 2), &link_differences(actual, 2));
    Ok((vel * 1000.0, acc * 1000.0))
}

pub fn e_vel(reference: &MotionClip, actual: &MotionClip) -> Result<f64, MetricsError> {
    Ok(velocity_acceleration_errors(reference, actual)?.0)
}

pub fn e_acc(reference: &MotionClip, actual: &MotionClip) -> Result<f64, MetricsError> {
    Ok(velocity_acceleration_errors(reference, actual)?.1)
}

/// Per-frame failure test shared by the offline and online evaluators.
pub fn frame_failure(reference: &PoseFrame, actual: &PoseFrame, mode: SuccessMode) -> (FrameErrors, FailureReason) {
    let height_dev = (actual.root_pos.z - reference.root_pos.z).abs();
    let ori = reference.root_rot.angle_to(&actual.root_rot);
    let errors = FrameErrors {
        time: reference.time,
        mpjpe_mm: frame_mpjpe(reference, actual) * 1000.0,
        height_dev_m: height_dev,
        orientation_err_rad: ori,
    };
    let reason = if height_dev > HEIGHT_THRESHOLD {
        FailureReason::HeightDeviation
    } else if mode == SuccessMode::Strict && ori > ORIENTATION_THRESHOLD {
        FailureReason::OrientationDeviation
    } else {
        FailureReason::None
    };
    (errors, reason)
}

/// Evaluate success and the error metrics. Velocity and acceleration errors
/// are reported as 0 for clips shorter than three frames.
pub fn check_success(reference: &MotionClip, actual: &MotionClip, mode: SuccessMode) -> Result<TrackingReport, MetricsError> {
    check_aligned(reference, actual)?;
    let mut per_frame = Vec::with_capacity(reference.len());
    let mut failure = None;
    for (r, a) in reference.frames.iter().zip(&actual.frames) {
        let (errors, reason) = frame_failure(r, a, mode);
        if failure.is_none() && reason != FailureReason::None {
            failure = Some((r.time, reason));
        }
        per_frame.push(errors);
    }
    let (e_vel, e_acc) = if reference.len() >= 3 {
        velocity_acceleration_errors(reference, actual)?
    } else {
        (0.0, 0.0)
    };
    Ok(TrackingReport {
        success: failure.is_none(),
        failure_time: failure.map(|f| f.0),
        failure_reason: failure.map(|f| f.1).unwrap_or(FailureReason::None),
        mpjpe_mm: mpjpe(reference, actual)?,
        e_vel_mm_per_frame: e_vel,
        e_acc_mm_per_frame2: e_acc,
        per_frame,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    pub success: bool,
    pub failure_time: Option<f64>,
    pub mpjpe_mm: f64,
    pub e_vel_mm_per_frame: f64,
    pub e_acc_mm_per_frame2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub success_rate: f64,
    /// Means over successfully tracked pairs only.
    pub mpjpe_mm: f64,
    pub e_vel_mm_per_frame: f64,
    pub e_acc_mm_per_frame2: f64,
}

/// Evaluate many pairs on the rayon pool; rows come back in input order so the
/// aggregate is independent of the thread count.
pub fn evaluate_pairs(
    pairs: &[(String, MotionClip, MotionClip)],
    mode: SuccessMode,
) -> Result<(Vec<EvalRow>, DatasetSummary), MetricsError> {
    let rows: Result<Vec<EvalRow>, MetricsError> = pairs
        .par_iter()
        .map(|(name, r, a)| {
            let rep = check_success(r, a, mode)?;
            Ok(EvalRow {
                name: name.clone(),
                success: rep.success,
                failure_time: rep.failure_time,
                mpjpe_mm: rep.mpjpe_mm,
                e_vel_mm_per_frame: rep.e_vel_mm_per_frame,
                e_acc_mm_per_frame2: rep.e_acc_mm_per_frame2,
            })
        })
        .collect();
    let rows = rows?;
    Ok((rows.clone(), summarize(&rows)))
}

pub fn summarize(rows: &[EvalRow]) -> DatasetSummary {
    let ok: Vec<&EvalRow> = rows.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&EvalRow) -> f64| {
        if ok.is_empty() {
            0.0
        } else {
            ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
        }
    };
    DatasetSummary {
        count: rows.len(),
        success_rate: if rows.is_empty() { 0.0 } else { ok.len() as f64 / rows.len() as f64 },
        mpjpe_mm: mean(|r| r.mpjpe_mm),
        e_vel_mm_per_frame: mean(|r| r.e_vel_mm_per_frame),
        e_acc_mm_per_frame2: mean(|r| r.e_acc_mm_per_frame2),
    }
}

/// CSV with one row per pair followed by an `ALL` aggregate row.
pub fn write_report_csv(path: impl AsRef<Path>, rows: &[EvalRow], summary: &DatasetSummary) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["name", "success", "failure_time", "mpjpe_mm", "e_vel_mm_per_frame", "e_acc_mm_per_frame2"])?;
    for r in rows {
        w.write_record([
            r.name.clone(),
            r.success.to_string(),
            r.failure_time.map(|t| t.to_string()).unwrap_or_default(),
            r.mpjpe_mm.to_string(),
            r.e_vel_mm_per_frame.to_string(),
            r.e_acc_mm_per_frame2.to_string(),
        ])?;
    }
    w.write_record([
        "ALL".to_string(),
        summary.success_rate.to_string(),
        String::new(),
        summary.mpjpe_mm.to_string(),
        summary.e_vel_mm_per_frame.to_string(),
        summary.e_acc_mm_per_frame2.to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::motion::{synth, rotation::yaw_quat, SkeletonSpec};
    use std::sync::Arc;

    fn reference() -> MotionClip {
        synth::wave(Arc::new(SkeletonSpec::desk_7dof()), 2.0, 0.5, 0.3)
    }

    fn map_frames(clip: &MotionClip, f: impl Fn(usize, &mut PoseFrame)) -> MotionClip {
        let mut c = clip.clone();
        for (i, fr) in c.frames.iter_mut().enumerate() {
            f(i, fr);
        }
        c
    }

    #[test]
    fn identical_clips_are_zero() {
        let r = reference();
        assert_eq!(mpjpe(&r, &r).unwrap(), 0.0);
        assert_eq!(velocity_acceleration_errors(&r, &r).unwrap(), (0.0, 0.0));
        let rep = check_success(&r, &r, SuccessMode::Strict).unwrap();
        assert!(rep.success);
        assert_eq!(rep.failure_reason, FailureReason::None);
        assert_eq!(rep.failure_time, None);
    }

    #[test]
    fn uniform_link_offset_gives_offset_in_mm() {
        let r = reference();
        let dir = Vector3::new(1.0, 2.0, -2.0) / 3.0;
        let a = map_frames(&r, |_, f| f.links.iter_mut().for_each(|l| l.pos += dir * 0.010));
        assert!((mpjpe(&r, &a).unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn two_link_hand_mean() {
        let mut sk = SkeletonSpec::desk_7dof();
        sk.body_links.truncate(2);
        sk.keypoints = crate::motion::Keypoints { head: 0, left_wrist: 1, right_wrist: 1 };
        sk.feet = vec![1];
        let sk = Arc::new(sk);
        let f = PoseFrame::from_pose(&sk, 0.0, Vector3::new(0.0, 0.0, 0.75), yaw_quat(0.0), vec![0.0; 7]);
        let r = MotionClip::new("r", 50.0, sk.clone(), vec![f.clone()]).unwrap();
        let mut g = f;
        g.links[0].pos.x += 0.030;
        g.links[1].pos.y -= 0.050;
        let a = MotionClip::new("a", 50.0, sk, vec![g]).unwrap();
        assert!((mpjpe(&r, &a).unwrap() - 40.0).abs() < 1e-9);
    }

    #[test]
    fn length_mismatch_errors() {
        let r = reference();
        let mut a = r.clone();
        a.frames.pop();
        assert!(matches!(mpjpe(&r, &a), Err(MetricsError::LengthMismatch(101, 100))));
        let short = MotionClip { frames: r.frames[..2].to_vec(), ..r.clone() };
        assert!(matches!(e_vel(&short, &short), Err(MetricsError::TooShort { .. })));
    }

    #[test]
    fn constant_offset_has_no_velocity_error() {
        let r = reference();
        let a = map_frames(&r, |_, f| f.links.iter_mut().for_each(|l| l.pos += Vector3::new(0.1, -0.2, 0.05)));
        let (v, acc) = velocity_acceleration_errors(&r, &a).unwrap();
        assert!(v.abs() < 1e-9 && acc.abs() < 1e-9);
    }

    #[test]
    fn linear_drift_one_mm_per_frame() {
        let r = reference();
        let a = map_frames(&r, |i, f| f.links.iter_mut().for_each(|l| l.pos.x += 0.001 * i as f64));
        let (v, acc) = velocity_acceleration_errors(&r, &a).unwrap();
        assert!((v - 1.0).abs() < 1e-9, "e_vel {v}");
        assert!(acc.abs() < 1e-9, "e_acc {acc}");
    }

    #[test]
    fn height_ramp_fails_at_crossing() {
        let r = synth::idle(Arc::new(SkeletonSpec::desk_7dof()), 2.0);
        // deviation 0.26 t: crosses 0.25 between frames; exceeds from t = 1.0 s on
        let a = map_frames(&r, |_, f| {
            let dz = if f.time >= 1.0 - 1e-12 { 0.26 } else { 0.2 * f.time };
            f.root_pos.z += dz;
        });
        for mode in [SuccessMode::Strict, SuccessMode::Relaxed] {
            let rep = check_success(&r, &a, mode).unwrap();
            assert!(!rep.success);
            assert_eq!(rep.failure_reason, FailureReason::HeightDeviation);
            assert!((rep.failure_time.unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn orientation_only_fails_strict() {
        let r = synth::idle(Arc::new(SkeletonSpec::desk_7dof()), 1.0);
        let a = map_frames(&r, |_, f| f.root_rot = yaw_quat(1.1) * f.root_rot);
        let strict = check_success(&r, &a, SuccessMode::Strict).unwrap();
        assert!(!strict.success);
        assert_eq!(strict.failure_reason, FailureReason::OrientationDeviation);
        assert_eq!(strict.failure_time, Some(0.0));
        assert!(check_success(&r, &a, SuccessMode::Relaxed).unwrap().success);
    }

    #[test]
    fn metrics_invariant_to_common_rigid_motion() {
        let r = reference();
        let a = map_frames(&r, |i, f| {
            f.root_pos.z += 0.01 * (i as f64 * 0.1).sin();
            f.links.iter_mut().enumerate().for_each(|(k, l)| l.pos.y += 0.003 * k as f64 * (i as f64 * 0.2).cos());
        });
        let base = check_success(&r, &a, SuccessMode::Strict).unwrap();
        let t = Vector3::new(3.0, -1.0, 0.0);
        let moved = check_success(&r.transformed(0.9, &t), &a.transformed(0.9, &t), SuccessMode::Strict).unwrap();
        assert!((base.mpjpe_mm - moved.mpjpe_mm).abs() < 1e-9);
        assert!((base.e_vel_mm_per_frame - moved.e_vel_mm_per_frame).abs() < 1e-9);
        assert!((base.e_acc_mm_per_frame2 - moved.e_acc_mm_per_frame2).abs() < 1e-9);
    }

    #[test]
    fn success_is_monotone_in_deviation() {
        let r = synth::idle(Arc::new(SkeletonSpec::desk_7dof()), 1.0);
        let mut failed = false;
        for k in 0..40 {
            let dz = 0.01 * k as f64;
            let a = map_frames(&r, |_, f| f.root_pos.z += dz);
            let ok = check_success(&r, &a, SuccessMode::Strict).unwrap().success;
            assert!(!(failed && ok), "deviation {dz} flipped failure back to success");
            failed |= !ok;
        }
        assert!(failed);
    }

    #[test]
    fn dataset_order_is_deterministic() {
        let r = reference();
        let pairs: Vec<_> = (0..8)
            .map(|i| {
                let a = map_frames(&r, |_, f| f.links.iter_mut().for_each(|l| l.pos.x += 0.001 * i as f64));
                (format!("p{i}"), r.clone(), a)
            })
            .collect();
        let (rows, summary) = evaluate_pairs(&pairs, SuccessMode::Strict).unwrap();
        assert_eq!(rows.iter().map(|r| r.name.as_str()).collect::<Vec<_>>(), ["p0", "p1", "p2", "p3", "p4", "p5", "p6", "p7"]);
        assert!((summary.mpjpe_mm - 3.5).abs() < 1e-9);
        assert_eq!(summary.success_rate, 1.0);
    }
}
