//! Metrics: registration error, IoU, frame-time profiles and the studies
//! built on them.

mod hand_corpus;
mod occlusion;
mod studies;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Pose6DoF};
use crate::image::Mask;

pub use hand_corpus::{detect_entry, evaluate_hand_corpus, generate_hand_corpus, CorpusEntry, CorpusIndex, HandEvalReport, CORPUS_INDEX};
pub use occlusion::{occlusion_study, OcclusionReport, OcclusionScene};
pub use studies::{
    error_propagation, marker_size_sweep, partial_marker_study, registration_study, PartialMarkerReport, PropagationReport,
    RegistrationStudy, SweepRow, TrialSetup,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask sizes differ: {0}x{1} vs {2}x{3}")]
    Size(u32, u32, u32, u32),
    #[error("need at least {need} samples, got {got}")]
    Sample { need: usize, got: usize },
    #[error("invalid corpus: {0}")]
    Corpus(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
    #[error(transparent)]
    Hand(#[from] crate::hand::HandError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

/// Pearson coefficient; `None` when fewer than three samples or a variance
/// vanishes.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len().min(ys.len());
    if n < 3 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs[..n].iter().zip(&ys[..n]) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    let denom = (sxx * syy).sqrt();
    (denom > 1e-300 && denom.is_finite()).then(|| (sxy / denom).clamp(-1.0, 1.0))
}

/// Median of the finite values; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    percentile(values, 0.5)
}

/// Linear-interpolated percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    if lo == hi || v[hi] == v[lo] {
        v[lo]
    } else {
        v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointError {
    pub point: [f64; 3],
    /// Distance of the anchored point from the marker origin.
    pub distance_mm: f64,
    pub error_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub points: Vec<PointError>,
    pub mean_mm: f64,
    pub max_mm: f64,
    /// Mean pixel distance between the two projections, over points that
    /// project under both poses. Zero when no intrinsics were given.
    pub image_mean_px: f64,
    pub correlation: f64,
    /// Correlation undefined (too few points or no spread).
    pub degenerate: bool,
}

/// Per-point 3D error between the model placed by `estimated` and by
/// `truth` (both marker → camera), `anchor` mapping model → marker.
pub fn registration_error(estimated: &Pose6DoF, truth: &Pose6DoF, points: &[Point3<f64>], anchor: &Pose6DoF) -> RegistrationReport {
    registration_error_px(estimated, truth, points, anchor, None)
}

pub fn registration_error_px(
    estimated: &Pose6DoF,
    truth: &Pose6DoF,
    points: &[Point3<f64>],
    anchor: &Pose6DoF,
    k: Option<&CameraIntrinsics>,
) -> RegistrationReport {
    let est = estimated.compose(anchor);
    let tru = truth.compose(anchor);
    let per: Vec<PointError> = points
        .iter()
        .map(|p| {
            let world = anchor.transform_point(p);
            PointError {
                point: [p.x, p.y, p.z],
                distance_mm: world.coords.norm(),
                error_mm: (est.transform_point(p) - tru.transform_point(p)).norm(),
            }
        })
        .collect();
    let n = per.len().max(1) as f64;
    let mean_mm = per.iter().map(|e| e.error_mm).sum::<f64>() / n;
    let max_mm = per.iter().map(|e| e.error_mm).fold(0.0, f64::max);
    let image_mean_px = k
        .map(|k| {
            let d: Vec<f64> = points
                .iter()
                .filter_map(|p| {
                    let w = anchor.transform_point(p);
                    let (a, b) = (project(&w, estimated, k)?, project(&w, truth, k)?);
                    Some(((a.u - b.u).powi(2) + (a.v - b.v).powi(2)).sqrt())
                })
                .collect();
            if d.is_empty() {
                0.0
            } else {
                d.iter().sum::<f64>() / d.len() as f64
            }
        })
        .unwrap_or(0.0);
    let xs: Vec<f64> = per.iter().map(|e| e.distance_mm).collect();
    let ys: Vec<f64> = per.iter().map(|e| e.error_mm).collect();
    let corr = pearson(&xs, &ys);
    RegistrationReport {
        points: per,
        mean_mm,
        max_mm,
        image_mean_px,
        correlation: corr.unwrap_or(0.0),
        degenerate: corr.is_none(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IoUResult {
    pub intersection_px: usize,
    pub union_px: usize,
    pub iou: f64,
    /// Both masks empty; `iou` is reported as 1.
    pub degenerate: bool,
}

pub fn iou(a: &Mask, b: &Mask) -> Result<IoUResult, EvalError> {
    if a.width != b.width || a.height != b.height {
        return Err(EvalError::Size(a.width, a.height, b.width, b.height));
    }
    let inter = a.intersection_count(b);
    let union = a.count() + b.count() - inter;
    Ok(if union == 0 {
        IoUResult { intersection_px: 0, union_px: 0, iou: 1.0, degenerate: true }
    } else {
        IoUResult { intersection_px: inter, union_px: union, iou: inter as f64 / union as f64, degenerate: false }
    })
}

pub const MIN_PROFILE_FRAMES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpsReport {
    pub frames: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub effective_fps: f64,
}

pub fn fps_profile(frame_ms: &[f64]) -> Result<FpsReport, EvalError> {
    if frame_ms.len() < MIN_PROFILE_FRAMES {
        return Err(EvalError::Sample { need: MIN_PROFILE_FRAMES, got: frame_ms.len() });
    }
    let median_ms = median(frame_ms);
    Ok(FpsReport { frames: frame_ms.len(), median_ms, p95_ms: percentile(frame_ms, 0.95), effective_fps: 1000.0 / median_ms })
}

/// Pretty JSON plus trailing newline, the format of every written report.
pub fn report_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("report serializes");
    v.push(b'\n');
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn pts() -> Vec<Point3<f64>> {
        (0..20).map(|i| Point3::new(i as f64 * 3.0, (i % 4) as f64 * 5.0, (i % 3) as f64 * 7.0)).collect()
    }

    #[test]
    fn identical_poses_are_degenerate() {
        let p = Pose6DoF::look_at(&Point3::new(0.0, -300.0, 300.0), &Point3::origin(), &Vector3::z());
        let r = registration_error(&p, &p, &pts(), &Pose6DoF::identity());
        assert_eq!((r.mean_mm, r.max_mm, r.correlation), (0.0, 0.0, 0.0));
        assert!(r.degenerate);
    }

    #[test]
    fn translation_offset_is_uniform() {
        let truth = Pose6DoF::look_at(&Point3::new(0.0, -300.0, 300.0), &Point3::origin(), &Vector3::z());
        let est = Pose6DoF::from_translation(Vector3::x()).compose(&truth);
        let anchor = Pose6DoF::from_axis_angle(&Vector3::z(), 0.3, Vector3::new(5.0, 1.0, 0.0));
        let r = registration_error(&est, &truth, &pts(), &anchor);
        assert!(r.points.iter().all(|e| (e.error_mm - 1.0).abs() < 1e-12));
    }

    #[test]
    fn rotation_error_scales_with_distance() {
        let truth = Pose6DoF::look_at(&Point3::new(0.0, -300.0, 300.0), &Point3::origin(), &Vector3::z());
        let est = truth.compose(&Pose6DoF::from_axis_angle(&Vector3::new(1.0, 1.0, 0.0), 0.1f64.to_radians(), Vector3::zeros()));
        let dir = Vector3::new(0.3, -0.5, 0.8).normalize();
        let r = registration_error(&est, &truth, &[Point3::from(dir * 50.0), Point3::from(dir * 100.0)], &Pose6DoF::identity());
        let ratio = r.points[1].error_mm / r.points[0].error_mm;
        // Chord length 2 d sin(theta / 2) is linear in d.
        assert!((ratio - 2.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn iou_examples() {
        let sq = |x0: u32| {
            let mut m = Mask::new(20, 10);
            for y in 0..10 {
                for x in x0..x0 + 10 {
                    m.set(x, y, true);
                }
            }
            m
        };
        let (a, b) = (sq(0), sq(5));
        let r = iou(&a, &b).unwrap();
        assert_eq!((r.intersection_px, r.union_px), (50, 150));
        assert!((r.iou - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap().iou, 1.0);
        assert_eq!(iou(&sq(0), &{ let mut m = Mask::new(20, 10); m.set(15, 0, true); m }).unwrap().iou, 0.0);
        let e = Mask::new(20, 10);
        assert!(iou(&e, &e).unwrap().degenerate);
        assert!(iou(&e, &Mask::new(3, 3)).is_err());
    }

    #[test]
    fn fps_definitions() {
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let r = fps_profile(&v).unwrap();
        assert!((r.median_ms - 50.5).abs() < 1e-12);
        assert!((r.effective_fps - 1000.0 / 50.5).abs() < 1e-12);
        assert!(r.p95_ms > 94.0 && r.p95_ms < 96.0);
        assert!(matches!(fps_profile(&v[..99]), Err(EvalError::Sample { .. })));
    }

    #[test]
    fn pearson_edge_cases() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0, 2.0]), None);
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-12);
    }
}
