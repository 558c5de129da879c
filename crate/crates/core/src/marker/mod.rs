//! Two-block fiducial marker: definition, detection, pose and tracking.
//!
//! Marker frame: the world frame. The marker lies in `z = 0`, centred on the
//! origin, `+x` to the right and `+y` towards the top edge of the print.

mod detect;
mod pose;
mod spec;

use nalgebra::{Point2, Point3};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project, CameraIntrinsics, Pose6DoF};

pub use detect::{detect_features, DetectorConfig};
pub use pose::{apply_homography, estimate_pose, fit_homography, refine_pose, PoseEstimate, DIVERGENCE_RMS_PX, MAX_ITERATIONS};
pub use spec::{render_marker_image, MarkerFeature, MarkerSpec, PatternBlock, BLACK, WHITE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkerError {
    #[error("invalid marker spec: {0}")]
    Spec(String),
    #[error("invalid output resolution: {0}")]
    Resolution(String),
    #[error("degenerate correspondences: {0}")]
    Degenerate(String),
    #[error("pose refinement diverged (rms {0:.3} px)")]
    Divergence(f64),
}

/// Detected (or synthesized) image position of a marker feature.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    pub feature_id: u32,
    pub image_point: Point2<f64>,
    pub marker_point: Point2<f64>,
}

/// Ideal correspondences for every feature in front of the camera and inside
/// the image, with optional isotropic Gaussian jitter (px).
pub fn project_features(
    spec: &MarkerSpec,
    camera_pose: &Pose6DoF,
    k: &CameraIntrinsics,
    noise_px: f64,
    rng: &mut impl Rng,
) -> Vec<Correspondence> {
    let noise = Normal::new(0.0, noise_px.max(0.0)).expect("finite sigma");
    spec.features()
        .iter()
        .filter_map(|f| {
            let p = project(&Point3::new(f.point.x, f.point.y, 0.0), camera_pose, k)?;
            let (mut u, mut v) = (p.u, p.v);
            if noise_px > 0.0 {
                u += noise.sample(rng);
                v += noise.sample(rng);
            }
            k.contains(p.u, p.v).then(|| Correspondence {
                feature_id: f.id,
                image_point: Point2::new(u, v),
                marker_point: f.point,
            })
        })
        .collect()
}

/// Fraction of spec features required to keep tracking.
pub const DEFAULT_Q_MIN: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    Tracking,
    Lost,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingState {
    pub mode: TrackingMode,
    /// Marker (world) → camera. Frozen while `Lost`.
    pub pose: Pose6DoF,
    /// Fraction of spec features detected in the latest frame.
    pub quality: f64,
    /// Reprojection RMS of the latest accepted pose (px).
    pub rms_px: f64,
}

impl Default for TrackingState {
    fn default() -> Self {
        Self { mode: TrackingMode::Lost, pose: Pose6DoF::identity(), quality: 0.0, rms_px: 0.0 }
    }
}

impl TrackingState {
    pub fn is_tracking(&self) -> bool {
        self.mode == TrackingMode::Tracking
    }
}

/// Correspondences reprojecting farther than this from the first fit are
/// dropped before the final refinement.
pub const OUTLIER_PX: f64 = 3.0;

/// `estimate_pose`, then one refit without the outliers of the first fit.
pub fn estimate_robust(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<PoseEstimate, MarkerError> {
    let est = estimate_pose(corrs, k)?;
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .filter(|c| {
            project(&Point3::new(c.marker_point.x, c.marker_point.y, 0.0), &est.pose, k)
                .is_some_and(|p| (Point2::new(p.u, p.v) - c.image_point).norm() <= OUTLIER_PX)
        })
        .cloned()
        .collect();
    if inliers.len() == corrs.len() || inliers.len() < 4 {
        return Ok(est);
    }
    refine_pose(&inliers, k, est.pose).or(Ok(est))
}

/// One tracking step. A frame with too few features, or whose pose fails to
/// estimate, leaves the previous pose untouched and reports `Lost`.
pub fn update_tracking(
    state: &TrackingState,
    detection: &[Correspondence],
    spec: &MarkerSpec,
    k: &CameraIntrinsics,
    q_min: f64,
) -> TrackingState {
    let quality = detection.len() as f64 / spec.features().len() as f64;
    let lost = TrackingState { mode: TrackingMode::Lost, quality, ..*state };
    if quality < q_min {
        return lost;
    }
    match estimate_robust(detection, k) {
        Ok(est) => TrackingState { mode: TrackingMode::Tracking, pose: est.pose, quality, rms_px: est.rms_px },
        Err(e) => {
            log::debug!("pose estimation failed: {e}");
            lost
        }
    }
}
