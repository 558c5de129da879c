//! Randomized pose-accuracy studies on synthetic correspondences.
//!
//! Every trial draws its camera from its own ChaCha stream (`stream = trial`),
//! and its corner noise from a second stream, so the same trial sees the
//! same camera and the same unit noise draws across marker sizes and noise
//! levels.

use nalgebra::{Point3, Unit, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use super::{median, pearson, registration_error, EvalError};
use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::marker::{estimate_pose, project_features, update_tracking, MarkerSpec, TrackingState, DEFAULT_Q_MIN};
use crate::model::AssemblyModel;
use crate::sim::scenes::{random_view, ViewBand};

pub const MIN_SWEEP_TRIALS: usize = 30;
const NOISE_STREAM_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialSetup {
    pub intrinsics: CameraIntrinsics,
    pub band: ViewBand,
    pub noise_px: f64,
    pub seed: u64,
}

impl TrialSetup {
    pub fn new(noise_px: f64, seed: u64) -> Self {
        Self { intrinsics: CameraIntrinsics::default(), band: ViewBand::default(), noise_px, seed }
    }

    fn pose_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(trial as u64);
        r
    }

    fn noise_rng(&self, trial: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(NOISE_STREAM_OFFSET + trial as u64);
        r
    }

    fn camera(&self, trial: usize) -> Pose6DoF {
        random_view(&mut self.pose_rng(trial), &Point3::origin(), &self.band)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationStudy {
    pub trials: usize,
    pub noise_px: f64,
    pub sample_points: usize,
    /// Mean 3D error over the sample points, per trial (mm). Failed pose
    /// estimates count as infinite.
    pub trial_means_mm: Vec<f64>,
    pub median_mm: f64,
    pub fraction_below_1mm: f64,
    pub failures: usize,
}

/// Registration error of the whole model over randomized cameras.
pub fn registration_study(model: &AssemblyModel, spec: &MarkerSpec, setup: &TrialSetup, trials: usize, max_points: usize) -> RegistrationStudy {
    let points = model.sample_points(max_points);
    let k = &setup.intrinsics;
    let mut means = Vec::with_capacity(trials);
    let mut failures = 0;
    for i in 0..trials {
        let truth = setup.camera(i);
        let corrs = project_features(spec, &truth, k, setup.noise_px, &mut setup.noise_rng(i));
        match estimate_pose(&corrs, k) {
            Ok(est) => means.push(registration_error(&est.pose, &truth, &points, model.marker_anchor()).mean_mm),
            Err(e) => {
                log::debug!("trial {i}: {e}");
                failures += 1;
                means.push(f64::INFINITY);
            }
        }
    }
    let below = means.iter().filter(|&&m| m < 1.0).count();
    RegistrationStudy {
        trials,
        noise_px: setup.noise_px,
        sample_points: points.len(),
        median_mm: median(&means),
        fraction_below_1mm: below as f64 / trials.max(1) as f64,
        trial_means_mm: means,
        failures,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationReport {
    pub angle_deg: f64,
    pub axes: usize,
    /// (distance to marker origin, mean error over axes) per sample point.
    pub points: Vec<[f64; 2]>,
    pub correlation: f64,
    pub degenerate: bool,
}

/// Pure rotational perturbation about the marker origin. Each sample point's
/// error is averaged over `axes` uniformly random rotation axes, so it
/// depends on the point's distance and not on its direction.
pub fn error_propagation(model: &AssemblyModel, angle_deg: f64, axes: usize, seed: u64, max_points: usize) -> PropagationReport {
    let points = model.sample_points(max_points);
    let truth = Pose6DoF::look_at(&Point3::new(0.0, -320.0, 300.0), &Point3::origin(), &Vector3::z());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; points.len()];
    let mut dist = vec![0.0; points.len()];
    for _ in 0..axes {
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let axis = Unit::new_normalize(Vector3::from(axis));
        let est = truth.compose(&Pose6DoF::from_axis_angle(&axis, angle_deg.to_radians(), Vector3::zeros()));
        let r = registration_error(&est, &truth, &points, model.marker_anchor());
        for (i, e) in r.points.iter().enumerate() {
            sum[i] += e.error_mm;
            dist[i] = e.distance_mm;
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / axes.max(1) as f64).collect();
    let corr = pearson(&dist, &mean);
    PropagationReport {
        angle_deg,
        axes,
        points: dist.iter().zip(&mean).map(|(d, e)| [*d, *e]).collect(),
        correlation: corr.unwrap_or(0.0),
        degenerate: corr.is_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub size_mm: f64,
    /// Median over trials of `|t_est - t_true|` (mm).
    pub median_error_mm: f64,
    pub failures: usize,
}

/// Pose translation error against printed marker width.
pub fn marker_size_sweep(base: &MarkerSpec, sizes_mm: &[f64], setup: &TrialSetup, trials: usize) -> Result<Vec<SweepRow>, EvalError> {
    if trials < MIN_SWEEP_TRIALS {
        return Err(EvalError::Sample { need: MIN_SWEEP_TRIALS, got: trials });
    }
    let mut sizes: Vec<f64> = sizes_mm.to_vec();
    sizes.sort_by(f64::total_cmp);
    let k = &setup.intrinsics;
    let mut rows = Vec::with_capacity(sizes.len());
    for size in sizes {
        let spec = base
            .scaled(size / base.width_mm)
            .map_err(|e| EvalError::Corpus(format!("marker size {size}: {e}")))?;
        let mut errs = Vec::with_capacity(trials);
        let mut failures = 0;
        for i in 0..trials {
            let truth = setup.camera(i);
            let corrs = project_features(&spec, &truth, k, setup.noise_px, &mut setup.noise_rng(i));
            match estimate_pose(&corrs, k) {
                Ok(est) => errs.push((est.pose.translation - truth.translation).norm()),
                Err(_) => {
                    failures += 1;
                    errs.push(f64::INFINITY);
                }
            }
        }
        rows.push(SweepRow { size_mm: size, median_error_mm: median(&errs), failures });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialMarkerReport {
    pub trials: usize,
    pub noise_px: f64,
    pub occluded_block: usize,
    pub full_median_mm: f64,
    pub partial_median_mm: f64,
    pub ratio: f64,
    /// Fraction of trials where tracking starts from the partial view.
    pub tracking_rate: f64,
}

/// Pose translation error with and without one pattern block, using the
/// same camera and the same corner noise for both.
pub fn partial_marker_study(spec: &MarkerSpec, setup: &TrialSetup, trials: usize, occluded_block: usize) -> PartialMarkerReport {
    let k = &setup.intrinsics;
    let (mut full, mut partial) = (Vec::new(), Vec::new());
    let mut tracked = 0;
    let block_of = |id: u32| spec.feature(id).map(|f| f.block);
    for i in 0..trials {
        let truth = setup.camera(i);
        let corrs = project_features(spec, &truth, k, setup.noise_px, &mut setup.noise_rng(i));
        let visible: Vec<_> = corrs.iter().filter(|c| block_of(c.feature_id) != Some(occluded_block)).cloned().collect();
        let err = |c: &[_]| estimate_pose(c, k).map_or(f64::INFINITY, |e| (e.pose.translation - truth.translation).norm());
        full.push(err(&corrs));
        partial.push(err(&visible));
        if update_tracking(&TrackingState::default(), &visible, spec, k, DEFAULT_Q_MIN).is_tracking() {
            tracked += 1;
        }
    }
    let (f, p) = (median(&full), median(&partial));
    PartialMarkerReport {
        trials,
        noise_px: setup.noise_px,
        occluded_block,
        full_median_mm: f,
        partial_median_mm: p,
        ratio: p / f,
        tracking_rate: tracked as f64 / trials.max(1) as f64,
    }
}
