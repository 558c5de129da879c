//! Planar pose: normalized DLT homography, decomposition, then damped
//! Gauss-Newton (Levenberg-Marquardt) on the reprojection error.

use nalgebra::{DMatrix, Matrix3, Matrix6, Point2, Point3, Rotation3, SymmetricEigen, Vector3, Vector6};

use super::{Correspondence, MarkerError};
use crate::geometry::{nearest_rotation, CameraIntrinsics, Pose6DoF};

pub const MAX_ITERATIONS: usize = 100;
/// Refinement stops once an accepted step lowers the RMS by less than this (px).
pub const MIN_RMS_DECREASE: f64 = 1e-10;
pub const DIVERGENCE_RMS_PX: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose6DoF,
    pub rms_px: f64,
    /// RMS after the initial guess and after every accepted step.
    pub rms_history: Vec<f64>,
}

/// Similarity that maps the points to zero mean and mean distance √2.
fn normalizer(pts: &[Point2<f64>]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let c = pts.iter().fold(Vector3::zeros(), |a, p| a + Vector3::new(p.x, p.y, 0.0)) / n;
    let d = pts.iter().map(|p| ((p.x - c.x).powi(2) + (p.y - c.y).powi(2)).sqrt()).sum::<f64>() / n;
    let s = if d > 0.0 { std::f64::consts::SQRT_2 / d } else { 1.0 };
    Matrix3::new(s, 0.0, -s * c.x, 0.0, s, -s * c.y, 0.0, 0.0, 1.0)
}

/// Homography `dst ~ H src` by normalized DLT. Needs ≥ 4 pairs.
pub fn fit_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = src.len();
    if n < 4 || dst.len() != n {
        return None;
    }
    let (ts, td) = (normalizer(src), normalizer(dst));
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts * Vector3::new(s.x, s.y, 1.0);
        let d = td * Vector3::new(d.x, d.y, 1.0);
        let (x, y, u, v) = (s.x, s.y, d.x, d.y);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let ata = a.transpose() * &a;
    let eig = SymmetricEigen::new(ata);
    let (imin, _) = eig.eigenvalues.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = eig.eigenvectors.column(imin);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let hm = td.try_inverse()? * hn * ts;
    let scale = hm[(2, 2)];
    let hm = if scale.abs() > 1e-12 { hm / scale } else { hm / hm.norm() };
    hm.iter().all(|v| v.is_finite()).then_some(hm)
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Point2<f64>) -> Option<Point2<f64>> {
    let q = h * Vector3::new(p.x, p.y, 1.0);
    (q.z.abs() > 1e-12).then(|| Point2::new(q.x / q.z, q.y / q.z))
}

fn check_geometry(corrs: &[Correspondence]) -> Result<(), MarkerError> {
    if corrs.len() < 4 {
        return Err(MarkerError::Degenerate(format!("{} correspondences, need at least 4", corrs.len())));
    }
    let n = corrs.len() as f64;
    let c = corrs.iter().fold(nalgebra::Vector2::zeros(), |a, k| a + k.marker_point.coords) / n;
    let cov = corrs.iter().fold(nalgebra::Matrix2::zeros(), |a, k| {
        let d = k.marker_point.coords - c;
        a + d * d.transpose()
    }) / n;
    let ev = cov.symmetric_eigenvalues();
    let (lo, hi) = (ev.min(), ev.max());
    if hi <= 0.0 || lo / hi < 1e-6 {
        return Err(MarkerError::Degenerate("marker points are collinear".into()));
    }
    Ok(())
}

/// Pose from the plane-to-normalized-image homography.
fn initial_pose(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<Pose6DoF, MarkerError> {
    let src: Vec<Point2<f64>> = corrs.iter().map(|c| c.marker_point).collect();
    let dst: Vec<Point2<f64>> = corrs
        .iter()
        .map(|c| Point2::new((c.image_point.x - k.cx) / k.fx, (c.image_point.y - k.cy) / k.fy))
        .collect();
    let h = fit_homography(&src, &dst).ok_or_else(|| MarkerError::Degenerate("homography fit failed".into()))?;
    let (h1, h2, h3) = (h.column(0).into_owned(), h.column(1).into_owned(), h.column(2).into_owned());
    let mut lambda = 2.0 / (h1.norm() + h2.norm());
    if h3.z * lambda < 0.0 {
        lambda = -lambda;
    }
    let (r1, r2) = (h1 * lambda, h2 * lambda);
    let r = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let rotation = nearest_rotation(&r).ok_or_else(|| MarkerError::Degenerate("rotation fit failed".into()))?;
    Ok(Pose6DoF { rotation, translation: h3 * lambda })
}

/// Residuals (px) and their Jacobian w.r.t. (ω, δt), where ω is a
/// left-multiplied rotation increment.
fn residuals(
    pose: &Pose6DoF,
    pts: &[Point3<f64>],
    obs: &[Point2<f64>],
    k: &CameraIntrinsics,
    jac: Option<(&mut Matrix6<f64>, &mut Vector6<f64>)>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut jtj = Matrix6::zeros();
    let mut jtr = Vector6::zeros();
    let want_jac = jac.is_some();
    for (x, o) in pts.iter().zip(obs) {
        let rx = pose.rotation * x.coords;
        let pc = rx + pose.translation;
        if pc.z <= 1e-9 {
            return None;
        }
        let iz = 1.0 / pc.z;
        let (ru, rv) = (k.fx * pc.x * iz + k.cx - o.x, k.fy * pc.y * iz + k.cy - o.y);
        sum += ru * ru + rv * rv;
        if want_jac {
            // d(u,v)/d(pc)
            let du = Vector3::new(k.fx * iz, 0.0, -k.fx * pc.x * iz * iz);
            let dv = Vector3::new(0.0, k.fy * iz, -k.fy * pc.y * iz * iz);
            // d(pc)/dω = -[Rx]×, so row·d(pc)/dω = (Rx × row)ᵀ.
            let ju = {
                let w = rx.cross(&du);
                Vector6::new(w.x, w.y, w.z, du.x, du.y, du.z)
            };
            let jv = {
                let w = rx.cross(&dv);
                Vector6::new(w.x, w.y, w.z, dv.x, dv.y, dv.z)
            };
            jtj += ju * ju.transpose() + jv * jv.transpose();
            jtr += ju * ru + jv * rv;
        }
    }
    if let Some((a, b)) = jac {
        *a = jtj;
        *b = jtr;
    }
    Some((sum / pts.len() as f64).sqrt())
}

fn apply_step(pose: &Pose6DoF, delta: &Vector6<f64>) -> Pose6DoF {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dr = Rotation3::new(w);
    Pose6DoF {
        rotation: dr.matrix() * pose.rotation,
        translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
    }
}

/// Estimates the marker → camera pose from plane correspondences.
pub fn estimate_pose(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<PoseEstimate, MarkerError> {
    check_geometry(corrs)?;
    let init = initial_pose(corrs, k)?;
    refine_pose(corrs, k, init)
}

/// Levenberg-Marquardt from `init`; steps that raise the error are rejected,
/// so `rms_history` is non-increasing.
pub fn refine_pose(corrs: &[Correspondence], k: &CameraIntrinsics, init: Pose6DoF) -> Result<PoseEstimate, MarkerError> {
    check_geometry(corrs)?;
    let pts: Vec<Point3<f64>> = corrs.iter().map(|c| Point3::new(c.marker_point.x, c.marker_point.y, 0.0)).collect();
    let obs: Vec<Point2<f64>> = corrs.iter().map(|c| c.image_point).collect();
    let mut pose = init;
    let (mut jtj, mut jtr) = (Matrix6::zeros(), Vector6::zeros());
    let mut rms = residuals(&pose, &pts, &obs, k, Some((&mut jtj, &mut jtr)))
        .ok_or_else(|| MarkerError::Degenerate("initial pose puts points behind the camera".into()))?;
    let mut history = vec![rms];
    let mut mu = 1e-3;
    for _ in 0..MAX_ITERATIONS {
        let mut damped = jtj;
        for i in 0..6 {
            damped[(i, i)] += mu * jtj[(i, i)].max(1e-12);
        }
        let Some(delta) = damped.cholesky().map(|c| c.solve(&(-jtr))) else {
            mu *= 10.0;
            continue;
        };
        let candidate = apply_step(&pose, &delta);
        match residuals(&candidate, &pts, &obs, k, None) {
            Some(new_rms) if new_rms <= rms => {
                let gain = rms - new_rms;
                pose = candidate;
                rms = new_rms;
                history.push(rms);
                residuals(&pose, &pts, &obs, k, Some((&mut jtj, &mut jtr)));
                mu = (mu / 3.0).max(1e-12);
                if gain < MIN_RMS_DECREASE {
                    break;
                }
            }
            _ => {
                mu *= 4.0;
                if mu > 1e12 {
                    break;
                }
            }
        }
    }
    let rotation = nearest_rotation(&pose.rotation).unwrap_or(pose.rotation);
    let pose = Pose6DoF { rotation, translation: pose.translation };
    if !(rms <= DIVERGENCE_RMS_PX) {
        return Err(MarkerError::Divergence(rms));
    }
    Ok(PoseEstimate { pose, rms_px: rms, rms_history: history })
}
