//! Pinhole camera model and rigid-pose algebra.
//!
//! Conventions used throughout the crate:
//!
//! * World frame is right-handed, millimetres, with the marker lying in the
//!   `z = 0` plane and its centre at the origin (`+z` points up, away from the
//!   desk).
//! * Camera frame: `+x` right, `+y` down, `+z` forward along the optical axis.
//! * A [`Pose6DoF`] used as a camera pose maps *world* coordinates into the
//!   camera frame: `p_cam = R * p_world + t`.
//! * Image coordinates are continuous: pixel `(x, y)` covers
//!   `[x, x + 1) x [y, y + 1)` and its centre is at `(x + 0.5, y + 0.5)`.

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when validating rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("depth must be positive, got {0}")]
    Depth(f64),
    #[error("rotation is not orthonormal with det +1 (deviation {0:e})")]
    NotRigid(f64),
    #[error("invalid camera intrinsics: {0}")]
    Intrinsics(String),
}

/// Rigid transform: rotation followed by translation (millimetres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseDoc", into = "PoseDoc")]
pub struct Pose6DoF {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Row-major JSON representation of a pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseDoc {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<Pose6DoF> for PoseDoc {
    fn from(p: Pose6DoF) -> Self {
        let r = &p.rotation;
        PoseDoc {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseDoc> for Pose6DoF {
    type Error = GeometryError;

    fn try_from(d: PoseDoc) -> Result<Self, Self::Error> {
        let r = d.rotation;
        let rotation = Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        );
        Pose6DoF::new(rotation, Vector3::from(d.translation))
    }
}

impl Default for Pose6DoF {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose6DoF {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting rotations that are not orthonormal with
    /// determinant +1 within [`ROTATION_TOLERANCE`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let dev = rotation_deviation(&rotation);
        if !dev.is_finite() || dev > ROTATION_TOLERANCE || !translation.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NotRigid(dev));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self::from_rotation(q.to_rotation_matrix(), translation)
    }

    /// Rotation about `axis` by `angle` radians (axis need not be normalized).
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_scaled_axis(axis.normalize() * angle);
        Self::from_rotation(r, translation)
    }

    /// World-to-camera pose for a camera at `eye` looking at `target`, with
    /// `up` giving the world direction that should appear upward on screen.
    pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>, up: &Vector3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(up);
        if right.norm() < 1e-9 {
            // Looking straight along `up`; pick any perpendicular.
            right = forward.cross(&Vector3::x());
            if right.norm() < 1e-9 {
                right = forward.cross(&Vector3::y());
            }
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye.coords);
        Self {
            rotation,
            translation,
        }
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose6DoF) -> Pose6DoF {
        Pose6DoF {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose6DoF {
        let rt = self.rotation.transpose();
        Pose6DoF {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Position of the camera centre in world coordinates when `self` is a
    /// world-to-camera pose.
    pub fn camera_center(&self) -> Point3<f64> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Angle (radians) of the relative rotation between two poses.
    pub fn rotation_angle_to(&self, other: &Pose6DoF) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        // acos is ill-conditioned near zero; use the skew part for small angles.
        let skew = Vector3::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        );
        let s = 0.5 * skew.norm();
        s.atan2(c)
    }

    pub fn is_rigid(&self) -> bool {
        rotation_deviation(&self.rotation) <= ROTATION_TOLERANCE
    }
}

/// Max-abs deviation of `RᵀR` from identity plus `|det R − 1|`.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let rtr = r.transpose() * r - Matrix3::identity();
    let ortho = rtr.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho + (r.determinant() - 1.0).abs()
}

/// Nearest proper rotation (Frobenius norm) via SVD. Callers that must
/// reject mirror transforms check the input determinant themselves.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    if r.iter().all(|v| v.is_finite()) {
        Some(r)
    } else {
        None
    }
}

/// Pinhole intrinsics plus the near clipping distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near_mm: f64,
}

impl Default for CameraIntrinsics {
    /// 960x720, f = 800 px, principal point at the image centre, near = 10 mm.
    fn default() -> Self {
        Self {
            fx: 800.0,
            fy: 800.0,
            cx: 480.0,
            cy: 360.0,
            width: 960,
            height: 720,
            near_mm: 10.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        near_mm: f64,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            near_mm,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.near_mm > 0.0) {
            return Err(GeometryError::Intrinsics(
                "fx, fy and near_mm must be positive".into(),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(GeometryError::Intrinsics("zero resolution".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(GeometryError::Intrinsics(
                "principal point outside the image".into(),
            ));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled_to(&self, width: u32, height: u32) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            near_mm: self.near_mm,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Projects a camera-frame point; `None` when it is not beyond the near plane.
    pub fn project_camera(&self, p: &Point3<f64>) -> Option<Projected> {
        if !(p.z > self.near_mm) {
            return None;
        }
        Some(Projected {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            depth: p.z,
        })
    }

    /// Camera-frame point at the given image position and depth.
    pub fn unproject_camera(&self, u: f64, v: f64, depth: f64) -> Result<Point3<f64>, GeometryError> {
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(GeometryError::Depth(depth));
        }
        Ok(Point3::new(
            (u - self.cx) / self.fx * depth,
            (v - self.cy) / self.fy * depth,
            depth,
        ))
    }

    /// Unit-free ray direction (z = 1) through an image position, camera frame.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Image position plus camera-frame depth (mm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projected {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Projects a world point through `camera_pose`. Returns `None` (the point is
/// "behind") when its camera-frame depth is not greater than `near_mm`.
pub fn project(point_world: &Point3<f64>, camera_pose: &Pose6DoF, k: &CameraIntrinsics) -> Option<Projected> {
    k.project_camera(&camera_pose.transform_point(point_world))
}

/// Inverse of [`project`]: world point seen at `(u, v)` with camera depth `depth`.
pub fn unproject(
    u: f64,
    v: f64,
    depth: f64,
    camera_pose: &Pose6DoF,
    k: &CameraIntrinsics,
) -> Result<Point3<f64>, GeometryError> {
    let pc = k.unproject_camera(u, v, depth)?;
    Ok(camera_pose.inverse().transform_point(&pc))
}

/// Spherical orbit around `target`: yaw about world `+z`, pitch above the
/// desk plane (degrees), radius in mm.
pub fn orbit_pose(target: &Point3<f64>, yaw_deg: f64, pitch_deg: f64, radius_mm: f64) -> Pose6DoF {
    let yaw = yaw_deg.to_radians();
    let pitch = pitch_deg.to_radians();
    let offset = Vector3::new(
        radius_mm * pitch.cos() * yaw.sin(),
        -radius_mm * pitch.cos() * yaw.cos(),
        radius_mm * pitch.sin(),
    );
    Pose6DoF::look_at(&(target + offset), target, &Vector3::z())
}
