//! Synthetic reality: scripted scenes, camera frames rendered from them and
//! ground-truth oracles.
//!
//! The world frame is the marker frame. The desk is the infinite plane
//! `z = 0`; the marker print lies on it, the built bricks stand on it at
//! their model placement (anchor included), props are extra boxes.

mod oracle;
mod reality;
mod replay;
pub mod scenes;

use std::sync::Arc;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::instruction::SessionError;
use crate::marker::MarkerSpec;
use crate::model::{AssemblyModel, Mesh};

pub use oracle::{hand_truth_mask, ray_cast_depth, visibility_oracle};
pub use reality::{render_reality_frame, render_reality_view, DESK_GRAY, MARKER_BLACK, MARKER_WHITE};
pub use replay::{parse_script, run_replay, FrameMetrics, ReplayEvent, ReplayOptions, ReplayReport, ScriptLine};

pub const SCENE_FORMAT: &str = "brickxar-scene";
pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("frame {0} outside 0..{1}")]
    Range(u32, u32),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("invalid script line {line}: {message}")]
    Script { line: usize, message: String },
    #[error("session invariant violated at frame {frame}: {message}")]
    Invariant { frame: u32, message: String },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] crate::image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraKeyframe {
    pub frame: u32,
    /// World → camera.
    pub pose: Pose6DoF,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildKeyframe {
    pub frame: u32,
    /// Bricks `1..=steps` physically present from this frame on.
    pub steps: u32,
}

/// Static box standing in the scene, e.g. a hand-held card over the marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxProp {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub rgb: [u8; 3],
    /// First frame the prop is present (inclusive).
    #[serde(default)]
    pub from_frame: u32,
    /// Frame the prop disappears (exclusive); `None` = never.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until_frame: Option<u32>,
}

impl BoxProp {
    pub fn present_at(&self, t: u32) -> bool {
        t >= self.from_frame && self.until_frame.is_none_or(|u| t < u)
    }

    pub fn mesh(&self) -> Mesh {
        crate::model::mesh::box_mesh(Point3::from(self.min), Point3::from(self.max))
    }
}

/// Screen-space ellipse in front of everything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandBlob {
    pub center_px: [f64; 2],
    pub semi_axes_px: [f64; 2],
    pub angle_deg: f64,
    /// Centre drift per frame.
    #[serde(default)]
    pub velocity_px: [f64; 2],
}

impl HandBlob {
    pub fn center_at(&self, t: u32) -> [f64; 2] {
        [self.center_px[0] + self.velocity_px[0] * t as f64, self.center_px[1] + self.velocity_px[1] * t as f64]
    }

    /// Does the pixel centre `(u, v)` fall inside the ellipse at frame `t`?
    pub fn contains(&self, t: u32, u: f64, v: f64) -> bool {
        let [cx, cy] = self.center_at(t);
        let (s, c) = self.angle_deg.to_radians().sin_cos();
        let (dx, dy) = (u - cx, v - cy);
        let a = (dx * c + dy * s) / self.semi_axes_px[0];
        let b = (-dx * s + dy * c) / self.semi_axes_px[1];
        a * a + b * b <= 1.0
    }
}

/// Synthetic hand: blobs plus their chroma distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSpec {
    pub blobs: Vec<HandBlob>,
    /// Mean (Cb, Cr).
    pub cbcr_mean: [f64; 2],
    /// Spread of the per-hand chroma offset; also scales the gradient across the hand.
    pub cbcr_sigma: f64,
    pub luma: f64,
    pub seed: u64,
    /// Hand visible from this frame (inclusive).
    #[serde(default)]
    pub from_frame: u32,
}

impl HandSpec {
    pub fn default_skin(blobs: Vec<HandBlob>, seed: u64) -> Self {
        Self { blobs, cbcr_mean: [110.0, 155.0], cbcr_sigma: 8.0, luma: 150.0, seed, from_frame: 0 }
    }

    pub fn active_at(&self, t: u32) -> bool {
        t >= self.from_frame
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Additive Gaussian noise per colour channel (8-bit levels).
    pub pixel_sigma: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { pixel_sigma: 0.0, seed: 0 }
    }
}

/// Scripted ground truth for a run of frames. The model itself is supplied
/// separately (see [`Scene`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneTruth {
    pub format: String,
    pub version: u32,
    pub intrinsics: CameraIntrinsics,
    pub frame_count: u32,
    pub camera: Vec<CameraKeyframe>,
    pub marker: MarkerSpec,
    #[serde(default)]
    pub built_through: Vec<BuildKeyframe>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub props: Vec<BoxProp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hand: Option<HandSpec>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

impl SceneTruth {
    /// Static camera, nothing built, default marker.
    pub fn still(frame_count: u32, camera_pose: Pose6DoF) -> Self {
        Self {
            format: SCENE_FORMAT.into(),
            version: SCENE_VERSION,
            intrinsics: CameraIntrinsics::default(),
            frame_count,
            camera: vec![CameraKeyframe { frame: 0, pose: camera_pose }],
            marker: MarkerSpec::default(),
            built_through: Vec::new(),
            props: Vec::new(),
            hand: None,
            noise: NoiseSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Scene(m));
        if self.format != SCENE_FORMAT || self.version != SCENE_VERSION {
            return bad(format!("unsupported format {} v{}", self.format, self.version));
        }
        self.intrinsics.validate().map_err(|e| SimError::Scene(e.to_string()))?;
        if self.frame_count == 0 {
            return bad("frame_count must be positive".into());
        }
        match self.camera.first() {
            Some(k) if k.frame == 0 => {}
            _ => return bad("camera track must start at frame 0".into()),
        }
        if self.camera.windows(2).any(|w| w[1].frame <= w[0].frame) {
            return bad("camera keyframes must be strictly increasing".into());
        }
        if self.camera.iter().any(|k| !k.pose.is_rigid()) {
            return bad("camera pose is not rigid".into());
        }
        if self.built_through.windows(2).any(|w| w[1].frame <= w[0].frame || w[1].steps < w[0].steps) {
            return bad("built_through must be non-decreasing in frames and steps".into());
        }
        if self.noise.pixel_sigma < 0.0 || !self.noise.pixel_sigma.is_finite() {
            return bad("pixel noise must be finite and non-negative".into());
        }
        if let Some(h) = &self.hand {
            if h.blobs.iter().any(|b| !(b.semi_axes_px[0] > 0.0 && b.semi_axes_px[1] > 0.0)) {
                return bad("hand blob axes must be positive".into());
            }
        }
        Ok(())
    }

    pub fn check_frame(&self, t: u32) -> Result<(), SimError> {
        if t < self.frame_count {
            Ok(())
        } else {
            Err(SimError::Range(t, self.frame_count))
        }
    }

    /// True world → camera pose at frame `t`: translation is interpolated
    /// linearly and rotation by quaternion slerp between the surrounding
    /// keyframes; the last keyframe holds afterwards.
    pub fn camera_pose(&self, t: u32) -> Pose6DoF {
        let i = self.camera.partition_point(|k| k.frame <= t);
        let a = &self.camera[i.saturating_sub(1)];
        let Some(b) = self.camera.get(i).filter(|_| t != a.frame) else { return a.pose };
        let s = (t - a.frame) as f64 / (b.frame - a.frame) as f64;
        let (qa, qb) = (a.pose.quaternion(), b.pose.quaternion());
        let q = qa.try_slerp(&qb, s, 1e-12).unwrap_or(if s < 0.5 { qa } else { qb });
        let tr = a.pose.translation.lerp(&b.pose.translation, s);
        Pose6DoF::from_quaternion(&q, tr)
    }

    pub fn built_through_at(&self, t: u32) -> u32 {
        let i = self.built_through.partition_point(|k| k.frame <= t);
        if i == 0 {
            0
        } else {
            self.built_through[i - 1].steps
        }
    }
}

/// Ground truth paired with the model it shows.
#[derive(Debug, Clone)]
pub struct Scene {
    pub truth: SceneTruth,
    pub model: Arc<AssemblyModel>,
}

impl Scene {
    pub fn new(truth: SceneTruth, model: Arc<AssemblyModel>) -> Result<Self, SimError> {
        truth.validate()?;
        if let Some(last) = truth.built_through.last() {
            if last.steps > model.final_step() {
                return Err(SimError::Scene(format!(
                    "built_through {} exceeds final step {}",
                    last.steps,
                    model.final_step()
                )));
            }
        }
        Ok(Self { truth, model })
    }

    pub fn from_json(bytes: &[u8], model: Arc<AssemblyModel>) -> Result<Self, SimError> {
        let truth: SceneTruth = serde_json::from_slice(bytes).map_err(|e| SimError::Scene(e.to_string()))?;
        Self::new(truth, model)
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.truth.intrinsics
    }
}

pub fn truth_to_json(truth: &SceneTruth) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(truth).expect("scene truth serializes");
    v.push(b'\n');
    v
}
