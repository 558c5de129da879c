//! Reusable camera placements and scene recipes.

use nalgebra::{Point3, Vector3};
use rand::Rng;

use super::{BoxProp, BuildKeyframe, CameraKeyframe, SceneTruth};
use crate::geometry::{orbit_pose, Pose6DoF};

/// Random desk-side viewpoint looking near `target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewBand {
    pub distance_mm: (f64, f64),
    /// Camera elevation above the desk plane (degrees).
    pub elevation_deg: (f64, f64),
    pub roll_deg: f64,
    /// Max offset of the look-at point from `target` in x and y.
    pub jitter_mm: f64,
}

impl Default for ViewBand {
    fn default() -> Self {
        Self { distance_mm: (250.0, 600.0), elevation_deg: (40.0, 85.0), roll_deg: 20.0, jitter_mm: 15.0 }
    }
}

pub fn random_view(rng: &mut impl Rng, target: &Point3<f64>, band: &ViewBand) -> Pose6DoF {
    let d = rng.gen_range(band.distance_mm.0..=band.distance_mm.1);
    let e = rng.gen_range(band.elevation_deg.0..=band.elevation_deg.1).to_radians();
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    let roll = rng.gen_range(-band.roll_deg..=band.roll_deg).to_radians();
    let j = band.jitter_mm;
    let look = target + Vector3::new(rng.gen_range(-j..=j), rng.gen_range(-j..=j), 0.0);
    let eye = look + d * Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
    let up = if e.to_degrees() > 89.0 { Vector3::y() } else { Vector3::z() };
    Pose6DoF::from_axis_angle(&Vector3::z(), roll, Vector3::zeros()).compose(&Pose6DoF::look_at(&eye, &look, &up))
}

/// Camera circling `target` at fixed pitch and radius, one keyframe per
/// frame, yaw advancing by `yaw_per_frame_deg`.
pub fn orbit_track(frames: u32, target: &Point3<f64>, start_yaw_deg: f64, yaw_per_frame_deg: f64, pitch_deg: f64, radius_mm: f64) -> Vec<CameraKeyframe> {
    (0..frames)
        .map(|f| CameraKeyframe {
            frame: f,
            pose: orbit_pose(target, start_yaw_deg + yaw_per_frame_deg * f as f64, pitch_deg, radius_mm),
        })
        .collect()
}

/// Model → marker transform that stands a demo tower on the desk just past
/// the top edge of the default print, leaving the marker in view.
pub fn beside_marker() -> Pose6DoF {
    Pose6DoF::from_translation(Vector3::new(0.0, 120.0, 0.0))
}

/// A build session: the camera orbits the marker and a tower anchored with
/// [`beside_marker`], and brick `f` goes down at frame `f`.
pub fn assembly_session(frames: u32, final_step: u32) -> SceneTruth {
    let target = Point3::new(0.0, 50.0, 40.0);
    let mut truth = SceneTruth::still(frames, orbit_pose(&target, -90.0, 55.0, 560.0));
    truth.camera = orbit_track(frames, &target, -90.0, 0.3, 55.0, 560.0);
    truth.built_through = (0..frames).map(|f| BuildKeyframe { frame: f, steps: f.min(final_step) }).collect();
    truth
}

/// Fixed camera over the marker while bricks go down one per frame: frame
/// `f` shows bricks `1..=f`.
pub fn marker_plate_build(steps: u32) -> SceneTruth {
    let mut truth = SceneTruth::still(steps + 1, orbit_pose(&Point3::origin(), -90.0, 60.0, 450.0));
    truth.built_through = (0..=steps).map(|f| BuildKeyframe { frame: f, steps: f }).collect();
    truth
}

/// Fixed camera; a card hovering over the whole print hides the marker
/// during `cover`.
pub fn cover_uncover(frames: u32, cover: std::ops::Range<u32>) -> SceneTruth {
    let mut truth = SceneTruth::still(frames, orbit_pose(&Point3::origin(), -90.0, 60.0, 450.0));
    truth.props.push(BoxProp {
        min: [-120.0, -95.0, 60.0],
        max: [120.0, 95.0, 62.0],
        rgb: [96, 96, 96],
        from_frame: cover.start,
        until_frame: Some(cover.end),
    });
    truth
}
