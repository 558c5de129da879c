//! Ordered brick assembly models.
//!
//! Model frame: millimetres, `+z` up, bricks sit on `z = 0`. A model is
//! placed on the marker by [`AssemblyModel::marker_anchor`] (model → marker
//! frame).

mod brick;
mod demo;
mod format;
mod ldraw;
pub mod mesh;

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose6DoF;

pub use brick::{generate_brick_mesh, parametric_part, HEIGHT_UNIT_MM, STUD_DIAMETER_MM, STUD_HEIGHT_MM, STUD_PITCH_MM};
pub use demo::{generate_demo_model, DemoLayout};
pub use format::{load_model, serialize_model};
pub use ldraw::{ldraw_color, parse_ldraw, LDU_MM, RIGIDITY_TOLERANCE};
pub use mesh::{Aabb, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model contains no bricks")]
    EmptyModel,
    #[error("line {line}: placement is not a rigid transform (deviation {deviation:e})")]
    Rigidity { line: usize, deviation: f64 },
    #[error("line {line}: unknown part `{name}`")]
    UnknownPart { line: usize, name: String },
    #[error("line {line}: step {step} already has a brick")]
    Sequence { line: usize, step: u32 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid brick dimensions: {0}")]
    Dimension(String),
    #[error("invalid model document: {0}")]
    Format(String),
}

/// Brick geometry in its local frame plus its display colour.
#[derive(Debug, Clone, PartialEq)]
pub struct BrickPart {
    pub part_id: String,
    pub color_rgb: [u8; 3],
    pub mesh: Mesh,
    pub bbox: Aabb,
}

impl BrickPart {
    pub fn new(part_id: impl Into<String>, color_rgb: [u8; 3], mesh: Mesh) -> Result<Self, ModelError> {
        let part_id = part_id.into();
        if mesh.is_empty() {
            return Err(ModelError::Format(format!("part `{part_id}` has an empty mesh")));
        }
        let n = mesh.vertices.len() as u32;
        if mesh.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(ModelError::Format(format!("part `{part_id}` has an out-of-range vertex index")));
        }
        if !mesh.vertices.iter().all(|v| v.iter().all(|c| c.is_finite())) {
            return Err(ModelError::Format(format!("part `{part_id}` has non-finite coordinates")));
        }
        let bbox = mesh.bbox();
        Ok(Self { part_id, color_rgb, mesh, bbox })
    }

    pub fn with_color(&self, color_rgb: [u8; 3]) -> Self {
        Self { color_rgb, ..self.clone() }
    }
}

/// One brick of the build; `part` indexes [`AssemblyModel::parts`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlacedBrick {
    pub part: usize,
    pub placement: Pose6DoF,
    pub step_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepMetadata {
    pub step_index: u32,
    pub title: String,
    pub body_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Immutable, validated brick sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyModel {
    parts: Vec<BrickPart>,
    bricks: Vec<PlacedBrick>,
    metadata: Vec<StepMetadata>,
    marker_anchor: Pose6DoF,
}

impl AssemblyModel {
    /// Validates and builds a model. Bricks and metadata are sorted by step.
    pub fn new(
        parts: Vec<BrickPart>,
        mut bricks: Vec<PlacedBrick>,
        mut metadata: Vec<StepMetadata>,
        marker_anchor: Pose6DoF,
    ) -> Result<Self, ModelError> {
        if bricks.is_empty() {
            return Err(ModelError::EmptyModel);
        }
        bricks.sort_by_key(|b| b.step_index);
        for (i, b) in bricks.iter().enumerate() {
            if b.step_index as usize != i + 1 {
                return Err(ModelError::Format(format!(
                    "step indices must be 1..{} without gaps or repeats (found {} at position {})",
                    bricks.len(),
                    b.step_index,
                    i + 1
                )));
            }
            if b.part >= parts.len() {
                return Err(ModelError::Format(format!("step {} references missing part {}", b.step_index, b.part)));
            }
            if !b.placement.is_rigid() {
                return Err(ModelError::Format(format!("step {} placement is not rigid", b.step_index)));
            }
        }
        metadata.sort_by_key(|m| m.step_index);
        for w in metadata.windows(2) {
            if w[0].step_index == w[1].step_index {
                return Err(ModelError::Format(format!("duplicate metadata for step {}", w[0].step_index)));
            }
        }
        if let Some(m) = metadata.iter().find(|m| m.step_index == 0 || m.step_index as usize > bricks.len()) {
            return Err(ModelError::Format(format!("metadata for nonexistent step {}", m.step_index)));
        }
        Ok(Self { parts, bricks, metadata, marker_anchor })
    }

    pub fn parts(&self) -> &[BrickPart] {
        &self.parts
    }

    pub fn bricks(&self) -> &[PlacedBrick] {
        &self.bricks
    }

    pub fn metadata(&self) -> &[StepMetadata] {
        &self.metadata
    }

    pub fn marker_anchor(&self) -> &Pose6DoF {
        &self.marker_anchor
    }

    pub fn final_step(&self) -> u32 {
        self.bricks.len() as u32
    }

    /// Brick placed at `step` (1-based).
    pub fn brick(&self, step: u32) -> Option<&PlacedBrick> {
        step.checked_sub(1).and_then(|i| self.bricks.get(i as usize))
    }

    pub fn part_of(&self, brick: &PlacedBrick) -> &BrickPart {
        &self.parts[brick.part]
    }

    pub fn step_metadata(&self, step: u32) -> Option<&StepMetadata> {
        self.metadata
            .binary_search_by_key(&step, |m| m.step_index)
            .ok()
            .map(|i| &self.metadata[i])
    }

    /// Same model with a different anchor.
    pub fn with_marker_anchor(&self, anchor: Pose6DoF) -> Self {
        Self { marker_anchor: anchor, ..self.clone() }
    }

    /// Brick → marker frame transform.
    pub fn brick_to_marker(&self, brick: &PlacedBrick) -> Pose6DoF {
        self.marker_anchor.compose(&brick.placement)
    }

    /// Brick bounds in the model frame.
    pub fn brick_bbox(&self, brick: &PlacedBrick) -> Aabb {
        self.part_of(brick).bbox.transformed(&brick.placement)
    }

    /// Up to `max_points` mesh vertices in the model frame, spread evenly
    /// over steps and then over each brick's vertices. Deterministic.
    pub fn sample_points(&self, max_points: usize) -> Vec<Point3<f64>> {
        let n = self.bricks.len();
        if max_points == 0 {
            return Vec::new();
        }
        let per_brick = |i: usize| max_points / n + usize::from(i < max_points % n);
        self.bricks
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                let verts = &self.part_of(b).mesh.vertices;
                let take = per_brick(i).min(verts.len());
                (0..take).map(move |j| b.placement.transform_point(&verts[j * verts.len() / take]))
            })
            .collect()
    }
}

/// A step whose brick starts below some earlier brick's bottom.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeException {
    pub step_index: u32,
    pub bottom_mm: f64,
    pub max_prior_bottom_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct OrderReport {
    pub bridge_exceptions: Vec<BridgeException>,
}

/// Elevation comparisons ignore differences below this (mm).
pub const ELEVATION_TOLERANCE_MM: f64 = 1e-6;

/// Flags steps that break the lower-before-higher build order. Elevation
/// is the minimum model-frame `z` of the brick's mesh.
pub fn validate_step_order(model: &AssemblyModel) -> OrderReport {
    let mut max_prior = f64::NEG_INFINITY;
    let mut bridge_exceptions = Vec::new();
    for b in model.bricks() {
        let bottom = bottom_elevation(model, b);
        if bottom < max_prior - ELEVATION_TOLERANCE_MM {
            bridge_exceptions.push(BridgeException {
                step_index: b.step_index,
                bottom_mm: bottom,
                max_prior_bottom_mm: max_prior,
            });
        }
        max_prior = max_prior.max(bottom);
    }
    OrderReport { bridge_exceptions }
}

pub fn bottom_elevation(model: &AssemblyModel, brick: &PlacedBrick) -> f64 {
    let r = brick.placement.rotation.row(2);
    let tz = brick.placement.translation.z;
    model
        .part_of(brick)
        .mesh
        .vertices
        .iter()
        .map(|v| r.dot(&v.coords.transpose()) + tz)
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn stacked(zs: &[f64]) -> AssemblyModel {
        let part = generate_brick_mesh(2, 2, 4.8).unwrap();
        let bricks = zs
            .iter()
            .enumerate()
            .map(|(i, &z)| PlacedBrick {
                part: 0,
                placement: Pose6DoF::from_translation(Vector3::new(0.0, 0.0, z)),
                step_index: i as u32 + 1,
            })
            .collect();
        AssemblyModel::new(vec![part], bricks, vec![], Pose6DoF::identity()).unwrap()
    }

    #[test]
    fn rising_bricks_have_no_flags() {
        let m = stacked(&[0.0, 4.8, 9.6, 9.6, 14.4]);
        assert!(validate_step_order(&m).bridge_exceptions.is_empty());
    }

    #[test]
    fn lower_brick_after_higher_is_flagged() {
        let m = stacked(&[9.6, 0.0]);
        let r = validate_step_order(&m);
        assert_eq!(r.bridge_exceptions.len(), 1);
        assert_eq!(r.bridge_exceptions[0].step_index, 2);
    }

    #[test]
    fn step_gaps_are_rejected() {
        let part = generate_brick_mesh(1, 1, 4.8).unwrap();
        let b = |s| PlacedBrick { part: 0, placement: Pose6DoF::identity(), step_index: s };
        let err = AssemblyModel::new(vec![part.clone()], vec![b(1), b(3)], vec![], Pose6DoF::identity());
        assert!(matches!(err, Err(ModelError::Format(_))));
        let err = AssemblyModel::new(vec![part], vec![], vec![], Pose6DoF::identity());
        assert_eq!(err, Err(ModelError::EmptyModel));
    }

    #[test]
    fn metadata_must_reference_a_step() {
        let part = generate_brick_mesh(1, 1, 4.8).unwrap();
        let b = PlacedBrick { part: 0, placement: Pose6DoF::identity(), step_index: 1 };
        let meta = StepMetadata { step_index: 2, title: "x".into(), body_text: String::new(), image_ref: None };
        assert!(AssemblyModel::new(vec![part], vec![b], vec![meta], Pose6DoF::identity()).is_err());
    }

    #[test]
    fn sample_points_are_capped_and_spread() {
        let m = stacked(&[0.0, 4.8, 9.6]);
        let pts = m.sample_points(100);
        assert_eq!(pts.len(), 100);
        assert!(pts.iter().any(|p| p.z > 9.6));
        assert!(pts.iter().any(|p| p.z < 4.8));
    }
}
