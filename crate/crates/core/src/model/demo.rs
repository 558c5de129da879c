//! Synthetic layered tower used by the demo, the simulator and the benches.

use nalgebra::Vector3;

use super::brick::{generate_brick_mesh, HEIGHT_UNIT_MM, STUD_PITCH_MM};
use super::{AssemblyModel, ModelError, PlacedBrick, StepMetadata};
use crate::geometry::Pose6DoF;

// Chroma of every entry, at any shading level, stays well away from skin.
const PALETTE: [[u8; 3]; 6] = [
    [30, 90, 168],
    [250, 200, 10],
    [0, 133, 43],
    [244, 244, 244],
    [160, 165, 169],
    [54, 174, 191],
];

/// Courses of `cols × rows` identical bricks, filled row-major, bottom up.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoLayout {
    pub cols: u32,
    pub rows: u32,
    pub studs_w: u32,
    pub studs_d: u32,
    pub height_units: u32,
    /// Model → marker transform of the finished model.
    pub anchor: Pose6DoF,
    /// Emit a metadata record at the first brick of every course.
    pub course_notes: bool,
}

impl Default for DemoLayout {
    fn default() -> Self {
        Self {
            cols: 5,
            rows: 4,
            studs_w: 2,
            studs_d: 2,
            height_units: 1,
            anchor: Pose6DoF::identity(),
            course_notes: true,
        }
    }
}

impl DemoLayout {
    pub fn per_course(&self) -> u32 {
        self.cols * self.rows
    }

    /// Footprint (x, y) in mm.
    pub fn footprint_mm(&self) -> (f64, f64) {
        (
            self.cols as f64 * self.studs_w as f64 * STUD_PITCH_MM,
            self.rows as f64 * self.studs_d as f64 * STUD_PITCH_MM,
        )
    }
}

/// `bricks` steps of the layered tower, centred on the model origin.
pub fn generate_demo_model(bricks: u32, layout: &DemoLayout) -> Result<AssemblyModel, ModelError> {
    if bricks == 0 {
        return Err(ModelError::EmptyModel);
    }
    if layout.per_course() == 0 {
        return Err(ModelError::Dimension("layout needs at least one brick per course".into()));
    }
    let height = layout.height_units as f64 * HEIGHT_UNIT_MM;
    let base = generate_brick_mesh(layout.studs_w, layout.studs_d, height)?;
    let courses = bricks.div_ceil(layout.per_course());
    let parts: Vec<_> = (0..courses.min(PALETTE.len() as u32))
        .map(|c| base.with_color(PALETTE[c as usize]))
        .collect();
    let (fw, fd) = layout.footprint_mm();
    let (bw, bd) = (layout.studs_w as f64 * STUD_PITCH_MM, layout.studs_d as f64 * STUD_PITCH_MM);
    let mut placed = Vec::with_capacity(bricks as usize);
    let mut metadata = Vec::new();
    for i in 0..bricks {
        let course = i / layout.per_course();
        let k = i % layout.per_course();
        let (col, row) = (k % layout.cols, k / layout.cols);
        let t = Vector3::new(
            -fw / 2.0 + bw * (col as f64 + 0.5),
            -fd / 2.0 + bd * (row as f64 + 0.5),
            height * course as f64,
        );
        placed.push(PlacedBrick {
            part: course as usize % parts.len(),
            placement: Pose6DoF::from_translation(t),
            step_index: i + 1,
        });
        if layout.course_notes && k == 0 {
            metadata.push(StepMetadata {
                step_index: i + 1,
                title: format!("Course {}", course + 1),
                body_text: format!("Start course {} of {courses}.", course + 1),
                image_ref: None,
            });
        }
    }
    AssemblyModel::new(parts, placed, metadata, layout.anchor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_step_order;

    #[test]
    fn tower_is_ordered_and_sized() {
        let m = generate_demo_model(386, &DemoLayout::default()).unwrap();
        assert_eq!(m.final_step(), 386);
        assert!(validate_step_order(&m).bridge_exceptions.is_empty());
        let tris: usize = m.bricks().iter().map(|b| m.part_of(b).mesh.triangles.len()).sum();
        assert!(tris >= 50_000, "{tris} triangles");
        assert_eq!(m.step_metadata(21).unwrap().title, "Course 2");
    }

    #[test]
    fn zero_bricks_is_empty() {
        assert_eq!(generate_demo_model(0, &DemoLayout::default()), Err(ModelError::EmptyModel));
    }
}
