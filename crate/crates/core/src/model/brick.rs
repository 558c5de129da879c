use nalgebra::Point3;

use super::mesh::{box_mesh, cylinder_mesh, Mesh};
use super::{BrickPart, ModelError};

/// Centre-to-centre stud spacing.
pub const STUD_PITCH_MM: f64 = 8.0;
/// Three 1.6 mm units.
pub const STUD_DIAMETER_MM: f64 = 4.8;
pub const STUD_HEIGHT_MM: f64 = 1.6;
/// Height unit of the parametric `brick_WxDxH` names.
pub const HEIGHT_UNIT_MM: f64 = 4.8;
const STUD_SEGMENTS: usize = 12;
const DEFAULT_COLOR: [u8; 3] = [160, 165, 169];

/// Box body `8w × 8d × height_mm` centred on the local origin in x/y with its
/// bottom face at `z = 0`, plus one closed stud per stud position on top.
pub fn generate_brick_mesh(studs_w: u32, studs_d: u32, height_mm: f64) -> Result<BrickPart, ModelError> {
    if studs_w == 0 || studs_d == 0 {
        return Err(ModelError::Dimension(format!("stud counts must be >= 1, got {studs_w}x{studs_d}")));
    }
    if !(height_mm.is_finite() && height_mm > 0.0) {
        return Err(ModelError::Dimension(format!("height must be positive, got {height_mm}")));
    }
    let hw = STUD_PITCH_MM * studs_w as f64 / 2.0;
    let hd = STUD_PITCH_MM * studs_d as f64 / 2.0;
    let mut mesh: Mesh = box_mesh(Point3::new(-hw, -hd, 0.0), Point3::new(hw, hd, height_mm));
    for i in 0..studs_w {
        for j in 0..studs_d {
            let c = Point3::new(
                -hw + STUD_PITCH_MM * (i as f64 + 0.5),
                -hd + STUD_PITCH_MM * (j as f64 + 0.5),
                height_mm,
            );
            mesh.append(&cylinder_mesh(c, STUD_DIAMETER_MM / 2.0, STUD_HEIGHT_MM, STUD_SEGMENTS));
        }
    }
    BrickPart::new(format!("brick_{studs_w}x{studs_d}@{height_mm}mm"), DEFAULT_COLOR, mesh)
}

/// Resolves `brick_WxDxH` (H in 4.8 mm units, case-insensitive). `None` if
/// the name is not parametric.
pub fn parametric_part(name: &str) -> Option<Result<BrickPart, ModelError>> {
    let lower = name.to_ascii_lowercase();
    let dims = lower.strip_prefix("brick_")?;
    let dims = dims.strip_suffix(".dat").unwrap_or(dims);
    let nums: Vec<u32> = dims.split('x').map(|s| s.parse().ok()).collect::<Option<_>>()?;
    let [w, d, h] = nums[..] else { return None };
    Some(generate_brick_mesh(w, d, h as f64 * HEIGHT_UNIT_MM).map(|mut p| {
        p.part_id = name.to_string();
        p
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn one_by_one_dimensions() {
        let p = generate_brick_mesh(1, 1, 4.8).unwrap();
        let e = p.bbox.extent();
        assert!(close(e.x, 8.0) && close(e.y, 8.0));
        assert!(close(e.z, 4.8 + STUD_HEIGHT_MM));
        assert!(p.mesh.is_watertight());
        assert!(p.mesh.signed_volume() > 0.0);
    }

    #[test]
    fn footprint_follows_stud_counts() {
        let p = generate_brick_mesh(2, 4, 24.0).unwrap();
        let e = p.bbox.extent();
        assert!(close(e.x, 16.0) && close(e.y, 32.0) && close(e.z, 25.6));
        assert_eq!(p.mesh.triangles.len(), 12 + 8 * 48);
    }

    #[test]
    fn stud_diameter_is_three_units() {
        let p = generate_brick_mesh(1, 1, 4.8).unwrap();
        let top: Vec<_> = p.mesh.vertices.iter().filter(|v| close(v.z, 4.8 + STUD_HEIGHT_MM)).collect();
        let max_r = top.iter().map(|v| v.x.hypot(v.y)).fold(0.0, f64::max);
        assert!(close(2.0 * max_r, 3.0 * 1.6));
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(generate_brick_mesh(0, 1, 4.8), Err(ModelError::Dimension(_))));
        assert!(matches!(generate_brick_mesh(1, 1, 0.0), Err(ModelError::Dimension(_))));
        assert!(matches!(generate_brick_mesh(1, 1, f64::NAN), Err(ModelError::Dimension(_))));
    }

    #[test]
    fn parametric_names() {
        let p = parametric_part("Brick_2x4x2").unwrap().unwrap();
        assert!(close(p.bbox.extent().z, 9.6 + STUD_HEIGHT_MM));
        assert_eq!(p.part_id, "Brick_2x4x2");
        assert!(parametric_part("3001.dat").is_none());
        assert!(parametric_part("brick_2x4").is_none());
        assert!(matches!(parametric_part("brick_0x4x1"), Some(Err(_))));
    }
}
