//! LDraw subset reader.
//!
//! Supported: line type 1 (one brick per `0 STEP` block), types 3/4 inside
//! `0 FILE` blocks (inline parts, one level deep), types 2/5 are ignored, and
//! the custom metas
//!
//! ```text
//! 0 !BRICKXAR INFO <step> <title> | <body>
//! 0 !BRICKXAR IMAGE <step> <path>
//! 0 !BRICKXAR ANCHOR <x y z a b c d e f g h i>   (mm, model -> marker)
//! ```
//!
//! LDraw is `-y` up in LDU; the model frame is `+z` up in mm, so positions
//! map as `(x, y, z) -> 0.4 * (x, z, -y)` and rotations are conjugated by the
//! same axis change.

use std::collections::HashMap;

use log::{debug, warn};
use nalgebra::{Matrix3, Point3, Vector3};

use super::brick::parametric_part;
use super::mesh::Mesh;
use super::{AssemblyModel, BrickPart, ModelError, PlacedBrick, StepMetadata};
use crate::geometry::{nearest_rotation, Pose6DoF};

pub const LDU_MM: f64 = 0.4;
/// Max-abs deviation of `RᵀR` from identity accepted before snapping.
pub const RIGIDITY_TOLERANCE: f64 = 1e-6;

fn axis_change() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0)
}

fn ldraw_point(x: f64, y: f64, z: f64) -> Point3<f64> {
    Point3::from(axis_change() * Vector3::new(x, y, z) * LDU_MM)
}

struct Section<'a> {
    name: Option<String>,
    lines: Vec<(usize, &'a str)>,
}

fn split_sections(text: &str) -> Vec<Section<'_>> {
    let mut out = vec![Section { name: None, lines: Vec::new() }];
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["0", "FILE", rest @ ..] => out.push(Section { name: Some(rest.join(" ")), lines: Vec::new() }),
            ["0", "NOFILE", ..] => out.push(Section { name: None, lines: Vec::new() }),
            [] => {}
            _ => out.last_mut().expect("non-empty").lines.push((i + 1, line)),
        }
    }
    out
}

fn is_type1(line: &str) -> bool {
    line.split_whitespace().next() == Some("1")
}

fn numbers(line: usize, toks: &[&str]) -> Result<Vec<f64>, ModelError> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| ModelError::Parse {
                line,
                message: format!("expected a number, got `{t}`"),
            })
        })
        .collect()
}

fn parse_inline_part(name: &str, lines: &[(usize, &str)]) -> Result<Mesh, ModelError> {
    let mut mesh = Mesh::new();
    for &(ln, line) in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let count = match toks[0] {
            "0" | "2" | "5" => continue,
            "3" => 3,
            "4" => 4,
            other => {
                return Err(ModelError::Parse {
                    line: ln,
                    message: format!("line type {other} not allowed inside part `{name}`"),
                })
            }
        };
        if toks.len() != 2 + 3 * count {
            return Err(ModelError::Parse { line: ln, message: format!("type {count} line needs {} fields", 2 + 3 * count) });
        }
        let v = numbers(ln, &toks[2..])?;
        let idx: Vec<u32> = v.chunks(3).map(|c| mesh.push_vertex(ldraw_point(c[0], c[1], c[2]))).collect();
        if count == 3 {
            mesh.triangles.push([idx[0], idx[1], idx[2]]);
        } else {
            mesh.push_quad(idx[0], idx[1], idx[2], idx[3]);
        }
    }
    if mesh.is_empty() {
        return Err(ModelError::Parse { line: lines.first().map_or(0, |l| l.0), message: format!("part `{name}` has no faces") });
    }
    Ok(mesh)
}

/// LDraw colour code (or direct `0x2RRGGBB`) to RGB.
pub fn ldraw_color(code: &str) -> Option<[u8; 3]> {
    if let Some(hex) = code.strip_prefix("0x2").or_else(|| code.strip_prefix("0X2")) {
        let v = u32::from_str_radix(hex, 16).ok().filter(|_| hex.len() == 6)?;
        return Some([(v >> 16) as u8, (v >> 8) as u8, v as u8]);
    }
    let rgb = match code.parse::<u32>().ok()? {
        0 => [27, 42, 52],
        1 => [30, 90, 168],
        2 => [0, 133, 43],
        3 => [6, 157, 159],
        4 => [180, 0, 0],
        5 => [211, 53, 157],
        6 => [84, 51, 36],
        7 | 16 => [138, 146, 141],
        8 => [84, 89, 85],
        10 => [88, 171, 65],
        14 => [250, 200, 10],
        15 => [244, 244, 244],
        19 => [228, 205, 158],
        25 => [214, 121, 35],
        28 => [149, 138, 115],
        70 => [95, 49, 9],
        71 => [160, 165, 169],
        72 => [108, 110, 104],
        _ => return None,
    };
    Some(rgb)
}

/// Parses LDraw-subset text into a validated model.
pub fn parse_ldraw(text: &str) -> Result<AssemblyModel, ModelError> {
    let sections = split_sections(text);
    let mut main: Option<&Section> = None;
    let mut inline: HashMap<String, &Section> = HashMap::new();
    for s in &sections {
        let has_bricks = s.lines.iter().any(|(_, l)| is_type1(l));
        if has_bricks {
            if main.is_some() {
                let ln = s.lines.iter().find(|(_, l)| is_type1(l)).map_or(0, |l| l.0);
                return Err(ModelError::Parse { line: ln, message: "only one file may reference parts".into() });
            }
            main = Some(s);
        } else if let Some(name) = &s.name {
            inline.insert(name.to_ascii_lowercase(), s);
        }
    }
    let main = main.ok_or(ModelError::EmptyModel)?;

    let mut parts: Vec<BrickPart> = Vec::new();
    let mut part_index: HashMap<(String, [u8; 3]), usize> = HashMap::new();
    let mut meshes: HashMap<String, BrickPart> = HashMap::new();
    let mut bricks = Vec::new();
    let mut metadata: Vec<StepMetadata> = Vec::new();
    let mut images: Vec<(usize, u32, String)> = Vec::new();
    let mut anchor = Pose6DoF::identity();
    let mut step = 1u32;
    let mut block_has_brick = false;

    for &(ln, line) in &main.lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "0" => match toks.get(1..).unwrap_or_default() {
                ["STEP", ..] => {
                    if block_has_brick {
                        step += 1;
                        block_has_brick = false;
                    }
                }
                ["!BRICKXAR", "INFO", s, ..] => {
                    let step_index = parse_step(ln, s)?;
                    let rest = rest_after(line, 4);
                    let (title, body) = rest.split_once('|').unwrap_or((rest, ""));
                    metadata.push(StepMetadata {
                        step_index,
                        title: title.trim().to_string(),
                        body_text: body.trim().to_string(),
                        image_ref: None,
                    });
                }
                ["!BRICKXAR", "IMAGE", s, path @ ..] if !path.is_empty() => {
                    images.push((ln, parse_step(ln, s)?, path.join(" ")));
                }
                ["!BRICKXAR", "ANCHOR", rest @ ..] => {
                    let v = numbers(ln, rest)?;
                    if v.len() != 12 {
                        return Err(ModelError::Parse { line: ln, message: "ANCHOR needs 12 numbers".into() });
                    }
                    let (rot, t) = rigid_from(ln, &v)?;
                    anchor = Pose6DoF { rotation: rot, translation: t };
                }
                ["!BRICKXAR", ..] => {
                    return Err(ModelError::Parse { line: ln, message: "malformed !BRICKXAR meta".into() });
                }
                _ => debug!("line {ln}: ignoring comment"),
            },
            "1" => {
                if toks.len() < 15 {
                    return Err(ModelError::Parse { line: ln, message: "type 1 line needs 15 fields".into() });
                }
                if block_has_brick {
                    return Err(ModelError::Sequence { line: ln, step });
                }
                let v = numbers(ln, &toks[2..14])?;
                let (rot_ld, t_ld) = rigid_from(ln, &v)?;
                let m = axis_change();
                let placement = Pose6DoF {
                    rotation: m * rot_ld * m.transpose(),
                    translation: m * t_ld * LDU_MM,
                };
                let name = toks[14..].join(" ");
                let color = ldraw_color(toks[1]).unwrap_or_else(|| {
                    warn!("line {ln}: unknown colour `{}`, using grey", toks[1]);
                    [138, 146, 141]
                });
                let key = name.to_ascii_lowercase();
                if !meshes.contains_key(&key) {
                    let part = resolve_part(ln, &name, &inline)?;
                    meshes.insert(key.clone(), part);
                }
                let idx = *part_index.entry((key.clone(), color)).or_insert_with(|| {
                    parts.push(meshes[&key].with_color(color));
                    parts.len() - 1
                });
                bricks.push(PlacedBrick { part: idx, placement, step_index: step });
                block_has_brick = true;
            }
            "2" | "5" => {}
            other => {
                return Err(ModelError::Parse { line: ln, message: format!("line type {other} not allowed in the main file") })
            }
        }
    }

    for (ln, step_index, path) in images {
        match metadata.iter_mut().find(|m| m.step_index == step_index) {
            Some(m) => m.image_ref = Some(path),
            None => metadata.push(StepMetadata { step_index, title: String::new(), body_text: String::new(), image_ref: Some(path) }),
        }
        debug!("line {ln}: image for step {step_index}");
    }
    if bricks.is_empty() {
        return Err(ModelError::EmptyModel);
    }
    AssemblyModel::new(parts, bricks, metadata, anchor)
}

/// Remainder of `line` after skipping `n` whitespace-separated tokens.
fn rest_after(line: &str, n: usize) -> &str {
    let mut rest = line.trim_start();
    for _ in 0..n {
        let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
        rest = rest[end..].trim_start();
    }
    rest.trim_end()
}

fn parse_step(line: usize, tok: &str) -> Result<u32, ModelError> {
    tok.parse::<u32>()
        .ok()
        .filter(|&s| s >= 1)
        .ok_or_else(|| ModelError::Parse { line, message: format!("invalid step index `{tok}`") })
}

/// `x y z a b c d e f g h i` → (snapped rotation, translation).
fn rigid_from(line: usize, v: &[f64]) -> Result<(Matrix3<f64>, Vector3<f64>), ModelError> {
    let t = Vector3::new(v[0], v[1], v[2]);
    let r = Matrix3::new(v[3], v[4], v[5], v[6], v[7], v[8], v[9], v[10], v[11]);
    let dev = (r.transpose() * r - Matrix3::identity()).amax();
    if dev > RIGIDITY_TOLERANCE || r.determinant() <= 0.0 {
        return Err(ModelError::Rigidity { line, deviation: dev.max((r.determinant() - 1.0).abs()) });
    }
    let snapped = nearest_rotation(&r).ok_or(ModelError::Rigidity { line, deviation: dev })?;
    Ok((snapped, t))
}

fn resolve_part(line: usize, name: &str, inline: &HashMap<String, &Section>) -> Result<BrickPart, ModelError> {
    if let Some(sec) = inline.get(&name.to_ascii_lowercase()) {
        let mesh = parse_inline_part(name, &sec.lines)?;
        return BrickPart::new(name, [0, 0, 0], mesh);
    }
    match parametric_part(name) {
        Some(p) => p,
        None => Err(ModelError::UnknownPart { line, name: name.to_string() }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENT: &str = "1 0 0 0 1 0 0 0 1";

    #[test]
    fn single_brick_identity() {
        let m = parse_ldraw("1 4 0 0 0 1 0 0 0 1 0 0 0 1 brick_1x1x1\n0 STEP\n").unwrap();
        assert_eq!(m.final_step(), 1);
        let b = m.brick(1).unwrap();
        assert_eq!(b.placement, Pose6DoF::identity());
        assert_eq!(m.part_of(b).color_rgb, [180, 0, 0]);
    }

    #[test]
    fn empty_text() {
        assert_eq!(parse_ldraw(""), Err(ModelError::EmptyModel));
        assert_eq!(parse_ldraw("0 STEP\n0 just a comment\n"), Err(ModelError::EmptyModel));
    }

    #[test]
    fn many_steps() {
        let text: String = (0..386)
            .map(|i| format!("1 15 0 {} 0 {IDENT} brick_2x2x1\n0 STEP\n", -12 * i))
            .collect();
        let m = parse_ldraw(&text).unwrap();
        assert_eq!(m.final_step(), 386);
        assert_eq!(m.parts().len(), 1);
    }

    #[test]
    fn two_bricks_in_one_step() {
        let text = format!("1 4 0 0 0 {IDENT} brick_1x1x1\n1 4 20 0 0 {IDENT} brick_1x1x1\n");
        assert_eq!(parse_ldraw(&text), Err(ModelError::Sequence { line: 2, step: 1 }));
    }

    #[test]
    fn empty_step_blocks_do_not_consume_indices() {
        let text = format!("0 STEP\n1 4 0 0 0 {IDENT} brick_1x1x1\n0 STEP\n0 STEP\n1 4 0 -12 0 {IDENT} brick_1x1x1\n");
        let m = parse_ldraw(&text).unwrap();
        assert_eq!(m.final_step(), 2);
    }

    #[test]
    fn unknown_part() {
        let err = parse_ldraw(&format!("1 4 0 0 0 {IDENT} 3001.dat\n")).unwrap_err();
        assert_eq!(err, ModelError::UnknownPart { line: 1, name: "3001.dat".into() });
    }

    #[test]
    fn non_rigid_transform() {
        let err = parse_ldraw("1 4 0 0 0 2 0 0 0 1 0 0 0 1 brick_1x1x1\n").unwrap_err();
        assert!(matches!(err, ModelError::Rigidity { line: 1, .. }));
        // Mirror images are orthonormal but not rotations.
        let err = parse_ldraw("1 4 0 0 0 -1 0 0 0 1 0 0 0 1 brick_1x1x1\n").unwrap_err();
        assert!(matches!(err, ModelError::Rigidity { .. }));
    }

    #[test]
    fn near_rigid_transform_is_snapped() {
        let m = parse_ldraw("1 4 0 0 0 1.0000004 0 0 0 1 0 0 0 1 brick_1x1x1\n").unwrap();
        assert!(m.brick(1).unwrap().placement.is_rigid());
    }

    #[test]
    fn axes_and_units_convert() {
        // 24 LDU above the origin in LDraw is 9.6 mm up the model z axis.
        let m = parse_ldraw(&format!("1 4 10 -24 5 {IDENT} brick_1x1x1\n")).unwrap();
        let t = m.brick(1).unwrap().placement.translation;
        assert!((t - Vector3::new(4.0, 2.0, 9.6)).norm() < 1e-12);
        // A quarter turn about LDraw -y is a quarter turn about model +z.
        let m = parse_ldraw("1 4 0 0 0 0 0 1 0 1 0 -1 0 0 brick_1x1x1\n").unwrap();
        let r = m.brick(1).unwrap().placement.rotation;
        let x = r * Vector3::x();
        assert!((x.z).abs() < 1e-12 && (x.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inline_part_quads_split() {
        let text = "\
0 FILE main.ldr
1 2 0 0 0 1 0 0 0 1 0 0 0 1 tile.dat
0 STEP
0 NOFILE
0 FILE tile.dat
4 16 0 0 0 10 0 0 10 0 10 0 0 10
3 16 0 0 0 0 0 10 0 -5 5
0 NOFILE
";
        let m = parse_ldraw(text).unwrap();
        let p = m.part_of(m.brick(1).unwrap());
        assert_eq!(p.mesh.triangles.len(), 3);
        assert_eq!(p.color_rgb, [0, 133, 43]);
    }

    #[test]
    fn metadata_lines() {
        let text = format!(
            "1 4 0 0 0 {IDENT} brick_1x1x1\n0 STEP\n\
             1 4 0 -12 0 {IDENT} brick_1x1x1\n0  !BRICKXAR INFO   2 Arch keystone | Place it last.\n\
             0 !BRICKXAR IMAGE 2 img/keystone.png\n0 STEP\n"
        );
        let m = parse_ldraw(&text).unwrap();
        let meta = m.step_metadata(2).unwrap();
        assert_eq!(meta.title, "Arch keystone");
        assert_eq!(meta.body_text, "Place it last.");
        assert_eq!(meta.image_ref.as_deref(), Some("img/keystone.png"));
        assert!(m.step_metadata(1).is_none());
    }

    #[test]
    fn anchor_meta() {
        let text = format!("0 !BRICKXAR ANCHOR 10 -20 0 {IDENT}\n1 4 0 0 0 {IDENT} brick_1x1x1\n");
        let m = parse_ldraw(&text).unwrap();
        assert_eq!(m.marker_anchor().translation, Vector3::new(10.0, -20.0, 0.0));
    }

    #[test]
    fn direct_colours() {
        assert_eq!(ldraw_color("0x2FF8000"), Some([255, 128, 0]));
        assert_eq!(ldraw_color("9999"), None);
    }
}
