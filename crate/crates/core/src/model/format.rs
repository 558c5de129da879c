//! JSON model document (see `docs/model.schema.json`). Field order is fixed
//! by the struct declarations, so output bytes are stable.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use super::mesh::Mesh;
use super::{AssemblyModel, BrickPart, ModelError, PlacedBrick, StepMetadata};
use crate::geometry::Pose6DoF;

const FORMAT_TAG: &str = "brickxar-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    format: String,
    version: u32,
    final_step: u32,
    marker_anchor: Pose6DoF,
    parts: Vec<PartDoc>,
    bricks: Vec<BrickDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    metadata: Vec<StepMetadata>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartDoc {
    part_id: String,
    color_rgb: [u8; 3],
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[u32; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BrickDoc {
    step_index: u32,
    part: usize,
    placement: Pose6DoF,
}

pub fn serialize_model(model: &AssemblyModel) -> Vec<u8> {
    let doc = ModelDoc {
        format: FORMAT_TAG.to_string(),
        version: FORMAT_VERSION,
        final_step: model.final_step(),
        marker_anchor: *model.marker_anchor(),
        parts: model
            .parts()
            .iter()
            .map(|p| PartDoc {
                part_id: p.part_id.clone(),
                color_rgb: p.color_rgb,
                vertices: p.mesh.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
                triangles: p.mesh.triangles.clone(),
            })
            .collect(),
        bricks: model
            .bricks()
            .iter()
            .map(|b| BrickDoc { step_index: b.step_index, part: b.part, placement: b.placement })
            .collect(),
        metadata: model.metadata().to_vec(),
    };
    let mut out = serde_json::to_vec_pretty(&doc).expect("model document is always serializable");
    out.push(b'\n');
    out
}

pub fn load_model(bytes: &[u8]) -> Result<AssemblyModel, ModelError> {
    let doc: ModelDoc = serde_json::from_slice(bytes).map_err(|e| ModelError::Format(e.to_string()))?;
    if doc.format != FORMAT_TAG || doc.version != FORMAT_VERSION {
        return Err(ModelError::Format(format!("unsupported document {} v{}", doc.format, doc.version)));
    }
    if doc.final_step as usize != doc.bricks.len() {
        return Err(ModelError::Format(format!(
            "final_step {} does not match {} bricks",
            doc.final_step,
            doc.bricks.len()
        )));
    }
    let parts = doc
        .parts
        .into_iter()
        .map(|p| {
            let mesh = Mesh {
                vertices: p.vertices.into_iter().map(Point3::from).collect(),
                triangles: p.triangles,
            };
            BrickPart::new(p.part_id, p.color_rgb, mesh)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let bricks = doc
        .bricks
        .into_iter()
        .map(|b| PlacedBrick { part: b.part, placement: b.placement, step_index: b.step_index })
        .collect();
    AssemblyModel::new(parts, bricks, doc.metadata, doc.marker_anchor).map_err(|e| match e {
        ModelError::EmptyModel => ModelError::Format("document has no bricks".into()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_ldraw;

    fn sample() -> AssemblyModel {
        parse_ldraw(
            "1 4 0 0 0 1 0 0 0 1 0 0 0 1 brick_2x2x1\n0 STEP\n\
             1 1 0 -12 0 0 0 1 0 1 0 -1 0 0 brick_2x4x1\n0 !BRICKXAR INFO 2 Top | Press down.\n0 STEP\n",
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        let m = sample();
        let bytes = serialize_model(&m);
        assert_eq!(load_model(&bytes).unwrap(), m);
        assert_eq!(serialize_model(&m), bytes);
    }

    #[test]
    fn empty_metadata_is_omitted() {
        let m = parse_ldraw("1 4 0 0 0 1 0 0 0 1 0 0 0 1 brick_1x1x1\n").unwrap();
        let text = String::from_utf8(serialize_model(&m)).unwrap();
        assert!(!text.contains("metadata"));
        assert!(String::from_utf8(serialize_model(&sample())).unwrap().contains("\"metadata\""));
    }

    #[test]
    fn schema_violations() {
        let good = String::from_utf8(serialize_model(&sample())).unwrap();
        for bad in [
            "{}".to_string(),
            "not json".to_string(),
            good.replace("\"final_step\": 2", "\"final_step\": 3"),
            good.replace("\"step_index\": 2,\n      \"part\"", "\"step_index\": 5,\n      \"part\""),
            good.replacen("\"format\"", "\"extra\": 1,\n  \"format\"", 1),
            good.replacen("\"rotation\": [\n      [\n        1.0", "\"rotation\": [\n      [\n        2.0", 1),
        ] {
            assert!(matches!(load_model(bad.as_bytes()), Err(ModelError::Format(_))), "accepted: {bad:.200}");
        }
    }
}
