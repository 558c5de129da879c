//! Guide visibility from the rasterizer against the ray-cast oracle, and
//! colour purity of occluder rendering.

use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::geometry::Pose6DoF;
use crate::model::{generate_demo_model, DemoLayout};
use crate::render::{composite, rasterize, visibility_mask, RenderItem};
use crate::sim::scenes::{random_view, ViewBand};
use crate::sim::{render_reality_view, visibility_oracle, BuildKeyframe, Scene, SceneTruth};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionScene {
    pub bricks: u32,
    pub target_step: u32,
    pub oracle_px: usize,
    pub raster_px: usize,
    /// Fraction of all frame pixels where the two masks agree.
    pub agreement: f64,
    /// Disagreement measured against the union of both masks instead.
    pub union_agreement: f64,
    /// Colour bytes the occluders changed relative to the feed.
    pub occluder_bytes_changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionReport {
    pub seed: u64,
    pub scenes: Vec<OcclusionScene>,
    pub min_agreement: f64,
    pub mean_agreement: f64,
    pub min_union_agreement: f64,
    pub occluder_bytes_changed: usize,
}

fn random_scene(rng: &mut ChaCha8Rng) -> Result<(Scene, u32), EvalError> {
    let layout = DemoLayout {
        cols: rng.gen_range(2..=5),
        rows: rng.gen_range(2..=4),
        studs_w: rng.gen_range(1..=3),
        studs_d: rng.gen_range(1..=3),
        height_units: rng.gen_range(1..=3),
        anchor: Pose6DoF::from_axis_angle(
            &Vector3::z(),
            rng.gen_range(-0.6..0.6),
            Vector3::new(rng.gen_range(-15.0..15.0), rng.gen_range(-15.0..15.0), 0.0),
        ),
        course_notes: false,
    };
    let bricks = rng.gen_range(4..=40);
    let model = generate_demo_model(bricks, &layout)?;
    let target = rng.gen_range(2..=bricks);
    let camera = random_view(rng, &Point3::new(0.0, 0.0, 10.0), &ViewBand { distance_mm: (200.0, 450.0), ..ViewBand::default() });
    let mut truth = SceneTruth::still(1, camera);
    truth.built_through = vec![BuildKeyframe { frame: 0, steps: target - 1 }];
    Ok((Scene::new(truth, Arc::new(model))?, target))
}

/// Runs `scenes` random (model, camera, step) cases.
pub fn occlusion_study(scenes: usize, seed: u64) -> Result<OcclusionReport, EvalError> {
    let mut out = Vec::with_capacity(scenes);
    for i in 0..scenes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let (scene, target) = random_scene(&mut rng)?;
        let k = scene.intrinsics();
        let model = &scene.model;
        let camera = scene.truth.camera_pose(0);

        let oracle = visibility_oracle(&scene, 0, target)?;
        let placed: Vec<_> = model
            .bricks()
            .iter()
            .filter(|b| b.step_index < target)
            .map(|b| (&model.part_of(b).mesh, model.brick_to_marker(b)))
            .collect();
        let tb = model.brick(target).expect("target exists");
        let raster = visibility_mask((&model.part_of(tb).mesh, model.brick_to_marker(tb)), &placed, &camera, k);

        let differ = oracle.data.iter().zip(&raster.data).filter(|(a, b)| a != b).count();
        let union = oracle.data.iter().zip(&raster.data).filter(|(a, b)| **a || **b).count();

        let feed = render_reality_view(&scene, &camera, target - 1, 0).0;
        let occluders: Vec<RenderItem> = placed.iter().map(|(m, p)| RenderItem::occluder(m, *p)).collect();
        let composed = composite(&feed, &rasterize(&occluders, &camera, k)).expect("same size").composed;
        let changed = composed.data.iter().zip(&feed.data).filter(|(a, b)| a != b).count();

        out.push(OcclusionScene {
            bricks: model.final_step(),
            target_step: target,
            oracle_px: oracle.count(),
            raster_px: raster.count(),
            agreement: 1.0 - differ as f64 / oracle.data.len() as f64,
            union_agreement: if union == 0 { 1.0 } else { 1.0 - differ as f64 / union as f64 },
            occluder_bytes_changed: changed,
        });
    }
    let min = out.iter().map(|s| s.agreement).fold(1.0, f64::min);
    let mean = out.iter().map(|s| s.agreement).sum::<f64>() / out.len().max(1) as f64;
    Ok(OcclusionReport {
        seed,
        min_agreement: min,
        mean_agreement: mean,
        min_union_agreement: out.iter().map(|s| s.union_agreement).fold(1.0, f64::min),
        occluder_bytes_changed: out.iter().map(|s| s.occluder_bytes_changed).sum(),
        scenes: out,
    })
}
