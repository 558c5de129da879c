//! Synthetic hand-segmentation corpus: chroma rasters, truth masks and a
//! JSON index with the touch points used to seed each frame.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{iou, EvalError};
use crate::hand::{add_seed, refine_mask, segment, CbCrFrame, HandConfig, HandGrid};
use crate::image::Mask;
use crate::model::{generate_demo_model, DemoLayout};
use crate::sim::scenes::{random_view, ViewBand};
use crate::sim::{hand_truth_mask, render_reality_frame, BuildKeyframe, HandBlob, HandSpec, NoiseSpec, Scene, SceneTruth};

pub const CORPUS_INDEX: &str = "index.json";
pub const CORPUS_FORMAT: &str = "brickxar-hand-corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    pub cbcr: String,
    pub mask: String,
    /// Screen-pixel touches that seed this frame, oldest first.
    pub touches: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusIndex {
    pub format: String,
    pub width: u32,
    pub height: u32,
    pub seed: u64,
    pub entries: Vec<CorpusEntry>,
}

fn random_hand(rng: &mut ChaCha8Rng, w: f64, h: f64) -> Vec<HandBlob> {
    let a = rng.gen_range(70.0..120.0);
    let b = rng.gen_range(45.0..75.0);
    let angle: f64 = rng.gen_range(0.0..180.0);
    let margin = 40.0;
    let centre = [rng.gen_range(margin..w - margin), rng.gen_range(margin..h - margin)];
    let palm = HandBlob { center_px: centre, semi_axes_px: [a, b], angle_deg: angle, velocity_px: [0.0; 2] };
    let mut blobs = vec![palm];
    for _ in 0..rng.gen_range(1..=2) {
        let fa = rng.gen_range(35.0..55.0);
        let fb = rng.gen_range(13.0..19.0);
        let dir = (angle + rng.gen_range(-35.0..35.0)).to_radians();
        let reach = 0.8 * a + 0.6 * fa;
        let c = [centre[0] + reach * dir.cos(), centre[1] + reach * dir.sin()];
        blobs.push(HandBlob { center_px: c, semi_axes_px: [fa, fb], angle_deg: dir.to_degrees(), velocity_px: [0.0; 2] });
    }
    blobs
}

/// Writes `frames` corpus entries under `dir` and returns the index.
pub fn generate_hand_corpus(dir: &Path, frames: usize, seed: u64) -> Result<CorpusIndex, EvalError> {
    fs::create_dir_all(dir)?;
    let model = Arc::new(generate_demo_model(60, &DemoLayout::default())?);
    let mut entries = Vec::with_capacity(frames);
    let mut dims = (0, 0);
    for i in 0..frames {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let camera = random_view(&mut rng, &Point3::new(0.0, 0.0, 15.0), &ViewBand { distance_mm: (300.0, 550.0), ..ViewBand::default() });
        let mut truth = SceneTruth::still(1, camera);
        let (w, h) = (truth.intrinsics.width, truth.intrinsics.height);
        dims = (w, h);
        truth.built_through = vec![BuildKeyframe { frame: 0, steps: rng.gen_range(0..=60) }];
        truth.noise = NoiseSpec { pixel_sigma: 2.0, seed: rng.gen() };
        let blobs = random_hand(&mut rng, w as f64, h as f64);
        let palm = blobs[0];
        truth.hand = Some(HandSpec::default_skin(blobs, rng.gen()));
        let scene = Scene::new(truth, model.clone())?;
        let (_, cbcr) = render_reality_frame(&scene, 0)?;
        let mask = hand_truth_mask(&scene, 0)?;

        let (s, c) = palm.angle_deg.to_radians().sin_cos();
        let off = 0.4 * palm.semi_axes_px[0];
        let touches = vec![palm.center_px, [palm.center_px[0] + off * c, palm.center_px[1] + off * s]];

        let name = format!("frame_{i:03}");
        cbcr.write_raw(BufWriter::new(File::create(dir.join(format!("{name}.cbcr")))?))?;
        mask.write_pgm(BufWriter::new(File::create(dir.join(format!("{name}.pgm")))?))?;
        entries.push(CorpusEntry { cbcr: format!("{name}.cbcr"), mask: format!("{name}.pgm"), touches });
    }
    let index = CorpusIndex { format: CORPUS_FORMAT.into(), width: dims.0, height: dims.1, seed, entries };
    fs::write(dir.join(CORPUS_INDEX), super::report_json(&index))?;
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandEvalReport {
    pub frames: usize,
    pub cell_px: u32,
    pub tol_cb: u8,
    pub tol_cr: u8,
    pub min_blob_cells: u32,
    pub per_frame_iou: Vec<f64>,
    pub mean_iou: f64,
}

/// Detected mask for one entry: seed from its touches, segment, refine.
pub fn detect_entry(cbcr: &CbCrFrame, touches: &[[f64; 2]], screen: (u32, u32), cfg: &HandConfig) -> Result<(Mask, u32), EvalError> {
    let mut seeds = Vec::new();
    for t in touches {
        seeds = add_seed(&seeds, (t[0], t[1]), screen, cbcr, cfg)?;
    }
    let grid = HandGrid::new(screen.0, screen.1, cfg.cell_px)?;
    let min_blob = cfg.min_blob_for(&grid);
    let refined = refine_mask(&segment(cbcr, &seeds, &grid)?, min_blob);
    Ok((refined.to_mask(), min_blob))
}

pub fn evaluate_hand_corpus(dir: &Path, cfg: &HandConfig) -> Result<HandEvalReport, EvalError> {
    let index: CorpusIndex = serde_json::from_slice(&fs::read(dir.join(CORPUS_INDEX))?)
        .map_err(|e| EvalError::Corpus(e.to_string()))?;
    if index.format != CORPUS_FORMAT {
        return Err(EvalError::Corpus(format!("unexpected format {}", index.format)));
    }
    let mut per = Vec::with_capacity(index.entries.len());
    let mut min_blob = 0;
    for e in &index.entries {
        let cbcr = CbCrFrame::read_raw(File::open(dir.join(&e.cbcr))?)?;
        let truth = Mask::read_pgm(File::open(dir.join(&e.mask))?)?;
        if (truth.width, truth.height) != (index.width, index.height) {
            return Err(EvalError::Corpus(format!("{} is {}x{}", e.mask, truth.width, truth.height)));
        }
        let (detected, mb) = detect_entry(&cbcr, &e.touches, (index.width, index.height), cfg)?;
        min_blob = mb;
        per.push(iou(&detected, &truth)?.iou);
    }
    let mean = if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 };
    Ok(HandEvalReport {
        frames: per.len(),
        cell_px: cfg.cell_px,
        tol_cb: cfg.tol_cb,
        tol_cr: cfg.tol_cr,
        min_blob_cells: min_blob,
        per_frame_iou: per,
        mean_iou: mean,
    })
}
