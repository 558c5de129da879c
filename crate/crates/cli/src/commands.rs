//! Subcommand implementations. Every file they write lands under `--out-dir`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use brickxar_core::eval::{
    error_propagation, evaluate_hand_corpus, generate_hand_corpus, marker_size_sweep, occlusion_study, partial_marker_study,
    registration_study, report_json, CorpusIndex, EvalError, TrialSetup, CORPUS_INDEX,
};
use brickxar_core::geometry::Pose6DoF;
use brickxar_core::hand::HandConfig;
use brickxar_core::instruction::SessionConfig;
use brickxar_core::marker::{render_marker_image, MarkerSpec};
use brickxar_core::model::{generate_demo_model, load_model, parse_ldraw, serialize_model, validate_step_order, AssemblyModel, DemoLayout};
use brickxar_core::sim::scenes::{assembly_session, cover_uncover, marker_plate_build};
use brickxar_core::sim::{parse_script, run_replay, truth_to_json, HandBlob, HandSpec, NoiseSpec, ReplayOptions, Scene, SceneTruth, SimError};
use nalgebra::Vector3;
use thiserror::Error;

use crate::service::{ServeOptions, Server, ServiceError};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad input: arguments, files or their contents.
    #[error("{0}")]
    Invalid(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Io(_) | SimError::Image(_) => CliError::Internal(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Io(_) | EvalError::Image(_) => CliError::Internal(e.to_string()),
            EvalError::Sim(s) => s.into(),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ServiceError> for CliError {
    fn from(e: ServiceError) -> Self {
        match e {
            ServiceError::Setup(_) => CliError::Invalid(e.to_string()),
            ServiceError::Io(_) => CliError::Internal(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

/// Writes `bytes` to `dir/name`, creating `dir`.
pub fn write_output(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, bytes))
        .map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn load_model_file(path: &Path) -> Result<AssemblyModel, CliError> {
    load_model(&read_input(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

pub fn load_truth_file(path: &Path) -> Result<SceneTruth, CliError> {
    let t: SceneTruth = serde_json::from_slice(&read_input(path)?).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    t.validate().map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    Ok(t)
}

fn anchor_offset(mm: &[f64]) -> Result<Option<Vector3<f64>>, CliError> {
    match mm {
        [] => Ok(None),
        [x, y, z] => Ok(Some(Vector3::new(*x, *y, *z))),
        _ => Err(invalid("--anchor-mm takes x,y,z")),
    }
}

/// `model ingest`: LDraw subset → model document. Prints out-of-order steps.
pub fn model_ingest(input: &Path, anchor_mm: &[f64], out_dir: &Path) -> Result<String, CliError> {
    let text = String::from_utf8(read_input(input)?).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    let mut model = parse_ldraw(&text).map_err(|e| invalid(format!("{}: {e}", input.display())))?;
    // The flag moves the model; any rotation from the file's anchor meta stays.
    if let Some(offset) = anchor_offset(anchor_mm)? {
        let mut pose = *model.marker_anchor();
        pose.translation = offset;
        model = model.with_marker_anchor(pose);
    }
    let path = write_output(out_dir, "model.json", &serialize_model(&model))?;
    let report = validate_step_order(&model);
    let mut msg = format!("{} steps -> {}\n", model.final_step(), path.display());
    for b in &report.bridge_exceptions {
        let _ = writeln!(msg, "step {} starts at {:.2} mm, below an earlier brick at {:.2} mm", b.step_index, b.bottom_mm, b.max_prior_bottom_mm);
    }
    Ok(msg)
}

pub fn triangle_count(model: &AssemblyModel) -> usize {
    model.bricks().iter().map(|b| model.part_of(b).mesh.triangles.len()).sum()
}

/// `model gen-demo`: layered synthetic tower.
pub fn model_gen_demo(bricks: u32, anchor_mm: &[f64], out_dir: &Path) -> Result<String, CliError> {
    let anchor = anchor_offset(anchor_mm)?.map_or_else(Pose6DoF::identity, Pose6DoF::from_translation);
    let layout = DemoLayout { anchor, ..DemoLayout::default() };
    let model = generate_demo_model(bricks, &layout).map_err(invalid)?;
    let path = write_output(out_dir, "model.json", &serialize_model(&model))?;
    Ok(format!("{} steps, {} triangles -> {}\n", model.final_step(), triangle_count(&model), path.display()))
}

/// `marker gen`: printable raster plus the spec it was drawn from.
pub fn marker_gen(spec_path: Option<&Path>, px_per_mm: f64, out_dir: &Path) -> Result<String, CliError> {
    let spec: MarkerSpec = match spec_path {
        Some(p) => serde_json::from_slice(&read_input(p)?).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        None => MarkerSpec::default(),
    };
    let img = render_marker_image(&spec, px_per_mm).map_err(invalid)?;
    let ppm = write_output(out_dir, "marker.ppm", &img.to_ppm())?;
    write_output(out_dir, "marker.json", &report_json(&spec))?;
    Ok(format!("{}x{} px -> {}\n", img.width, img.height, ppm.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    /// Camera orbiting a tower beside the marker, one brick per frame.
    Assembly,
    /// Card over the marker for a stretch of frames.
    Cover,
    /// Bricks piling up on the marker under a fixed camera.
    Plate,
}

#[derive(Debug, Clone)]
pub struct SceneArgs {
    pub kind: SceneKind,
    pub frames: u32,
    pub steps: u32,
    pub hand: bool,
    pub image_noise: f64,
    pub seed: u64,
}

/// Hand blob of the assembly recipe, bottom right of the frame.
pub const ASSEMBLY_HAND: HandBlob = HandBlob { center_px: [760.0, 560.0], semi_axes_px: [100.0, 60.0], angle_deg: 30.0, velocity_px: [0.0, 0.0] };

/// `scene gen` (truth.json) plus the script that matches it (script.jsonl).
pub fn scene_gen(args: &SceneArgs, out_dir: &Path) -> Result<String, CliError> {
    if args.frames == 0 {
        return Err(invalid("--frames must be positive"));
    }
    let mut script = String::new();
    let mut truth = match args.kind {
        SceneKind::Assembly => {
            for t in 1..=args.steps.min(args.frames - 1) {
                let _ = writeln!(script, r#"{{"t":{t},"ev":"advance"}}"#);
            }
            assembly_session(args.frames, args.steps)
        }
        SceneKind::Cover => {
            let (a, b) = (args.frames / 3, 2 * args.frames / 3);
            cover_uncover(args.frames, a..b)
        }
        SceneKind::Plate => marker_plate_build(args.steps),
    };
    if args.hand {
        truth.hand = Some(HandSpec::default_skin(vec![ASSEMBLY_HAND], args.seed));
        if truth.frame_count > 1 {
            let [u, v] = ASSEMBLY_HAND.center_px;
            let _ = writeln!(script, r#"{{"t":1,"ev":"seed","u":{u},"v":{v}}}"#);
            script.push_str("{\"t\":1,\"ev\":\"hand\",\"on\":true}\n");
        }
    }
    if args.image_noise < 0.0 || !args.image_noise.is_finite() {
        return Err(invalid("--image-noise must be finite and non-negative"));
    }
    truth.noise = NoiseSpec { pixel_sigma: args.image_noise, seed: args.seed };
    truth.validate()?;
    write_output(out_dir, "truth.json", &truth_to_json(&truth))?;
    let path = write_output(out_dir, "script.jsonl", script.as_bytes())?;
    Ok(format!("{} frames -> {}\n", truth.frame_count, path.parent().unwrap_or(out_dir).display()))
}

#[derive(Debug, Clone)]
pub struct ReplayArgs {
    pub model: PathBuf,
    pub truth: PathBuf,
    pub script: Option<PathBuf>,
    pub hand: bool,
    pub depth: bool,
    pub timing: bool,
    pub no_frames: bool,
    pub seed: Option<u64>,
    pub hand_config: HandConfig,
}

/// `replay`: frames, optional depth, metrics.jsonl.
pub fn replay(args: &ReplayArgs, out_dir: &Path) -> Result<String, CliError> {
    let model = Arc::new(load_model_file(&args.model)?);
    let mut truth = load_truth_file(&args.truth)?;
    if let Some(seed) = args.seed {
        truth.noise.seed = seed;
        if let Some(h) = truth.hand.as_mut() {
            h.seed = seed;
        }
    }
    let scene = Scene::new(truth, model)?;
    let script = match &args.script {
        Some(p) => parse_script(&String::from_utf8_lossy(&read_input(p)?))?,
        None => Vec::new(),
    };
    let opts = ReplayOptions {
        out_dir: Some(out_dir.to_path_buf()),
        write_frames: !args.no_frames,
        write_depth: args.depth,
        timing: args.timing,
        hand_enabled: args.hand,
        config: SessionConfig { hand: args.hand_config, ..SessionConfig::default() },
        ..ReplayOptions::default()
    };
    let report = run_replay(&scene, &script, &opts)?;
    let tracked = report.metrics.iter().filter(|m| m.tracking == brickxar_core::marker::TrackingMode::Tracking).count();
    let step = report.final_state.current_step().map_or("complete".to_string(), |s| format!("step {s}"));
    Ok(format!("{} frames, {} tracking, ended at {step} -> {}\n", report.metrics.len(), tracked, out_dir.display()))
}

fn default_eval_model() -> AssemblyModel {
    generate_demo_model(386, &DemoLayout::default()).expect("demo layout is valid")
}

fn model_or_default(path: Option<&Path>) -> Result<AssemblyModel, CliError> {
    path.map_or_else(|| Ok(default_eval_model()), load_model_file)
}

/// Renders `rows` as right-aligned columns under `header`.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let mut s = cells.zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect::<Vec<_>>().join("  ");
        s.push('\n');
        s
    };
    let mut out = line(&mut header.iter().copied());
    for r in rows {
        out += &line(&mut r.iter().map(String::as_str));
    }
    out
}

fn emit(out_dir: &Path, stem: &str, json: &[u8], text: String) -> Result<String, CliError> {
    write_output(out_dir, &format!("{stem}.json"), json)?;
    write_output(out_dir, &format!("{stem}.txt"), text.as_bytes())?;
    Ok(text)
}

pub fn eval_registration(model: Option<&Path>, trials: usize, noise_px: f64, max_points: usize, seed: u64, out_dir: &Path) -> Result<String, CliError> {
    let model = model_or_default(model)?;
    let s = registration_study(&model, &MarkerSpec::default(), &TrialSetup::new(noise_px, seed), trials, max_points);
    let rows = vec![vec![
        s.trials.to_string(),
        format!("{:.2}", s.noise_px),
        s.sample_points.to_string(),
        format!("{:.4}", s.median_mm),
        format!("{:.3}", s.fraction_below_1mm),
        s.failures.to_string(),
    ]];
    let text = table(&["trials", "noise_px", "points", "median_mm", "below_1mm", "failures"], &rows);
    emit(out_dir, "registration", &report_json(&s), text)
}

pub fn eval_propagation(model: Option<&Path>, angle_deg: f64, axes: usize, max_points: usize, seed: u64, out_dir: &Path) -> Result<String, CliError> {
    let model = model_or_default(model)?;
    let r = error_propagation(&model, angle_deg, axes, seed, max_points);
    let rows = vec![vec![format!("{:.3}", r.angle_deg), r.axes.to_string(), r.points.len().to_string(), format!("{:.5}", r.correlation), r.degenerate.to_string()]];
    let text = table(&["angle_deg", "axes", "points", "pearson", "degenerate"], &rows);
    emit(out_dir, "propagation", &report_json(&r), text)
}

pub fn eval_marker_sweep(sizes: &[f64], trials: usize, noise_px: f64, seed: u64, out_dir: &Path) -> Result<String, CliError> {
    let rows = marker_size_sweep(&MarkerSpec::default(), sizes, &TrialSetup::new(noise_px, seed), trials)?;
    let cells: Vec<Vec<String>> =
        rows.iter().map(|r| vec![format!("{:.1}", r.size_mm), format!("{:.4}", r.median_error_mm), r.failures.to_string()]).collect();
    let text = table(&["size_mm", "median_error_mm", "failures"], &cells);
    emit(out_dir, "marker_sweep", &report_json(&rows), text)
}

pub fn eval_partial_marker(trials: usize, noise_px: f64, block: usize, seed: u64, out_dir: &Path) -> Result<String, CliError> {
    let spec = MarkerSpec::default();
    if block >= spec.blocks.len() {
        return Err(invalid(format!("--block must be below {}", spec.blocks.len())));
    }
    let r = partial_marker_study(&spec, &TrialSetup::new(noise_px, seed), trials, block);
    let rows = vec![vec![
        r.trials.to_string(),
        r.occluded_block.to_string(),
        format!("{:.4}", r.full_median_mm),
        format!("{:.4}", r.partial_median_mm),
        format!("{:.3}", r.ratio),
        format!("{:.3}", r.tracking_rate),
    ]];
    let text = table(&["trials", "block", "full_mm", "partial_mm", "ratio", "tracking"], &rows);
    emit(out_dir, "partial_marker", &report_json(&r), text)
}

/// Regenerates the corpus unless `dir` already holds one made from `seed`
/// with `frames` entries.
pub fn ensure_hand_corpus(dir: &Path, frames: usize, seed: u64) -> Result<(), CliError> {
    let existing: Option<CorpusIndex> = fs::read(dir.join(CORPUS_INDEX)).ok().and_then(|b| serde_json::from_slice(&b).ok());
    if existing.is_some_and(|i| i.seed == seed && i.entries.len() == frames) {
        return Ok(());
    }
    generate_hand_corpus(dir, frames, seed)?;
    Ok(())
}

pub fn eval_hand(corpus: &Path, frames: usize, seed: u64, cfg: &HandConfig, out_dir: &Path) -> Result<String, CliError> {
    ensure_hand_corpus(corpus, frames, seed)?;
    let r = evaluate_hand_corpus(corpus, cfg)?;
    let min = r.per_frame_iou.iter().copied().fold(f64::INFINITY, f64::min);
    let rows = vec![vec![
        r.frames.to_string(),
        r.cell_px.to_string(),
        format!("{}/{}", r.tol_cb, r.tol_cr),
        r.min_blob_cells.to_string(),
        format!("{:.4}", r.mean_iou),
        format!("{min:.4}"),
    ]];
    let text = table(&["frames", "cell_px", "tol_cb/cr", "min_blob", "mean_iou", "min_iou"], &rows);
    emit(out_dir, "hand_eval", &report_json(&r), text)
}

pub fn eval_occlusion(scenes: usize, seed: u64, out_dir: &Path) -> Result<String, CliError> {
    let r = occlusion_study(scenes, seed)?;
    let rows = vec![vec![
        r.scenes.len().to_string(),
        format!("{:.6}", r.min_agreement),
        format!("{:.6}", r.mean_agreement),
        format!("{:.6}", r.min_union_agreement),
        r.occluder_bytes_changed.to_string(),
    ]];
    let text = table(&["scenes", "min_agree", "mean_agree", "min_union_agree", "bytes_changed"], &rows);
    emit(out_dir, "occlusion", &report_json(&r), text)
}

#[derive(Debug, Clone)]
pub struct ServeArgs {
    pub model: PathBuf,
    pub truth: Option<PathBuf>,
    pub port: u16,
    pub test_mode: bool,
    pub fps: f64,
    pub hand_config: HandConfig,
}

pub fn serve(args: &ServeArgs) -> Result<String, CliError> {
    let mut opts = ServeOptions::new(Arc::new(load_model_file(&args.model)?));
    opts.truth = args.truth.as_deref().map(load_truth_file).transpose()?;
    opts.config.hand = args.hand_config;
    opts.test_mode = args.test_mode;
    opts.frame_interval = (args.fps > 0.0).then(|| Duration::from_secs_f64(1.0 / args.fps));
    let server = Server::bind(("127.0.0.1", args.port), opts)?;
    let addr = server.local_addr().map_err(|e| CliError::Internal(e.to_string()))?;
    log::info!("listening on ws://{addr}");
    eprintln!("listening on ws://{addr}");
    server.run()?;
    Ok(String::new())
}
