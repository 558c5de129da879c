//! Scripted sessions over a scene, frame by frame.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{render_reality_frame, Scene, SimError};
use crate::eval::registration_error;
use crate::hand::add_seed;
use crate::instruction::{
    advance_step, begin_session, check_invariants, process_frame, retreat_step, SessionConfig, SessionState, StepCursor,
};
use crate::marker::TrackingMode;
use crate::render::GuideStyle;

/// One user action applied before frame `t` is processed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum ReplayEvent {
    Advance,
    Retreat,
    /// Touch at screen pixel `(u, v)` of frame `t`.
    Seed { u: f64, v: f64 },
    Hand { on: bool },
    Style { guide: GuideStyle },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptLine {
    pub t: u32,
    #[serde(flatten)]
    pub ev: ReplayEvent,
}

/// Parses a JSON-lines script; blank lines are skipped.
pub fn parse_script(text: &str) -> Result<Vec<ScriptLine>, SimError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SimError::Script { line: i + 1, message: e.to_string() }))
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReplayOptions {
    pub out_dir: Option<PathBuf>,
    pub write_frames: bool,
    pub write_depth: bool,
    /// Also write per-frame wall-clock timings (not deterministic).
    pub timing: bool,
    pub hand_enabled: bool,
    pub guide_style: GuideStyle,
    /// Session settings; intrinsics and marker are taken from the scene.
    pub config: SessionConfig,
    pub sample_points: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            out_dir: None,
            write_frames: true,
            write_depth: false,
            timing: false,
            hand_enabled: false,
            guide_style: GuideStyle::default(),
            config: SessionConfig::default(),
            sample_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: u32,
    pub current_step: Option<u32>,
    pub placed: u32,
    pub tracking: TrackingMode,
    pub quality: f64,
    pub rms_px: f64,
    /// Camera-centre distance between estimate and truth.
    pub translation_error_mm: f64,
    pub rotation_error_deg: f64,
    /// Mean 3D error over model sample points.
    pub registration_mean_mm: f64,
    pub guide_px: usize,
    pub hand_hexes: usize,
}

#[derive(Debug, Clone)]
pub struct ReplayReport {
    pub metrics: Vec<FrameMetrics>,
    /// Pipeline time per frame (detection, pose, hand pass, raster, composite).
    pub frame_ms: Vec<f64>,
    pub final_state: SessionState,
}

impl ReplayReport {
    pub fn metrics_jsonl(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for m in &self.metrics {
            serde_json::to_writer(&mut out, m).expect("metrics serialize");
            out.push(b'\n');
        }
        out
    }
}

fn apply_event(
    state: &SessionState,
    ev: &ReplayEvent,
    cbcr: &crate::hand::CbCrFrame,
) -> Result<SessionState, SimError> {
    let k = state.config().intrinsics;
    Ok(match ev {
        ReplayEvent::Advance => advance_step(state)?,
        ReplayEvent::Retreat => retreat_step(state)?,
        ReplayEvent::Seed { u, v } => {
            let seeds = add_seed(&state.seeds, (*u, *v), (k.width, k.height), cbcr, &state.config().hand)
                .map_err(crate::instruction::SessionError::from)?;
            state.with_seeds(seeds)
        }
        ReplayEvent::Hand { on } => state.with_hand(*on),
        ReplayEvent::Style { guide } => state.with_guide_style(*guide)?,
    })
}

/// Runs the full per-frame pipeline over every frame of the scene, applying
/// script events first. Session invariants are checked on every frame.
pub fn run_replay(scene: &Scene, script: &[ScriptLine], opts: &ReplayOptions) -> Result<ReplayReport, SimError> {
    let truth = &scene.truth;
    if let Some(bad) = script.iter().find(|l| l.t >= truth.frame_count) {
        return Err(SimError::Range(bad.t, truth.frame_count));
    }
    let mut events: Vec<&ScriptLine> = script.iter().collect();
    events.sort_by_key(|l| l.t);

    let config = SessionConfig { intrinsics: truth.intrinsics, marker: truth.marker.clone(), ..opts.config.clone() };
    let mut state = begin_session(scene.model.clone(), Arc::new(config))?
        .with_hand(opts.hand_enabled)
        .with_guide_style(opts.guide_style)?;
    let points = scene.model.sample_points(opts.sample_points);

    let frames_dir = opts.out_dir.as_ref().map(|d| d.join("frames"));
    if let Some(d) = frames_dir.as_ref().filter(|_| opts.write_frames || opts.write_depth) {
        fs::create_dir_all(d)?;
    }

    let mut metrics = Vec::with_capacity(truth.frame_count as usize);
    let mut frame_ms = Vec::with_capacity(truth.frame_count as usize);
    let mut next_ev = 0;
    for t in 0..truth.frame_count {
        let (feed, cbcr) = render_reality_frame(scene, t)?;
        while next_ev < events.len() && events[next_ev].t == t {
            state = apply_event(&state, &events[next_ev].ev, &cbcr)?;
            next_ev += 1;
        }
        let started = Instant::now();
        let out = process_frame(&state, &feed, Some(&cbcr))?;
        frame_ms.push(started.elapsed().as_secs_f64() * 1e3);
        if out.state.cursor() != state.cursor() {
            return Err(SimError::Invariant { frame: t, message: "frame update changed the step".into() });
        }
        let frame = out.frame;
        let hand_hexes = out.hexes.len();
        state = out.state;
        check_invariants(&state).map_err(|message| SimError::Invariant { frame: t, message })?;

        let true_pose = truth.camera_pose(t);
        let est = state.tracking.pose;
        let reg = registration_error(&est, &true_pose, &points, scene.model.marker_anchor());
        metrics.push(FrameMetrics {
            frame: t,
            current_step: match state.cursor() {
                StepCursor::Step(s) => Some(s),
                StepCursor::Complete => None,
            },
            placed: state.placed_count(),
            tracking: state.tracking.mode,
            quality: state.tracking.quality,
            rms_px: state.tracking.rms_px,
            translation_error_mm: (est.camera_center() - true_pose.camera_center()).norm(),
            rotation_error_deg: est.rotation_angle_to(&true_pose).to_degrees(),
            registration_mean_mm: reg.mean_mm,
            guide_px: frame.guide_mask.count(),
            hand_hexes,
        });

        if let Some(d) = &frames_dir {
            if opts.write_frames {
                frame.composed.write_ppm(BufWriter::new(File::create(d.join(format!("frame_{t:05}.ppm")))?))?;
            }
            if opts.write_depth {
                frame.depth.write_raw(BufWriter::new(File::create(d.join(format!("depth_{t:05}.f32")))?))?;
            }
        }
    }

    let report = ReplayReport { metrics, frame_ms, final_state: state };
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.jsonl"), report.metrics_jsonl())?;
        if opts.timing {
            let mut w = BufWriter::new(File::create(dir.join("timing.jsonl"))?);
            for (t, ms) in report.frame_ms.iter().enumerate() {
                writeln!(w, "{}", serde_json::json!({ "frame": t, "pipeline_ms": ms }))?;
            }
        }
    }
    Ok(report)
}
