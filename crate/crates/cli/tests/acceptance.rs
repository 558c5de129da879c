//! Acceptance run: one PASS/FAIL line per primary criterion, with the
//! measured numbers. Failing criteria are reported, not hidden; set
//! `BRICKXAR_ACCEPTANCE_STRICT=1` to turn any FAIL into a non-zero exit.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use brickxar_core::eval::{
    error_propagation, evaluate_hand_corpus, fps_profile, generate_hand_corpus, marker_size_sweep, median, occlusion_study,
    partial_marker_study, registration_study, TrialSetup,
};
use brickxar_core::hand::{refine_mask, HandConfig, HandGrid};
use brickxar_core::instruction::{advance_step, begin_session, check_invariants, process_frame, retreat_step, SessionConfig};
use brickxar_core::marker::{detect_features, update_tracking, DetectorConfig, MarkerSpec, TrackingMode, TrackingState, DEFAULT_Q_MIN};
use brickxar_core::model::{generate_demo_model, AssemblyModel, DemoLayout};
use brickxar_core::sim::scenes::{assembly_session, beside_marker, cover_uncover};
use brickxar_core::sim::{parse_script, render_reality_frame, run_replay, BoxProp, HandBlob, HandSpec, NoiseSpec, ReplayOptions, Scene, SceneTruth};
use brickxar_core::geometry::orbit_pose;
use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn demo(n: u32, layout: &DemoLayout) -> Arc<AssemblyModel> {
    Arc::new(generate_demo_model(n, layout).expect("demo model"))
}

fn registration() -> Outcome {
    let model = demo(386, &DemoLayout::default());
    let spec = MarkerSpec::default();
    let started = Instant::now();
    let noisy = registration_study(&model, &spec, &TrialSetup::new(0.3, SEED), 100, 2000);
    let exact = registration_study(&model, &spec, &TrialSetup::new(0.0, SEED), 100, 2000);
    let secs = started.elapsed().as_secs_f64();
    let worst_exact = exact.trial_means_mm.iter().copied().fold(0.0, f64::max);
    outcome(
        noisy.fraction_below_1mm >= 0.9 && worst_exact < 1e-6 && noisy.sample_points <= 2000 && secs <= 120.0,
        format!(
            "{:.0}% of trials < 1 mm (median {:.3} mm, {} points); noise-free max {:.1e} mm; {:.2} s",
            noisy.fraction_below_1mm * 100.0,
            noisy.median_mm,
            noisy.sample_points,
            worst_exact,
            secs
        ),
    )
}

/// Correspondence study per block, plus a rendered frame with a card over block 0.
fn partial_marker() -> Outcome {
    let spec = MarkerSpec::default();
    let setup = TrialSetup::new(0.3, SEED);
    let reports: Vec<_> = (0..spec.blocks.len()).map(|b| partial_marker_study(&spec, &setup, 100, b)).collect();

    let b0 = &spec.blocks[0];
    let (o, s) = (b0.origin_mm, b0.side_mm());
    let mut truth = SceneTruth::still(1, orbit_pose(&Point3::origin(), -90.0, 60.0, 450.0));
    truth.props.push(BoxProp {
        min: [o.x - 3.0, o.y - s - 3.0, 0.5],
        max: [o.x + s + 3.0, o.y + 3.0, 1.5],
        rgb: [90, 90, 90],
        from_frame: 0,
        until_frame: None,
    });
    let scene = Scene::new(truth, demo(1, &DemoLayout { anchor: beside_marker(), ..DemoLayout::default() })).expect("scene");
    let (img, _) = render_reality_frame(&scene, 0).expect("frame");
    let det = detect_features(&img, &spec, scene.intrinsics(), &DetectorConfig::default());
    let only_block1 = !det.is_empty() && det.iter().all(|c| spec.feature(c.feature_id).map(|f| f.block) == Some(1));
    let rendered = update_tracking(&TrackingState::default(), &det, &spec, scene.intrinsics(), DEFAULT_Q_MIN);

    let ratio_ok = reports.iter().all(|r| r.ratio <= 2.0);
    let tracked = reports.iter().all(|r| r.tracking_rate == 1.0) && rendered.is_tracking() && only_block1;
    let ratios: Vec<String> = reports
        .iter()
        .map(|r| format!("block {} hidden: {:.3}/{:.3} mm = {:.2}x, tracking {:.0}%", r.occluded_block, r.partial_median_mm, r.full_median_mm, r.ratio, r.tracking_rate * 100.0))
        .collect();
    outcome(
        ratio_ok && tracked,
        format!("{}; rendered card over block 0: {} features, all block 1: {only_block1}, {:?}", ratios.join("; "), det.len(), rendered.mode),
    )
}

fn tracking_freeze() -> Outcome {
    let scene = Scene::new(cover_uncover(12, 4..9), demo(3, &DemoLayout::default())).expect("scene");
    let config = SessionConfig { intrinsics: scene.truth.intrinsics, marker: scene.truth.marker.clone(), ..Default::default() };
    let mut state = begin_session(scene.model.clone(), Arc::new(config)).expect("session");
    let mut last_tracked = None;
    let (mut frozen_ok, mut lost_ok, mut resumed) = (true, true, false);
    for t in 0..12 {
        let (feed, cbcr) = render_reality_frame(&scene, t).expect("frame");
        state = process_frame(&state, &feed, Some(&cbcr)).expect("pipeline").state;
        match t {
            0..=3 => last_tracked = state.tracking.is_tracking().then_some(state.tracking.pose),
            4..=8 => {
                lost_ok &= state.tracking.mode == TrackingMode::Lost;
                frozen_ok &= Some(state.tracking.pose) == last_tracked;
            }
            9 => resumed = state.tracking.is_tracking(),
            _ => {}
        }
    }
    outcome(
        lost_ok && frozen_ok && resumed,
        format!("covered frames 4-8 Lost: {lost_ok}, pose bit-identical: {frozen_ok}; frame 9 Tracking: {resumed}"),
    )
}

fn propagation() -> Outcome {
    let model = demo(386, &DemoLayout::default());
    let r = error_propagation(&model, 1.0, 64, SEED, 2000);
    outcome(!r.degenerate && r.correlation > 0.99, format!("Pearson r = {:.4} over {} points", r.correlation, r.points.len()))
}

fn marker_size() -> Outcome {
    let rows = marker_size_sweep(&MarkerSpec::default(), &[100.0, 150.0, 200.0], &TrialSetup::new(0.3, SEED), 100).expect("sweep");
    let detail = rows.iter().map(|r| format!("{:.0} mm: {:.3} mm", r.size_mm, r.median_error_mm)).collect::<Vec<_>>().join(", ");
    outcome(rows[0].median_error_mm > rows[2].median_error_mm, format!("median error {detail}"))
}

fn occlusion() -> Outcome {
    let r = occlusion_study(50, SEED).expect("study");
    outcome(
        r.min_agreement >= 0.995 && r.occluder_bytes_changed == 0,
        format!(
            "{} scenes, min agreement {:.5} (mean {:.5}), occluder colour bytes changed {}",
            r.scenes.len(),
            r.min_agreement,
            r.mean_agreement,
            r.occluder_bytes_changed
        ),
    )
}

/// Border-reachability hole fill and 4-connected blob removal, by BFS.
fn refine_oracle(cols: usize, rows: usize, occ: &[bool], min_blob: usize) -> Vec<bool> {
    let nbrs = |i: usize| {
        let (c, r) = (i % cols, i / cols);
        let mut v = Vec::with_capacity(4);
        if c > 0 {
            v.push(i - 1);
        }
        if c + 1 < cols {
            v.push(i + 1);
        }
        if r > 0 {
            v.push(i - cols);
        }
        if r + 1 < rows {
            v.push(i + cols);
        }
        v
    };
    let mut outside = vec![false; occ.len()];
    let mut q: VecDeque<usize> = (0..occ.len())
        .filter(|&i| {
            let (c, r) = (i % cols, i / cols);
            !occ[i] && (c == 0 || r == 0 || c + 1 == cols || r + 1 == rows)
        })
        .collect();
    q.iter().for_each(|&i| outside[i] = true);
    while let Some(i) = q.pop_front() {
        for j in nbrs(i) {
            if !occ[j] && !outside[j] {
                outside[j] = true;
                q.push_back(j);
            }
        }
    }
    let filled: Vec<bool> = outside.iter().map(|o| !o).collect();
    let mut out = vec![false; occ.len()];
    let mut seen = vec![false; occ.len()];
    for s in 0..occ.len() {
        if !filled[s] || seen[s] {
            continue;
        }
        let mut comp = vec![s];
        seen[s] = true;
        let mut k = 0;
        while k < comp.len() {
            for j in nbrs(comp[k]) {
                if filled[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
            k += 1;
        }
        if comp.len() >= min_blob {
            comp.iter().for_each(|&i| out[i] = true);
        }
    }
    out
}

fn refine_property_suite(cases: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut failures = 0;
    for _ in 0..cases {
        let (cols, rows) = (rng.gen_range(1..=24usize), rng.gen_range(1..=24usize));
        let density = rng.gen_range(0.05..0.9);
        let occ: Vec<bool> = (0..cols * rows).map(|_| rng.gen_bool(density)).collect();
        let min_blob = rng.gen_range(1..=12u32);
        let mut grid = HandGrid::new(cols as u32, rows as u32, 1).expect("grid");
        for (i, &b) in occ.iter().enumerate() {
            grid.set((i % cols) as u32, (i / cols) as u32, b);
        }
        let got = refine_mask(&grid, min_blob);
        let got_bits: Vec<bool> = (0..cols * rows).map(|i| got.get((i % cols) as u32, (i / cols) as u32)).collect();
        let want = refine_oracle(cols, rows, &occ, min_blob as usize);
        // Hole fill alone (no size floor) never clears an occupied cell.
        let filled = refine_mask(&grid, 1);
        let monotone = occ.iter().enumerate().all(|(i, &b)| !b || filled.get((i % cols) as u32, (i / cols) as u32));
        if got_bits != want || !monotone {
            failures += 1;
        }
    }
    (cases, failures)
}

fn hand_iou(scratch: &Path) -> Outcome {
    let dir = scratch.join("hand_corpus");
    let corpus = generate_hand_corpus(&dir, 50, SEED).and_then(|_| evaluate_hand_corpus(&dir, &HandConfig::default()));
    let (cases, failures) = refine_property_suite(1000);
    match corpus {
        Ok(r) => {
            let min = r.per_frame_iou.iter().copied().fold(f64::INFINITY, f64::min);
            outcome(
                r.frames == 50 && r.mean_iou >= 0.85 && failures == 0,
                format!("mean IoU {:.4} (min {min:.4}) over {} frames; refine_mask vs oracle: {failures}/{cases} grids differ", r.mean_iou, r.frames),
            )
        }
        Err(e) => outcome(false, format!("corpus error: {e}")),
    }
}

/// The 386-step build session: every frame checked by the replay, the
/// advance/retreat inverse at every step, and the pipeline timing.
fn session_replay() -> (Outcome, Outcome) {
    let model = demo(386, &DemoLayout { anchor: beside_marker(), ..DemoLayout::default() });
    let triangles: usize = model.bricks().iter().map(|b| model.part_of(b).mesh.triangles.len()).sum();
    let mut truth = assembly_session(400, 386);
    let hand = HandBlob { center_px: [760.0, 560.0], semi_axes_px: [100.0, 60.0], angle_deg: 30.0, velocity_px: [0.0, 0.0] };
    truth.hand = Some(HandSpec::default_skin(vec![hand], SEED));
    truth.noise = NoiseSpec { pixel_sigma: 2.0, seed: SEED };
    let scene = Scene::new(truth, model.clone()).expect("scene");
    let mut script: String = (1..=386).map(|t| format!("{{\"t\":{t},\"ev\":\"advance\"}}\n")).collect();
    script += "{\"t\":1,\"ev\":\"seed\",\"u\":760,\"v\":560}\n";
    let lines = parse_script(&script).expect("script");
    let opts = ReplayOptions { hand_enabled: true, write_frames: false, ..ReplayOptions::default() };
    let replay = run_replay(&scene, &lines, &opts);

    let mut state = begin_session(model.clone(), Arc::new(SessionConfig::default())).expect("session");
    let mut inverse_ok = true;
    for _ in 1..=386 {
        let next = advance_step(&state).expect("advance");
        inverse_ok &= check_invariants(&next).is_ok() && retreat_step(&next).ok().as_ref() == Some(&state);
        state = next;
    }
    inverse_ok &= state.is_complete();

    match replay {
        Ok(r) => {
            let complete = r.final_state.is_complete() && r.final_state.placed_count() == 386;
            let tracked = r.metrics.iter().filter(|m| m.tracking == TrackingMode::Tracking).count();
            let reg = median(&r.metrics.iter().map(|m| m.registration_mean_mm).collect::<Vec<_>>());
            let hexes = r.metrics.iter().filter(|m| m.hand_hexes > 0).count();
            let steps = outcome(
                complete && inverse_ok,
                format!(
                    "{} frames, invariants checked every frame, complete: {complete}; advance/retreat inverse at all 386 steps: {inverse_ok}; tracking {tracked}/{}, median registration {reg:.3} mm",
                    r.metrics.len(),
                    r.metrics.len()
                ),
            );
            let fps = fps_profile(&r.frame_ms).expect("enough frames");
            let speed = outcome(
                triangles >= 50_000 && hexes > 0 && fps.median_ms <= 33.0,
                format!(
                    "{triangles} triangles at 960x720, hand pass on ({hexes} frames with hexagons): median {:.1} ms, p95 {:.1} ms ({:.0} FPS)",
                    fps.median_ms, fps.p95_ms, fps.effective_fps
                ),
            );
            (steps, speed)
        }
        Err(e) => (outcome(false, format!("replay failed: {e}")), outcome(false, "no replay".into())),
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under dir").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Runs every reproducible command twice through the binary and compares
/// the output trees byte for byte.
fn determinism(scratch: &Path) -> Outcome {
    let bin = env!("CARGO_BIN_EXE_brickxar");
    let runs: Vec<PathBuf> = (0..2).map(|i| scratch.join(format!("run{i}"))).collect();
    let mut failed = Vec::new();
    for dir in &runs {
        let model = dir.join("model");
        let scene = dir.join("scene");
        let m = model.join("model.json");
        let steps: Vec<Vec<String>> = vec![
            vec!["--out-dir".into(), model.display().to_string(), "model".into(), "gen-demo".into(), "--bricks".into(), "40".into(), "--anchor-mm".into(), "0,120,0".into()],
            vec!["--out-dir".into(), scene.display().to_string(), "scene".into(), "gen".into(), "--frames".into(), "40".into(), "--steps".into(), "40".into(), "--hand".into(), "--seed".into(), "7".into()],
            vec![
                "--out-dir".into(),
                dir.join("replay").display().to_string(),
                "replay".into(),
                "--model".into(),
                m.display().to_string(),
                "--truth".into(),
                scene.join("truth.json").display().to_string(),
                "--script".into(),
                scene.join("script.jsonl").display().to_string(),
                "--depth".into(),
                "--seed".into(),
                "7".into(),
            ],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "registration".into(), "--trials".into(), "20".into(), "--seed".into(), "7".into()],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "propagation".into(), "--axes".into(), "8".into(), "--seed".into(), "7".into()],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "marker-sweep".into(), "--trials".into(), "30".into(), "--seed".into(), "7".into()],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "partial-marker".into(), "--trials".into(), "20".into(), "--seed".into(), "7".into()],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "hand".into(), "--frames".into(), "6".into(), "--seed".into(), "7".into()],
            vec!["--out-dir".into(), dir.join("eval").display().to_string(), "eval".into(), "occlusion".into(), "--scenes".into(), "6".into(), "--seed".into(), "7".into()],
        ];
        for args in steps {
            let status = Command::new(bin).args(&args).output().expect("binary runs");
            if !status.status.success() {
                failed.push(format!("{} {}: {}", args[2], args[3], String::from_utf8_lossy(&status.stderr).trim()));
            }
        }
    }
    let (a, b) = (files_under(&runs[0]), files_under(&runs[1]));
    let differing: Vec<String> = a
        .iter()
        .filter(|p| std::fs::read(runs[0].join(p)).ok() != std::fs::read(runs[1].join(p)).ok())
        .map(|p| p.display().to_string())
        .collect();
    outcome(
        failed.is_empty() && a == b && differing.is_empty() && !a.is_empty(),
        format!("{} files per run, {} differ{}", a.len(), differing.len(), if failed.is_empty() { String::new() } else { format!("; failures: {failed:?}") }),
    )
}

fn main() {
    let scratch = tempfile::tempdir().expect("scratch dir");
    let mut results: Vec<(&str, Outcome)> = vec![
        ("registration accuracy", registration()),
        ("partial-marker robustness", partial_marker()),
        ("tracking-loss freeze", tracking_freeze()),
        ("error propagation", propagation()),
        ("marker-size effect", marker_size()),
        ("occlusion correctness", occlusion()),
        ("hand IoU", hand_iou(scratch.path())),
    ];
    let (steps, speed) = session_replay();
    results.push(("step-machine soundness", steps));
    results.push(("throughput", speed));
    results.push(("determinism", determinism(scratch.path())));

    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 && std::env::var("BRICKXAR_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
