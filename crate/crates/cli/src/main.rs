use std::path::PathBuf;
use std::process::ExitCode;

use brickxar_cli::commands::{self, CliError, ReplayArgs, SceneArgs, SceneKind, ServeArgs};
use brickxar_core::hand::HandConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "brickxar", version, about = "Headless AR assembly-instruction engine")]
struct Cli {
    /// Directory for every file a command writes.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    #[command(subcommand)]
    Model(ModelCmd),
    #[command(subcommand)]
    Marker(MarkerCmd),
    #[command(subcommand)]
    Scene(SceneCmd),
    /// Run a scripted session over a scene, writing frames and metrics.
    Replay(ReplayCli),
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Serve live sessions over WebSocket.
    Serve(ServeCli),
}

#[derive(Subcommand)]
enum ModelCmd {
    /// Convert an LDraw-subset file to a model document.
    Ingest {
        input: PathBuf,
        /// Model origin in marker coordinates (mm).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        anchor_mm: Vec<f64>,
    },
    /// Generate the layered demo tower.
    GenDemo {
        #[arg(long, default_value_t = 20)]
        bricks: u32,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        anchor_mm: Vec<f64>,
    },
}

#[derive(Subcommand)]
enum MarkerCmd {
    /// Write the printable marker (PPM) and its spec (JSON).
    Gen {
        /// Marker spec JSON; default marker when omitted.
        #[arg(long)]
        marker: Option<PathBuf>,
        #[arg(long, default_value_t = 4.0)]
        px_per_mm: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Assembly,
    Cover,
    Plate,
}

#[derive(Subcommand)]
enum SceneCmd {
    /// Write a scene truth file and a matching replay script.
    Gen {
        #[arg(long, value_enum, default_value = "assembly")]
        kind: KindArg,
        /// Ignored by `plate`, which always has steps + 1 frames.
        #[arg(long, default_value_t = 400)]
        frames: u32,
        /// Bricks built over the scene (assembly, plate).
        #[arg(long, default_value_t = 386)]
        steps: u32,
        /// Add the synthetic hand and seed it in the script.
        #[arg(long)]
        hand: bool,
        /// Per-channel image noise (8-bit levels).
        #[arg(long, default_value_t = 2.0)]
        image_noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Clone, Copy)]
struct HandArgs {
    #[arg(long, default_value_t = 10)]
    grid_cell_px: u32,
    /// Cb and Cr match tolerance.
    #[arg(long, default_value_t = 12)]
    tol_cbcr: u8,
}

impl HandArgs {
    fn config(self) -> HandConfig {
        HandConfig { tol_cb: self.tol_cbcr, tol_cr: self.tol_cbcr, cell_px: self.grid_cell_px, ..HandConfig::default() }
    }
}

#[derive(Args)]
struct ReplayCli {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    script: Option<PathBuf>,
    /// Start with the hand pass enabled.
    #[arg(long)]
    hand: bool,
    #[arg(long)]
    depth: bool,
    /// Also write timing.jsonl (wall clock, not reproducible).
    #[arg(long)]
    timing: bool,
    #[arg(long)]
    no_frames: bool,
    /// Overrides the noise and hand seeds of the truth file.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    hand_args: HandArgs,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Model registration error over randomized cameras.
    Registration {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_px: f64,
        #[arg(long, default_value_t = 2000)]
        max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Error against distance under pure rotational perturbation.
    Propagation {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        angle_deg: f64,
        #[arg(long, default_value_t = 64)]
        axes: usize,
        #[arg(long, default_value_t = 2000)]
        max_points: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pose error against printed marker width.
    MarkerSweep {
        #[arg(long, value_delimiter = ',', default_value = "100,150,200")]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Pose error with one pattern block hidden.
    PartialMarker {
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0.3)]
        noise_px: f64,
        #[arg(long, default_value_t = 1)]
        block: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Hand-mask IoU on the synthetic corpus (generated if missing).
    Hand {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        hand_args: HandArgs,
    },
    /// Guide visibility against the ray-cast oracle.
    Occlusion {
        #[arg(long, default_value_t = 50)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ServeCli {
    #[arg(long)]
    model: PathBuf,
    /// Scene truth; free orbit on the default desk when omitted.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Answer truth queries.
    #[arg(long)]
    test_mode: bool,
    /// Idle frame rate; 0 renders only in response to input.
    #[arg(long, default_value_t = 15.0)]
    fps: f64,
    #[command(flatten)]
    hand_args: HandArgs,
}

fn run(cli: Cli) -> Result<String, CliError> {
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Model(ModelCmd::Ingest { input, anchor_mm }) => commands::model_ingest(&input, &anchor_mm, out),
        Command::Model(ModelCmd::GenDemo { bricks, anchor_mm }) => commands::model_gen_demo(bricks, &anchor_mm, out),
        Command::Marker(MarkerCmd::Gen { marker, px_per_mm }) => commands::marker_gen(marker.as_deref(), px_per_mm, out),
        Command::Scene(SceneCmd::Gen { kind, frames, steps, hand, image_noise, seed }) => {
            let kind = match kind {
                KindArg::Assembly => SceneKind::Assembly,
                KindArg::Cover => SceneKind::Cover,
                KindArg::Plate => SceneKind::Plate,
            };
            commands::scene_gen(&SceneArgs { kind, frames, steps, hand, image_noise, seed }, out)
        }
        Command::Replay(r) => commands::replay(
            &ReplayArgs {
                model: r.model,
                truth: r.truth,
                script: r.script,
                hand: r.hand,
                depth: r.depth,
                timing: r.timing,
                no_frames: r.no_frames,
                seed: r.seed,
                hand_config: r.hand_args.config(),
            },
            out,
        ),
        Command::Eval(e) => match e {
            EvalCmd::Registration { model, trials, noise_px, max_points, seed } => {
                commands::eval_registration(model.as_deref(), trials, noise_px, max_points, seed, out)
            }
            EvalCmd::Propagation { model, angle_deg, axes, max_points, seed } => {
                commands::eval_propagation(model.as_deref(), angle_deg, axes, max_points, seed, out)
            }
            EvalCmd::MarkerSweep { sizes, trials, noise_px, seed } => commands::eval_marker_sweep(&sizes, trials, noise_px, seed, out),
            EvalCmd::PartialMarker { trials, noise_px, block, seed } => commands::eval_partial_marker(trials, noise_px, block, seed, out),
            EvalCmd::Hand { corpus, frames, seed, hand_args } => {
                let corpus = corpus.unwrap_or_else(|| out.join("hand_corpus"));
                commands::eval_hand(&corpus, frames, seed, &hand_args.config(), out)
            }
            EvalCmd::Occlusion { scenes, seed } => commands::eval_occlusion(scenes, seed, out),
        },
        Command::Serve(s) => commands::serve(&ServeArgs {
            model: s.model,
            truth: s.truth,
            port: s.port,
            test_mode: s.test_mode,
            fps: s.fps,
            hand_config: s.hand_args.config(),
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BRICKXAR_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
