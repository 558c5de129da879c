//! Live session service: one WebSocket connection drives one assembly
//! session over a synthetic desk.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use brickxar_core::geometry::{orbit_pose, Pose6DoF};
use brickxar_core::hand::{add_seed, CbCrFrame, HandGrid};
use brickxar_core::instruction::{advance_step, begin_session, process_frame, retreat_step, step_info, SessionConfig, SessionState};
use brickxar_core::model::AssemblyModel;
use brickxar_core::render::{ARFrame, GuideStyle};
use brickxar_core::sim::{hand_truth_mask, render_reality_view, Scene, SceneTruth};
use nalgebra::Point3;
use thiserror::Error;
use tungstenite::{Message, WebSocket};

use crate::protocol::{encode_frame, FrameHeader, FrameStats, GuideStyleName, Inbound, Outbound, StateSnapshot};

pub const DEFAULT_ORBIT: (f64, f64, f64) = (-90.0, 55.0, 560.0);

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid session: {0}")]
    Setup(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub model: Arc<AssemblyModel>,
    /// Desk, marker, hand and noise; also the camera track until the first
    /// `OrbitCamera`. `None`: default desk with the camera on the orbit.
    pub truth: Option<SceneTruth>,
    pub config: SessionConfig,
    /// Enables `QueryTruth`.
    pub test_mode: bool,
    /// Push a frame after this long without input; `None` renders only in
    /// response to input.
    pub frame_interval: Option<Duration>,
}

impl ServeOptions {
    pub fn new(model: Arc<AssemblyModel>) -> Self {
        Self { model, truth: None, config: SessionConfig::default(), test_mode: false, frame_interval: None }
    }
}

struct LastFrame {
    index: u32,
    cbcr: CbCrFrame,
    frame: ARFrame,
    stats: FrameStats,
}

/// One session's state machine, independent of the transport.
pub struct LiveSession {
    scene: Scene,
    state: SessionState,
    orbit_target: Point3<f64>,
    orbit: Option<Pose6DoF>,
    next_index: u32,
    last: Option<LastFrame>,
    test_mode: bool,
}

/// Centre of the box spanning the marker print and the anchored model.
fn orbit_target(model: &AssemblyModel, truth: &SceneTruth) -> Point3<f64> {
    let (hw, hh) = (truth.marker.width_mm / 2.0, truth.marker.height_mm / 2.0);
    let anchor = model.marker_anchor();
    let mut lo = Point3::new(-hw, -hh, 0.0);
    let mut hi = Point3::new(hw, hh, 0.0);
    for p in model.sample_points(500) {
        let w = anchor.transform_point(&p);
        lo = lo.inf(&w);
        hi = hi.sup(&w);
    }
    nalgebra::center(&lo, &hi)
}

impl LiveSession {
    pub fn new(opts: &ServeOptions) -> Result<Self, ServiceError> {
        let setup = |e: &dyn std::fmt::Display| ServiceError::Setup(e.to_string());
        let free_orbit = opts.truth.is_none();
        let mut truth = opts.truth.clone().unwrap_or_else(|| SceneTruth::still(1, Pose6DoF::identity()));
        // Live frames are numbered without bound; the truth track holds its last keyframe.
        truth.frame_count = u32::MAX;
        truth.built_through.clear();
        let target = orbit_target(&opts.model, &truth);
        let scene = Scene::new(truth, opts.model.clone()).map_err(|e| setup(&e))?;
        let config = SessionConfig { intrinsics: scene.truth.intrinsics, marker: scene.truth.marker.clone(), ..opts.config.clone() };
        let state = begin_session(opts.model.clone(), Arc::new(config)).map_err(|e| setup(&e))?;
        let (yaw, pitch, radius) = DEFAULT_ORBIT;
        Ok(Self {
            scene,
            state,
            orbit_target: target,
            orbit: free_orbit.then(|| orbit_pose(&target, yaw, pitch, radius)),
            next_index: 0,
            last: None,
            test_mode: opts.test_mode,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    /// The latest composed frame, if any.
    pub fn last_frame(&self) -> Option<&ARFrame> {
        self.last.as_ref().map(|l| &l.frame)
    }

    fn camera(&self, t: u32) -> Pose6DoF {
        self.orbit.unwrap_or_else(|| self.scene.truth.camera_pose(t))
    }

    /// Applies one inbound event. `Ok(Some(_))` is an extra reply sent before
    /// the acknowledging snapshot; `Ok(None)` means the session changed and a
    /// fresh frame is due.
    pub fn apply(&mut self, msg: Inbound) -> Result<Option<Outbound>, String> {
        let s = &self.state;
        let next = match msg {
            Inbound::Advance => advance_step(s).map_err(|e| e.to_string())?,
            Inbound::Retreat => retreat_step(s).map_err(|e| e.to_string())?,
            Inbound::OrbitCamera { yaw, pitch, radius } => {
                if ![yaw, pitch, radius].iter().all(|v| v.is_finite()) || radius <= 0.0 || !(-90.0..=90.0).contains(&pitch) {
                    return Err(format!("invalid orbit ({yaw}, {pitch}, {radius})"));
                }
                self.orbit = Some(orbit_pose(&self.orbit_target, yaw, pitch, radius));
                return Ok(None);
            }
            Inbound::TouchSeed { u, v } => {
                let last = self.last.as_ref().ok_or("no frame to sample the touch from")?;
                let k = &s.config().intrinsics;
                let seeds = add_seed(&s.seeds, (u, v), (k.width, k.height), &last.cbcr, &s.config().hand).map_err(|e| e.to_string())?;
                s.with_seeds(seeds)
            }
            Inbound::SetHand { on } => s.with_hand(on),
            Inbound::SetGuideStyle { style } => {
                let rgb = match GuideStyle::default() {
                    GuideStyle::Shaded { rgb, .. } => rgb,
                    GuideStyle::Wireframe { edge_rgb } => edge_rgb,
                };
                let style = match style {
                    GuideStyleName::Shaded => GuideStyle::Shaded { rgb, opacity: 1.0 },
                    GuideStyleName::Wireframe => GuideStyle::Wireframe { edge_rgb: rgb },
                };
                s.with_guide_style(style).map_err(|e| e.to_string())?
            }
            Inbound::SetGrid { cell_px } => {
                let k = &s.config().intrinsics;
                HandGrid::new(k.width, k.height, cell_px).map_err(|e| e.to_string())?;
                let mut cfg = (**s.config()).clone();
                cfg.hand.cell_px = cell_px;
                s.with_config(Arc::new(cfg))
            }
            Inbound::QueryTruth => return self.truth().map(Some),
        };
        self.state = next;
        Ok(None)
    }

    fn truth(&self) -> Result<Outbound, String> {
        if !self.test_mode {
            return Err("truth queries need test mode".into());
        }
        let last = self.last.as_ref().ok_or("no frame rendered yet")?;
        let hand = hand_truth_mask(&self.scene, last.index).map_err(|e| e.to_string())?;
        Ok(Outbound::Truth {
            frame_index: last.index,
            width: hand.width,
            height: hand.height,
            hand_rle: hand.to_rle(),
            guide_rle: last.frame.guide_mask.to_rle(),
        })
    }

    /// Renders the next frame and returns its binary message.
    pub fn render(&mut self) -> Result<Vec<u8>, String> {
        let t = self.next_index;
        let camera = self.camera(t);
        let (feed, cbcr) = render_reality_view(&self.scene, &camera, self.state.placed_count(), t);
        let started = Instant::now();
        let out = process_frame(&self.state, &feed, Some(&cbcr)).map_err(|e| e.to_string())?;
        let stats = FrameStats {
            frame_index: t,
            rms_px: out.state.tracking.rms_px,
            guide_px: out.frame.guide_mask.count(),
            hand_hexes: out.hexes.len(),
            seeds: out.state.seeds.len(),
            pipeline_ms: started.elapsed().as_secs_f64() * 1e3,
        };
        self.state = out.state;
        let img = &out.frame.composed;
        let bytes = encode_frame(FrameHeader { frame_index: t, width: img.width, height: img.height }, &img.data);
        self.last = Some(LastFrame { index: t, cbcr, frame: out.frame, stats });
        self.next_index = t.wrapping_add(1);
        Ok(bytes)
    }

    pub fn snapshot(&self) -> StateSnapshot {
        let s = &self.state;
        StateSnapshot {
            current_step: s.current_step(),
            final_step: s.model().final_step(),
            complete: s.is_complete(),
            tracking: s.tracking.mode,
            quality: s.tracking.quality,
            step_info: step_info(s).cloned(),
            hand_enabled: s.hand_enabled,
            guide_style: match s.guide_style {
                GuideStyle::Shaded { .. } => GuideStyleName::Shaded,
                GuideStyle::Wireframe { .. } => GuideStyleName::Wireframe,
            },
            cell_px: s.config().hand.cell_px,
            metrics: self.last.as_ref().map(|l| l.stats.clone()),
        }
    }

    fn snapshot_message(&self) -> Message {
        Message::text(Outbound::StateSnapshot(self.snapshot()).to_json())
    }

    fn error_message(text: impl Into<String>) -> Message {
        Message::text(Outbound::Error { text: text.into() }.to_json())
    }

    /// Frame (if one is due) followed by a snapshot.
    fn frame_messages(&mut self) -> Vec<Message> {
        match self.render() {
            Ok(bytes) => vec![Message::binary(bytes), self.snapshot_message()],
            Err(e) => vec![Self::error_message(e), self.snapshot_message()],
        }
    }

    /// Everything to send in reply to one text message, in order. Every
    /// message ends with a snapshot.
    pub fn handle_text(&mut self, text: &str) -> Vec<Message> {
        let msg = match serde_json::from_str::<Inbound>(text) {
            Ok(m) => m,
            Err(e) => return vec![Self::error_message(format!("malformed message: {e}")), self.snapshot_message()],
        };
        match self.apply(msg) {
            Ok(None) => self.frame_messages(),
            Ok(Some(reply)) => vec![Message::text(reply.to_json()), self.snapshot_message()],
            Err(e) => vec![Self::error_message(e), self.snapshot_message()],
        }
    }

    /// Messages sent right after the handshake: a snapshot, then the first frame.
    pub fn greeting(&mut self) -> Vec<Message> {
        let mut out = vec![self.snapshot_message()];
        out.extend(self.frame_messages());
        out
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn send_all(ws: &mut WebSocket<TcpStream>, msgs: Vec<Message>) -> Result<(), Box<tungstenite::Error>> {
    for m in msgs {
        ws.send(m)?;
    }
    Ok(())
}

fn run_connection(stream: TcpStream, opts: &ServeOptions) -> Result<(), Box<tungstenite::Error>> {
    let peer = stream.peer_addr().ok();
    let mut session = match LiveSession::new(opts) {
        Ok(s) => s,
        Err(e) => {
            log::error!("session setup failed: {e}");
            return Ok(());
        }
    };
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(io::ErrorKind::WouldBlock.into()),
    })?;
    ws.get_ref().set_read_timeout(opts.frame_interval).map_err(tungstenite::Error::Io)?;
    log::info!("session opened for {peer:?}");
    send_all(&mut ws, session.greeting())?;
    loop {
        let reply = match ws.read() {
            Ok(Message::Text(text)) => session.handle_text(&text),
            Ok(Message::Binary(_)) => vec![LiveSession::error_message("binary input is not accepted"), session.snapshot_message()],
            Ok(Message::Close(_)) => break,
            Ok(_) => continue,
            Err(e) if is_timeout(&e) => session.frame_messages(),
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        };
        send_all(&mut ws, reply)?;
    }
    log::info!("session closed for {peer:?}");
    Ok(())
}

pub struct Server {
    listener: TcpListener,
    opts: Arc<ServeOptions>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, opts: ServeOptions) -> Result<Self, ServiceError> {
        // Fail here, not on the first connection.
        LiveSession::new(&opts)?;
        Ok(Self { listener: TcpListener::bind(addr)?, opts: Arc::new(opts) })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one worker thread per session.
    pub fn run(self) -> Result<(), ServiceError> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let opts = self.opts.clone();
            thread::spawn(move || {
                if let Err(e) = run_connection(stream, &opts) {
                    log::warn!("session ended with error: {e}");
                }
            });
        }
        Ok(())
    }
}
