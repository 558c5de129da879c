//! Step-by-step assembly session: which brick is guided, which are already
//! built, and how each camera frame turns into an AR frame.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, Pose6DoF};
use crate::hand::{self, CbCrFrame, ColorSeed, HandConfig, HandError, HandGrid, HexOccluder};
use crate::image::ColorImage;
use crate::marker::{detect_features, update_tracking, DetectorConfig, MarkerSpec, TrackingState, DEFAULT_Q_MIN};
use crate::model::{AssemblyModel, BrickPart, PlacedBrick, StepMetadata};
use crate::render::{composite, rasterize, ARFrame, GuideStyle, RenderError, RenderItem};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("model has no bricks")]
    EmptyModel,
    #[error("session complete")]
    Complete,
    #[error("already at the first step")]
    Boundary,
    #[error("feed is {0}x{1}, camera expects {2}x{3}")]
    Size(u32, u32, u32, u32),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Hand(#[from] HandError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BrickStatus {
    Future,
    Current,
    Placed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepCursor {
    Step(u32),
    Complete,
}

/// Fixed per-session settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub intrinsics: CameraIntrinsics,
    pub marker: MarkerSpec,
    pub detector: DetectorConfig,
    pub q_min: f64,
    pub hand: HandConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            marker: MarkerSpec::default(),
            detector: DetectorConfig::default(),
            q_min: DEFAULT_Q_MIN,
            hand: HandConfig::default(),
        }
    }
}

/// Immutable session snapshot. Transitions return a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    model: Arc<AssemblyModel>,
    config: Arc<SessionConfig>,
    cursor: StepCursor,
    pub tracking: TrackingState,
    pub guide_style: GuideStyle,
    pub hand_enabled: bool,
    pub seeds: Vec<ColorSeed>,
}

pub fn begin_session(model: Arc<AssemblyModel>, config: Arc<SessionConfig>) -> Result<SessionState, SessionError> {
    if model.final_step() == 0 {
        return Err(SessionError::EmptyModel);
    }
    Ok(SessionState {
        model,
        config,
        cursor: StepCursor::Step(1),
        tracking: TrackingState::default(),
        guide_style: GuideStyle::default(),
        hand_enabled: false,
        seeds: Vec::new(),
    })
}

impl SessionState {
    pub fn model(&self) -> &Arc<AssemblyModel> {
        &self.model
    }

    pub fn config(&self) -> &Arc<SessionConfig> {
        &self.config
    }

    pub fn cursor(&self) -> StepCursor {
        self.cursor
    }

    pub fn current_step(&self) -> Option<u32> {
        match self.cursor {
            StepCursor::Step(s) => Some(s),
            StepCursor::Complete => None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.cursor == StepCursor::Complete
    }

    /// Steps strictly below this one are placed.
    fn placed_limit(&self) -> u32 {
        match self.cursor {
            StepCursor::Step(s) => s,
            StepCursor::Complete => self.model.final_step() + 1,
        }
    }

    pub fn status(&self, step: u32) -> BrickStatus {
        let limit = self.placed_limit();
        match step.cmp(&limit) {
            std::cmp::Ordering::Less => BrickStatus::Placed,
            std::cmp::Ordering::Equal => BrickStatus::Current,
            std::cmp::Ordering::Greater => BrickStatus::Future,
        }
    }

    /// Status of every brick, in step order.
    pub fn statuses(&self) -> Vec<BrickStatus> {
        (1..=self.model.final_step()).map(|s| self.status(s)).collect()
    }

    pub fn placed_count(&self) -> u32 {
        self.placed_limit() - 1
    }

    pub fn current_brick(&self) -> Option<&PlacedBrick> {
        self.current_step().and_then(|s| self.model.brick(s))
    }

    /// The guided part on its own, for a client-side preview.
    pub fn guide_preview(&self) -> Option<&BrickPart> {
        self.current_brick().map(|b| self.model.part_of(b))
    }

    pub fn with_guide_style(&self, style: GuideStyle) -> Result<Self, SessionError> {
        style.validate()?;
        Ok(Self { guide_style: style, ..self.clone() })
    }

    pub fn with_hand(&self, enabled: bool) -> Self {
        Self { hand_enabled: enabled, ..self.clone() }
    }

    pub fn with_seeds(&self, seeds: Vec<ColorSeed>) -> Self {
        Self { seeds, ..self.clone() }
    }

    pub fn with_tracking(&self, tracking: TrackingState) -> Self {
        Self { tracking, ..self.clone() }
    }

    pub fn with_config(&self, config: Arc<SessionConfig>) -> Self {
        Self { config, ..self.clone() }
    }
}

pub fn advance_step(state: &SessionState) -> Result<SessionState, SessionError> {
    let next = match state.cursor {
        StepCursor::Complete => return Err(SessionError::Complete),
        StepCursor::Step(s) if s >= state.model.final_step() => StepCursor::Complete,
        StepCursor::Step(s) => StepCursor::Step(s + 1),
    };
    Ok(SessionState { cursor: next, ..state.clone() })
}

pub fn retreat_step(state: &SessionState) -> Result<SessionState, SessionError> {
    let prev = match state.cursor {
        StepCursor::Step(1) => return Err(SessionError::Boundary),
        StepCursor::Step(s) => StepCursor::Step(s - 1),
        StepCursor::Complete => StepCursor::Step(state.model.final_step()),
    };
    Ok(SessionState { cursor: prev, ..state.clone() })
}

pub fn step_info(state: &SessionState) -> Option<&StepMetadata> {
    state.current_step().and_then(|s| state.model.step_metadata(s))
}

/// Tracking step on a feed, leaving the step machine untouched.
pub fn track(state: &SessionState, feed: &ColorImage) -> Result<SessionState, SessionError> {
    let cfg = &state.config;
    let k = &cfg.intrinsics;
    if feed.width != k.width || feed.height != k.height {
        return Err(SessionError::Size(feed.width, feed.height, k.width, k.height));
    }
    let detection = detect_features(feed, &cfg.marker, k, &cfg.detector);
    Ok(state.with_tracking(update_tracking(&state.tracking, &detection, &cfg.marker, k, cfg.q_min)))
}

/// Nearest camera depth of the guide brick's vertices in front of the near plane.
pub fn min_guide_depth(state: &SessionState) -> Option<f64> {
    let brick = state.current_brick()?;
    let cam_from_brick = state.tracking.pose.compose(&state.model.brick_to_marker(brick));
    let near = state.config.intrinsics.near_mm;
    state
        .model
        .part_of(brick)
        .mesh
        .vertices
        .iter()
        .map(|v| cam_from_brick.transform_point(v).z)
        .filter(|&z| z > near)
        .min_by(f64::total_cmp)
}

/// Hexagon occluders for the hand pixels of this frame. Empty when the hand
/// pass is off or no seed has been set.
pub fn hand_pass(state: &SessionState, cbcr: &CbCrFrame) -> Result<Vec<HexOccluder>, SessionError> {
    if !state.hand_enabled || state.seeds.is_empty() {
        return Ok(Vec::new());
    }
    let cfg = &state.config;
    let k = &cfg.intrinsics;
    let grid = HandGrid::new(k.width, k.height, cfg.hand.cell_px)?;
    let raw = hand::segment(cbcr, &state.seeds, &grid)?;
    let refined = hand::refine_mask(&raw, cfg.hand.min_blob_for(&grid));
    Ok(hand::generate_hex_occluders(&refined, k, min_guide_depth(state)))
}

/// Renders the session over `feed` at the current tracking pose: placed
/// bricks and hexagons occlude, the current brick is the guide.
pub fn render_frame(state: &SessionState, feed: &ColorImage, hexes: &[HexOccluder]) -> Result<ARFrame, SessionError> {
    let k = &state.config.intrinsics;
    if feed.width != k.width || feed.height != k.height {
        return Err(SessionError::Size(feed.width, feed.height, k.width, k.height));
    }
    let camera = state.tracking.pose;
    let Some(current) = state.current_step() else {
        return Ok(composite(feed, &rasterize(&[], &camera, k))?);
    };
    let model = &state.model;
    let hex = hand::hex_mesh(hexes, &camera, k);
    let mut items: Vec<RenderItem> = model
        .bricks()
        .iter()
        .take_while(|b| b.step_index < current)
        .map(|b| RenderItem::occluder(&model.part_of(b).mesh, model.brick_to_marker(b)))
        .collect();
    if !hexes.is_empty() {
        items.push(RenderItem::occluder(&hex, Pose6DoF::identity()));
    }
    if let Some(b) = model.brick(current) {
        items.push(RenderItem::guide(&model.part_of(b).mesh, model.brick_to_marker(b), state.guide_style));
    }
    Ok(composite(feed, &rasterize(&items, &camera, k))?)
}

/// Per-frame pipeline without the hand pass: track, then render.
pub fn frame_update(
    state: &SessionState,
    feed: &ColorImage,
    hexes: Option<&[HexOccluder]>,
) -> Result<(SessionState, ARFrame), SessionError> {
    let next = track(state, feed)?;
    let frame = render_frame(&next, feed, hexes.unwrap_or(&[]))?;
    Ok((next, frame))
}

/// Result of one full pipeline step.
#[derive(Debug, Clone)]
pub struct FrameOutput {
    pub state: SessionState,
    pub frame: ARFrame,
    pub hexes: Vec<HexOccluder>,
}

/// Full per-frame pipeline: track, hand pass (if enabled), render.
pub fn process_frame(state: &SessionState, feed: &ColorImage, cbcr: Option<&CbCrFrame>) -> Result<FrameOutput, SessionError> {
    let next = track(state, feed)?;
    let hexes = match cbcr {
        Some(c) => hand_pass(&next, c)?,
        None => Vec::new(),
    };
    let frame = render_frame(&next, feed, &hexes)?;
    Ok(FrameOutput { state: next, frame, hexes })
}

/// Re-derives the step machine invariants from scratch.
pub fn check_invariants(state: &SessionState) -> Result<(), String> {
    let statuses = state.statuses();
    let current: Vec<usize> = statuses.iter().enumerate().filter(|(_, s)| **s == BrickStatus::Current).map(|(i, _)| i).collect();
    let placed = statuses.iter().filter(|s| **s == BrickStatus::Placed).count();
    match (state.cursor(), current.as_slice()) {
        (StepCursor::Complete, []) => {}
        (StepCursor::Step(s), [i]) if *i as u32 + 1 == s => {}
        (c, cur) => return Err(format!("cursor {c:?} with current bricks {cur:?}")),
    }
    let prefix = statuses.iter().take(placed).all(|s| *s == BrickStatus::Placed);
    if !prefix || placed as u32 != state.placed_count() {
        return Err(format!("placed bricks are not the prefix 1..={placed}"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_demo_model, DemoLayout};

    fn session(n: u32) -> SessionState {
        let m = generate_demo_model(n, &DemoLayout::default()).unwrap();
        begin_session(Arc::new(m), Arc::new(SessionConfig::default())).unwrap()
    }

    #[test]
    fn begin_marks_first_current() {
        let s = session(1);
        assert_eq!(s.statuses(), vec![BrickStatus::Current]);
        let s = session(386);
        let st = s.statuses();
        assert_eq!(st[0], BrickStatus::Current);
        assert_eq!(st.iter().filter(|&&x| x == BrickStatus::Future).count(), 385);
        assert_eq!(session(386), s);
    }

    #[test]
    fn advance_and_retreat() {
        let s = session(3);
        let s2 = advance_step(&s).unwrap();
        assert_eq!(s2.current_step(), Some(2));
        assert_eq!(s2.status(1), BrickStatus::Placed);
        assert_eq!(retreat_step(&s2).unwrap(), s);
        let done = advance_step(&advance_step(&s2).unwrap()).unwrap();
        assert!(done.is_complete());
        assert!(done.statuses().iter().all(|&x| x == BrickStatus::Placed));
        assert!(matches!(advance_step(&done), Err(SessionError::Complete)));
        assert_eq!(advance_step(&retreat_step(&done).unwrap()).unwrap(), done);
        assert!(matches!(retreat_step(&s), Err(SessionError::Boundary)));
    }

    #[test]
    fn step_info_follows_cursor() {
        let s = session(45);
        assert!(step_info(&s).is_some()); // "Course 1" at step 1
        let s = advance_step(&s).unwrap();
        assert!(step_info(&s).is_none());
    }

    #[test]
    fn complete_leaves_feed_untouched() {
        let mut s = session(1);
        s = advance_step(&s).unwrap();
        let feed = ColorImage::filled(960, 720, [90, 90, 90]);
        let (_, f) = frame_update(&s, &feed, None).unwrap();
        assert_eq!(f.composed, feed);
        assert!(frame_update(&s, &ColorImage::new(10, 10), None).is_err());
    }
}
