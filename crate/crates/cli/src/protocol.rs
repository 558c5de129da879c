//! Session wire protocol. Text frames carry one JSON message each, tagged by
//! `type`; binary frames carry a composed frame.

use brickxar_core::marker::TrackingMode;
use brickxar_core::model::StepMetadata;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_HEADER_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuideStyleName {
    Shaded,
    Wireframe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Inbound {
    Advance,
    Retreat,
    /// Degrees and millimetres, about the session's orbit target.
    OrbitCamera { yaw: f64, pitch: f64, radius: f64 },
    /// Touch at frame pixel `(u, v)`.
    TouchSeed { u: f64, v: f64 },
    SetHand { on: bool },
    SetGuideStyle { style: GuideStyleName },
    SetGrid { cell_px: u32 },
    /// Test mode only: ground truth for the latest frame.
    QueryTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameStats {
    pub frame_index: u32,
    pub rms_px: f64,
    pub guide_px: usize,
    pub hand_hexes: usize,
    pub seeds: usize,
    pub pipeline_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    /// `None` once the build is complete.
    pub current_step: Option<u32>,
    pub final_step: u32,
    pub complete: bool,
    pub tracking: TrackingMode,
    pub quality: f64,
    pub step_info: Option<StepMetadata>,
    pub hand_enabled: bool,
    pub guide_style: GuideStyleName,
    pub cell_px: u32,
    /// Latest rendered frame; absent before the first one.
    pub metrics: Option<FrameStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Outbound {
    StateSnapshot(StateSnapshot),
    Error { text: String },
    /// Masks as alternating run lengths, row-major, starting with an unset run.
    Truth { frame_index: u32, width: u32, height: u32, hand_rle: Vec<u32>, guide_rle: Vec<u32> },
}

impl Outbound {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("outbound serializes")
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameDecodeError {
    #[error("frame message shorter than its {FRAME_HEADER_LEN}-byte header")]
    Short,
    #[error("payload is {got} bytes, header promises {want}")]
    Length { want: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub frame_index: u32,
    pub width: u32,
    pub height: u32,
}

impl FrameHeader {
    pub fn payload_len(&self) -> usize {
        self.width as usize * self.height as usize * 3
    }
}

pub fn encode_frame(header: FrameHeader, rgb: &[u8]) -> Vec<u8> {
    debug_assert_eq!(rgb.len(), header.payload_len());
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + rgb.len());
    for v in [header.frame_index, header.width, header.height] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(rgb);
    out
}

pub fn decode_frame(bytes: &[u8]) -> Result<(FrameHeader, &[u8]), FrameDecodeError> {
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FrameDecodeError::Short);
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let header = FrameHeader { frame_index: word(0), width: word(4), height: word(8) };
    let payload = &bytes[FRAME_HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(FrameDecodeError::Length { want: header.payload_len(), got: payload.len() });
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inbound_json_shapes() {
        let m: Inbound = serde_json::from_str(r#"{"type":"orbit_camera","yaw":10,"pitch":45.5,"radius":400}"#).unwrap();
        assert_eq!(m, Inbound::OrbitCamera { yaw: 10.0, pitch: 45.5, radius: 400.0 });
        let m: Inbound = serde_json::from_str(r#"{"type":"set_guide_style","style":"wireframe"}"#).unwrap();
        assert_eq!(m, Inbound::SetGuideStyle { style: GuideStyleName::Wireframe });
        assert_eq!(serde_json::to_string(&Inbound::Advance).unwrap(), r#"{"type":"advance"}"#);
        assert!(serde_json::from_str::<Inbound>(r#"{"type":"set_hand","on":true,"extra":1}"#).is_err());
        assert!(serde_json::from_str::<Inbound>(r#"{"type":"jump"}"#).is_err());
    }

    #[test]
    fn frame_header_is_little_endian() {
        let h = FrameHeader { frame_index: 0x0102_0304, width: 2, height: 1 };
        let bytes = encode_frame(h, &[1, 2, 3, 4, 5, 6]);
        assert_eq!(&bytes[..12], &[4, 3, 2, 1, 2, 0, 0, 0, 1, 0, 0, 0]);
        let (back, rgb) = decode_frame(&bytes).unwrap();
        assert_eq!((back, rgb), (h, &[1u8, 2, 3, 4, 5, 6][..]));
        assert_eq!(decode_frame(&bytes[..13]), Err(FrameDecodeError::Length { want: 6, got: 1 }));
        assert_eq!(decode_frame(&bytes[..5]), Err(FrameDecodeError::Short));
    }
}
