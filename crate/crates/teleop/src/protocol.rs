//! Length-prefixed message framing shared by the service and its clients.
//!
//! Wire layout, all integers big-endian:
//!
//! ```text
//! u32 length        bytes after this field = 1 + 4 + header_len + payload_len
//! u8  type          message type code
//! u32 header_len
//! [header_len]      UTF-8 JSON object
//! [..]              payload
//! ```

use std::io::{self, Read, Write};

use eob_core::geom::{GeomError, Pose};
use eob_core::map::MapSnapshot;
use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames larger than this are rejected as malformed.
pub const MAX_FRAME_LEN: u32 = 64 * 1024 * 1024;

/// Size of the `type` and `header_len` fields counted by `length`.
const FIXED_LEN: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    EgoFrame = 0x01,
    ExoRequest = 0x02,
    ExoResponse = 0x03,
    MapSnapshot = 0x04,
    Status = 0x05,
    Config = 0x06,
}

impl MessageType {
    pub const ALL: [MessageType; 6] = [
        Self::EgoFrame,
        Self::ExoRequest,
        Self::ExoResponse,
        Self::MapSnapshot,
        Self::Status,
        Self::Config,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Broadcast traffic that a slow client may lose.
    pub fn is_droppable(self) -> bool {
        matches!(self, Self::EgoFrame | Self::MapSnapshot)
    }
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame length {0} is below the 5-byte minimum")]
    TooShort(u32),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte limit")]
    TooLong(u32),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("header length {header_len} does not fit in frame length {length}")]
    HeaderOverflow { length: u32, header_len: u32 },
    #[error("header is not valid UTF-8 JSON object: {0}")]
    BadHeader(String),
    #[error("stream ended inside a frame")]
    Truncated,
    #[error("header does not match the message type: {0}")]
    HeaderSchema(String),
    #[error("payload does not match its header: {0}")]
    Payload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One framed message. The header is kept as its exact JSON text so that
/// re-encoding is byte-identical.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageType,
    header: String,
    pub payload: Vec<u8>,
}

impl Message {
    /// Builds a message from raw header text, which must be a JSON object.
    pub fn from_raw(kind: MessageType, header: String, payload: Vec<u8>) -> Result<Self, ProtocolError> {
        check_header(&header)?;
        Ok(Self { kind, header, payload })
    }

    pub fn new<H: Serialize>(kind: MessageType, header: &H, payload: Vec<u8>) -> Self {
        let header = serde_json::to_string(header).expect("header types serialize");
        debug_assert!(header.starts_with('{'));
        Self { kind, header, payload }
    }

    pub fn header_json(&self) -> &str {
        &self.header
    }

    pub fn header<H: DeserializeOwned>(&self) -> Result<H, ProtocolError> {
        serde_json::from_str(&self.header).map_err(|e| ProtocolError::HeaderSchema(e.to_string()))
    }

    pub fn encoded_len(&self) -> usize {
        4 + FIXED_LEN + self.header.len() + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let length = (FIXED_LEN + self.header.len() + self.payload.len()) as u32;
        out.extend_from_slice(&length.to_be_bytes());
        out.push(self.kind.code());
        out.extend_from_slice(&(self.header.len() as u32).to_be_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&self.payload);
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(&self.encode())
    }
}

fn check_header(header: &str) -> Result<(), ProtocolError> {
    match serde_json::from_str::<serde_json::Value>(header) {
        Ok(serde_json::Value::Object(_)) => Ok(()),
        Ok(_) => Err(ProtocolError::BadHeader("header must be a JSON object".into())),
        Err(e) => Err(ProtocolError::BadHeader(e.to_string())),
    }
}

fn check_length(length: u32) -> Result<(), ProtocolError> {
    if (length as usize) < FIXED_LEN {
        return Err(ProtocolError::TooShort(length));
    }
    if length > MAX_FRAME_LEN {
        return Err(ProtocolError::TooLong(length));
    }
    Ok(())
}

/// Parses the body of a frame (everything after the length field).
fn parse_body(length: u32, body: &[u8]) -> Result<Message, ProtocolError> {
    let kind = MessageType::from_code(body[0]).ok_or(ProtocolError::UnknownType(body[0]))?;
    let header_len = u32::from_be_bytes(body[1..5].try_into().expect("4 bytes"));
    if header_len as usize > body.len() - FIXED_LEN {
        return Err(ProtocolError::HeaderOverflow { length, header_len });
    }
    let header_end = FIXED_LEN + header_len as usize;
    let header = std::str::from_utf8(&body[FIXED_LEN..header_end])
        .map_err(|e| ProtocolError::BadHeader(e.to_string()))?
        .to_owned();
    check_header(&header)?;
    Ok(Message {
        kind,
        header,
        payload: body[header_end..].to_vec(),
    })
}

/// Incremental decoder for a byte stream of concatenated frames.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes received but not yet consumed by a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// Next complete message, `Ok(None)` if more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let length = u32::from_be_bytes(self.buf[..4].try_into().expect("4 bytes"));
        check_length(length)?;
        let total = 4 + length as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        let msg = parse_body(length, &self.buf[4..total])?;
        self.buf.drain(..total);
        Ok(Some(msg))
    }
}

/// Decodes a buffer that must hold only whole frames.
pub fn decode_all(bytes: &[u8]) -> Result<Vec<Message>, ProtocolError> {
    let mut dec = FrameDecoder::new();
    dec.push(bytes);
    let mut out = Vec::new();
    while let Some(m) = dec.next_message()? {
        out.push(m);
    }
    if dec.pending() > 0 {
        return Err(ProtocolError::Truncated);
    }
    Ok(out)
}

/// Reads one frame; `Ok(None)` on a clean end of stream between frames.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>, ProtocolError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(ProtocolError::Truncated),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let length = u32::from_be_bytes(len);
    check_length(length)?;
    let mut body = vec![0u8; length as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
        _ => ProtocolError::Io(e),
    })?;
    parse_body(length, &body).map(Some)
}

// ---------------------------------------------------------------------------
// Typed headers
// ---------------------------------------------------------------------------

/// Pose as carried in headers: translation, `[qx, qy, qz, qw]`, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseJson {
    pub t: [f64; 3],
    pub q: [f64; 4],
    pub ts: f64,
}

impl From<&Pose> for PoseJson {
    fn from(p: &Pose) -> Self {
        let t = p.translation();
        Self {
            t: [t.x, t.y, t.z],
            q: p.quaternion(),
            ts: p.timestamp(),
        }
    }
}

impl PoseJson {
    /// Converts to a pose, normalizing the quaternion.
    pub fn to_pose(&self) -> Result<Pose, GeomError> {
        let n = self.q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n > 1e-12) || !n.is_finite() {
            return Err(GeomError::NonUnitQuaternion(n));
        }
        Pose::from_quaternion(self.t, self.q.map(|c| c / n), self.ts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EgoFrameHeader {
    /// Source event counter.
    pub frame_index: u64,
    /// Buffer sequence number when the frame was admitted.
    pub seq: Option<u64>,
    pub pose: PoseJson,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoRequestHeader {
    /// EOB distance in admitted frames; must be at least 1.
    pub f: i64,
    /// Optional virtual camera for an additional map render.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_view: Option<PoseJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExoResponseHeader {
    pub f: u64,
    pub clamped: bool,
    pub reference_seq: u64,
    pub current_seq: u64,
    /// Synthesis time of this request.
    pub latency_ms: f64,
    /// Mean synthesis time over the session.
    pub mean_latency_ms: f64,
    pub overlay_pixels: u64,
    pub width: u32,
    pub height: u32,
    /// Byte length of the exo JPEG at the start of the payload.
    pub exo_len: u64,
    /// Byte length of the trailing map JPEG (0 when no map view was asked).
    pub map_view_len: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSnapshotHeader {
    /// Point counts per section; each point is three little-endian f32.
    pub trajectory_len: u64,
    pub features_len: u64,
    pub rov_len: u64,
    pub frames_seen: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_pose: Option<PoseJson>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusHeader {
    /// `connected`, `warming_up`, `error` or `complete`.
    pub state: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_id: Option<u64>,
}

impl StatusHeader {
    pub fn new(state: &str, message: Option<String>) -> Self {
        Self {
            state: state.into(),
            message,
            request_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub capacity: u64,
    pub pose_threshold: f64,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub point_radius: u32,
    pub transfer_mode: String,
    pub points: u64,
    pub jpeg_quality: u8,
}

pub fn status_message(state: &str, message: Option<String>) -> Message {
    Message::new(MessageType::Status, &StatusHeader::new(state, message), Vec::new())
}

// ---------------------------------------------------------------------------
// Map payload
// ---------------------------------------------------------------------------

fn push_points<'a>(out: &mut Vec<u8>, pts: impl Iterator<Item = &'a Vector3<f64>>) {
    for p in pts {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
}

pub fn encode_map_snapshot(map: &MapSnapshot) -> Message {
    let header = MapSnapshotHeader {
        trajectory_len: map.trajectory.len() as u64,
        features_len: map.feature_points.len() as u64,
        rov_len: map.rov_points.len() as u64,
        frames_seen: map.frames_seen,
        current_pose: map.current_pose.as_ref().map(PoseJson::from),
    };
    let n = map.trajectory.len() + map.feature_points.len() + map.rov_points.len();
    let mut payload = Vec::with_capacity(n * 12);
    push_points(&mut payload, map.trajectory.iter());
    push_points(&mut payload, map.feature_points.points().iter());
    push_points(&mut payload, map.rov_points.points().iter());
    Message::new(MessageType::MapSnapshot, &header, payload)
}

/// Decoded MAP_SNAPSHOT sections.
#[derive(Debug, Clone, PartialEq)]
pub struct MapPayload {
    pub trajectory: Vec<[f32; 3]>,
    pub features: Vec<[f32; 3]>,
    pub rov: Vec<[f32; 3]>,
}

pub fn decode_map_snapshot(msg: &Message) -> Result<(MapSnapshotHeader, MapPayload), ProtocolError> {
    let h: MapSnapshotHeader = msg.header()?;
    let total = h
        .trajectory_len
        .checked_add(h.features_len)
        .and_then(|n| n.checked_add(h.rov_len))
        .and_then(|n| n.checked_mul(12))
        .ok_or_else(|| ProtocolError::Payload("section lengths overflow".into()))?;
    if total != msg.payload.len() as u64 {
        return Err(ProtocolError::Payload(format!(
            "sections need {total} bytes, payload has {}",
            msg.payload.len()
        )));
    }
    let mut chunks = msg.payload.chunks_exact(12).map(|c| {
        let f = |i: usize| f32::from_le_bytes(c[i * 4..i * 4 + 4].try_into().expect("4 bytes"));
        [f(0), f(1), f(2)]
    });
    let mut take = |n: u64| chunks.by_ref().take(n as usize).collect::<Vec<_>>();
    let trajectory = take(h.trajectory_len);
    let features = take(h.features_len);
    let rov = take(h.rov_len);
    Ok((h, MapPayload { trajectory, features, rov }))
}

/// Splits an EXO_RESPONSE payload into the exo JPEG and optional map JPEG.
pub fn split_exo_payload<'a>(
    header: &ExoResponseHeader,
    payload: &'a [u8],
) -> Result<(&'a [u8], Option<&'a [u8]>), ProtocolError> {
    let (e, m) = (header.exo_len as usize, header.map_view_len as usize);
    if e.checked_add(m) != Some(payload.len()) {
        return Err(ProtocolError::Payload(format!(
            "exo_len {e} + map_view_len {m} != payload {}",
            payload.len()
        )));
    }
    Ok((&payload[..e], (m > 0).then(|| &payload[e..])))
}
