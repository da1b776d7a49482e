//! Length-prefixed JSON messages: a 4-byte big-endian payload length
//! followed by that many bytes of UTF-8 JSON holding one object.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::planner::{PlanCommand, PlanSegment, RootState, SpringTarget};
use crate::runtime::{RuntimeSnapshot, seconds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SteerMode {
    Walk,
    Run,
    Crawl,
    Squat,
    Kneel,
    Box,
    Layer,
}

impl SteerMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Walk => "walk",
            Self::Run => "run",
            Self::Crawl => "crawl",
            Self::Squat => "squat",
            Self::Kneel => "kneel",
            Self::Box => "box",
            Self::Layer => "layer",
        }
    }
}

fn default_height() -> f64 {
    0.8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteerCommand {
    pub seq: u64,
    /// Client clock, seconds; echoed only.
    #[serde(default)]
    pub client_time: f64,
    pub mode: SteerMode,
    #[serde(default)]
    pub velocity: f64,
    #[serde(default)]
    pub direction_deg: f64,
    /// Style id for walk, run and layer; defaults to the mode name
    /// (`walk` for layer).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style: Option<String>,
    /// Root height for skills, meters.
    #[serde(default = "default_height")]
    pub height: f64,
    /// Upper-body joint values for layer mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper_body: Option<Vec<f64>>,
}

impl SteerCommand {
    pub fn navigate(seq: u64, velocity: f64, direction_deg: f64) -> Self {
        Self { seq, client_time: 0.0, mode: SteerMode::Walk, velocity, direction_deg, style: None, height: default_height(), upper_body: None }
    }

    /// The planner command, clamped into its envelope, and whether
    /// clamping changed anything.
    pub fn to_plan_command(&self) -> Result<(PlanCommand, bool), String> {
        let style = |fallback: &str| self.style.clone().unwrap_or_else(|| fallback.to_string());
        let raw = match self.mode {
            SteerMode::Walk | SteerMode::Run => {
                PlanCommand::Navigate { velocity: self.velocity, direction_deg: self.direction_deg, style: style(self.mode.name()) }
            }
            SteerMode::Layer => PlanCommand::Layer {
                velocity: self.velocity,
                direction_deg: self.direction_deg,
                style: style("walk"),
                upper_body: self.upper_body.clone().ok_or("layer mode needs upper_body")?,
            },
            skill => PlanCommand::Skill { skill: skill.name().into(), height: self.height, velocity: self.velocity, direction_deg: self.direction_deg },
        };
        if let PlanCommand::Layer { upper_body, .. } = &raw {
            if upper_body.iter().any(|v| !v.is_finite()) {
                return Err("upper_body values must be finite".into());
            }
        }
        Ok(raw.clamped())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Steer(SteerCommand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub seq: u64,
    /// Sequence number the runtime assigned to the command.
    pub cmd_seq: u64,
    /// The command after clamping.
    pub applied: PlanCommand,
    pub clamped: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    pub virtual_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    /// Sequence number of the offending command when it could be read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootPose {
    pub pos: [f64; 3],
    /// `[w, x, y, z]`.
    pub quat: [f64; 4],
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewFrame {
    pub time: f64,
    pub root: RootPose,
    pub joints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanInfo {
    /// Client and runtime sequence numbers of the command it reflects.
    pub client_seq: u64,
    pub cmd_seq: u64,
    pub plan_seq: u64,
    /// Virtual time the plan was published.
    pub published: f64,
    pub start_time: f64,
    pub duration: f64,
    pub target: SpringTarget,
    /// Root state the spring started from.
    pub anchor: RootState,
    pub clamped: bool,
    pub preview: Vec<PreviewFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateUpdate {
    pub virtual_time: f64,
    /// Seconds since the Unix epoch.
    pub wall_time: f64,
    pub root: RootPose,
    pub joints: Vec<f64>,
    /// Client sequence number of the command the applied action reflects.
    pub last_applied_seq: u64,
    /// Newest client sequence number the server accepted.
    pub last_received_seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanInfo>,
    pub deadline_misses: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Ack(Ack),
    State(StateUpdate),
    Error(ErrorReply),
}

pub fn root_pose(frame: &crate::motion::PoseFrame) -> RootPose {
    let q = frame.root_rot.quaternion();
    RootPose {
        pos: [frame.root_pos.x, frame.root_pos.y, frame.root_pos.z],
        quat: [q.w, q.i, q.j, q.k],
        heading: crate::motion::rotation::heading_of(&frame.root_rot),
    }
}

pub fn plan_info(segment: &PlanSegment, plan_seq: u64, tick: u64, cmd_seq: u64, client_seq: u64, max_preview: usize) -> PlanInfo {
    PlanInfo {
        client_seq,
        cmd_seq,
        plan_seq,
        published: seconds(tick),
        start_time: segment.start_time(),
        duration: segment.duration,
        target: segment.target,
        anchor: segment.anchor,
        clamped: segment.clamped,
        preview: segment.preview(max_preview).into_iter().map(|f| PreviewFrame { time: f.time, root: root_pose(f), joints: f.joint_pos.clone() }).collect(),
    }
}

pub fn state_update(snapshot: &RuntimeSnapshot, plan: Option<PlanInfo>, last_received_seq: u64, deadline_misses: u64) -> StateUpdate {
    let wall_time = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    StateUpdate {
        virtual_time: seconds(snapshot.tick),
        wall_time,
        root: root_pose(&snapshot.frame),
        joints: snapshot.frame.joint_pos.clone(),
        last_applied_seq: snapshot.client_seq,
        last_received_seq,
        plan,
        deadline_misses,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("message of {0} bytes exceeds the {1} byte limit")]
    TooLarge(usize, usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FrameError {
    /// The stream is still aligned on a frame boundary.
    pub fn recoverable(&self) -> bool {
        !matches!(self, Self::Io(_))
    }
}

pub fn encode<T: Serialize>(msg: &T) -> Vec<u8> {
    let body = serde_json::to_vec(msg).expect("wire messages serialize");
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_message<W: Write, T: Serialize>(w: &mut W, msg: &T) -> std::io::Result<()> {
    w.write_all(&encode(msg))?;
    w.flush()
}

/// Read one frame's payload. An oversized payload is skipped so the next
/// frame can still be read.
pub fn read_frame<R: Read>(r: &mut R, max: usize) -> Result<Vec<u8>, FrameError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > max {
        let skipped = std::io::copy(&mut r.take(n as u64), &mut std::io::sink())?;
        if skipped < n as u64 {
            return Err(std::io::Error::from(std::io::ErrorKind::UnexpectedEof).into());
        }
        return Err(FrameError::TooLarge(n, max));
    }
    let mut body = vec![0u8; n];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn decode<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, FrameError> {
    let text = std::str::from_utf8(body).map_err(|e| FrameError::Malformed(e.to_string()))?;
    serde_json::from_str(text).map_err(|e| FrameError::Malformed(e.to_string()))
}

pub fn read_message<R: Read, T: for<'de> Deserialize<'de>>(r: &mut R, max: usize) -> Result<T, FrameError> {
    decode(&read_frame(r, max)?)
}

/// Best-effort sequence number of a message that failed to parse.
pub fn sniff_seq(body: &[u8]) -> Option<u64> {
    serde_json::from_slice::<serde_json::Value>(body).ok()?.get("seq")?.as_u64()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_is_length_then_json() {
        let bytes = encode(&ClientMessage::Steer(SteerCommand::navigate(7, 1.0, 90.0)));
        let n = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(n, bytes.len() - 4);
        let v: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(v["type"], "steer");
        assert_eq!(v["mode"], "walk");
        assert_eq!(v["seq"], 7);
    }

    #[test]
    fn minimal_steer_uses_defaults() {
        let m: ClientMessage = decode(br#"{"type":"steer","seq":3,"mode":"squat","height":0.5}"#).unwrap();
        let ClientMessage::Steer(s) = m;
        let (cmd, clamped) = s.to_plan_command().unwrap();
        assert!(!clamped);
        assert_eq!(cmd, PlanCommand::Skill { skill: "squat".into(), height: 0.5, velocity: 0.0, direction_deg: 0.0 });
    }

    #[test]
    fn envelope_clamping_sets_flag() {
        let (cmd, clamped) = SteerCommand::navigate(1, 9.0, 370.0).to_plan_command().unwrap();
        assert!(clamped);
        assert_eq!(cmd, PlanCommand::Navigate { velocity: 6.0, direction_deg: 10.0, style: "walk".into() });
        let crawl = SteerCommand { mode: SteerMode::Crawl, height: 0.1, ..SteerCommand::navigate(2, 0.8, 0.0) };
        let (cmd, clamped) = crawl.to_plan_command().unwrap();
        assert!(clamped);
        assert_eq!(cmd, PlanCommand::Skill { skill: "crawl".into(), height: 0.3, velocity: 0.5, direction_deg: 0.0 });
        let layer = SteerCommand { mode: SteerMode::Layer, ..SteerCommand::navigate(3, 1.0, 0.0) };
        assert!(layer.to_plan_command().is_err());
    }

    #[test]
    fn oversized_frame_is_skipped() {
        let mut data = Vec::new();
        data.extend_from_slice(&300u32.to_be_bytes());
        data.extend_from_slice(&[b'x'; 300]);
        data.extend(encode(&ClientMessage::Steer(SteerCommand::navigate(1, 0.5, 0.0))));
        let mut r = std::io::Cursor::new(data);
        let e = read_frame(&mut r, 200).unwrap_err();
        assert!(matches!(e, FrameError::TooLarge(300, 200)) && e.recoverable());
        let m: ClientMessage = read_message(&mut r, 200).unwrap();
        assert_eq!(m, ClientMessage::Steer(SteerCommand::navigate(1, 0.5, 0.0)));
        assert!(!read_frame(&mut r, 200).unwrap_err().recoverable());
    }
}
