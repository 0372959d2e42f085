//! Newline-delimited JSON between local nodes and the global node. Every
//! line is one [`Envelope`]; every envelope gets one [`Ack`] line back.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::privacy::{scan, PrivacyViolation};
use crate::model::{CameraId, FeatureRecord, Nanos};
use crate::tasks::TaskEvent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    Feature,
    TaskEvent,
    ObjectSummary,
    Heartbeat,
}

impl MessageKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MessageKind::Feature => "feature",
            MessageKind::TaskEvent => "task_event",
            MessageKind::ObjectSummary => "object_summary",
            MessageKind::Heartbeat => "heartbeat",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Envelope {
    pub camera_id: CameraId,
    /// Per-camera sequence number; ingest is idempotent on `(camera_id, seq)`.
    pub seq: u64,
    pub kind: MessageKind,
    pub payload: Value,
    pub sent_at: Nanos,
}

/// Per-batch counts of what one camera saw, frame by frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSummary {
    pub frame_start: u64,
    /// Capture time of `frame_start`.
    pub start_time: Nanos,
    pub frame_period_ns: u64,
    /// Tracked persons per frame.
    pub persons: Vec<u32>,
    /// Non-person objects per frame.
    pub objects: Vec<u32>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Heartbeat {
    #[serde(default)]
    pub frames_processed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Feature(FeatureRecord),
    TaskEvent(TaskEvent),
    ObjectSummary(ObjectSummary),
    Heartbeat(Heartbeat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Ok,
    Duplicate,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ack {
    pub camera_id: Option<CameraId>,
    pub seq: Option<u64>,
    pub status: AckStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("{kind} payload does not match its schema: {reason}")]
    Schema { kind: &'static str, reason: String },
    #[error("privacy guard: {0}")]
    Privacy(#[from] PrivacyViolation),
    #[error("feature vector has length {got}, expected {expected}")]
    VectorLength { expected: usize, got: usize },
    #[error("payload camera {payload} differs from envelope camera {envelope}")]
    CameraMismatch { envelope: CameraId, payload: CameraId },
}

impl Envelope {
    pub fn new(camera_id: CameraId, seq: u64, kind: MessageKind, payload: Value, sent_at: Nanos) -> Self {
        Self { camera_id, seq, kind, payload, sent_at }
    }

    /// Builds an envelope from a typed payload.
    pub fn wrap(camera_id: CameraId, seq: u64, payload: &Payload, sent_at: Nanos) -> Self {
        let (kind, value) = match payload {
            Payload::Feature(f) => (MessageKind::Feature, serde_json::to_value(f)),
            Payload::TaskEvent(e) => (MessageKind::TaskEvent, serde_json::to_value(e)),
            Payload::ObjectSummary(s) => (MessageKind::ObjectSummary, serde_json::to_value(s)),
            Payload::Heartbeat(h) => (MessageKind::Heartbeat, serde_json::to_value(h)),
        };
        Self { camera_id, seq, kind, payload: value.expect("payload types serialize"), sent_at }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("envelope serializes");
        s.push('\n');
        s
    }

    /// Parses one line: privacy scan of the raw document first, then the
    /// envelope schema.
    pub fn parse_line(line: &str) -> Result<Self, (Option<(CameraId, u64)>, ProtocolError)> {
        let raw: Value = serde_json::from_str(line.trim_end()).map_err(|e| (None, ProtocolError::Malformed(e.to_string())))?;
        let ids =
            raw.get("camera_id").and_then(Value::as_str).zip(raw.get("seq").and_then(Value::as_u64)).map(|(c, s)| (CameraId::new(c), s));
        scan(&raw).map_err(|e| (ids.clone(), e.into()))?;
        serde_json::from_value(raw).map_err(|e| (ids, ProtocolError::Malformed(e.to_string())))
    }

    /// Validates the payload against the schema of `kind`.
    pub fn decode(&self, feature_dim: Option<usize>) -> Result<Payload, ProtocolError> {
        scan(&self.payload)?;
        fn typed<T: serde::de::DeserializeOwned>(kind: MessageKind, v: &Value) -> Result<T, ProtocolError> {
            T::deserialize(v).map_err(|e| ProtocolError::Schema { kind: kind.as_str(), reason: e.to_string() })
        }
        let payload = match self.kind {
            MessageKind::Feature => {
                let f: FeatureRecord = typed(self.kind, &self.payload)?;
                if let Some(dim) = feature_dim {
                    if f.vector.len() != dim {
                        return Err(ProtocolError::VectorLength { expected: dim, got: f.vector.len() });
                    }
                }
                if f.camera_id != self.camera_id {
                    return Err(ProtocolError::CameraMismatch { envelope: self.camera_id.clone(), payload: f.camera_id });
                }
                Payload::Feature(f)
            }
            MessageKind::TaskEvent => {
                let e: TaskEvent = typed(self.kind, &self.payload)?;
                if e.camera_id != self.camera_id {
                    return Err(ProtocolError::CameraMismatch { envelope: self.camera_id.clone(), payload: e.camera_id });
                }
                Payload::TaskEvent(e)
            }
            MessageKind::ObjectSummary => {
                let s: ObjectSummary = typed(self.kind, &self.payload)?;
                if s.persons.len() != s.objects.len() {
                    return Err(ProtocolError::Schema { kind: "object_summary", reason: "persons and objects differ in length".into() });
                }
                Payload::ObjectSummary(s)
            }
            MessageKind::Heartbeat => Payload::Heartbeat(typed(self.kind, &self.payload)?),
        };
        Ok(payload)
    }
}

impl Ack {
    pub fn ok(env: &Envelope) -> Self {
        Self { camera_id: Some(env.camera_id.clone()), seq: Some(env.seq), status: AckStatus::Ok, reason: None }
    }

    pub fn duplicate(env: &Envelope) -> Self {
        Self { camera_id: Some(env.camera_id.clone()), seq: Some(env.seq), status: AckStatus::Duplicate, reason: None }
    }

    pub fn rejected(ids: Option<(CameraId, u64)>, reason: impl Into<String>) -> Self {
        let (camera_id, seq) = ids.map_or((None, None), |(c, s)| (Some(c), Some(s)));
        Self { camera_id, seq, status: AckStatus::Rejected, reason: Some(reason.into()) }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("ack serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn feature_env() -> Envelope {
        let f = FeatureRecord::from_raw(vec![3.0, 4.0], CameraId::new("a"), 2, 10, 0.8).unwrap();
        Envelope::wrap(CameraId::new("a"), 1, &Payload::Feature(f), 10)
    }

    #[test]
    fn line_round_trip() {
        let env = feature_env();
        let back = Envelope::parse_line(&env.to_line()).unwrap();
        assert_eq!(back, env);
        assert!(matches!(back.decode(Some(2)).unwrap(), Payload::Feature(_)));
    }

    #[test]
    fn wrong_dimension_is_a_protocol_error() {
        assert!(matches!(feature_env().decode(Some(512)), Err(ProtocolError::VectorLength { expected: 512, got: 2 })));
    }

    #[test]
    fn unknown_payload_fields_are_schema_errors() {
        let env = Envelope::new(CameraId::new("a"), 1, MessageKind::Heartbeat, json!({"frames_processed": 1, "note": "x"}), 0);
        assert!(matches!(env.decode(None), Err(ProtocolError::Schema { .. })));
    }

    #[test]
    fn blobs_are_rejected_before_schema() {
        let line = json!({"camera_id": "a", "seq": 4, "kind": "heartbeat", "payload": {"image": "AAAA"}, "sent_at": 0}).to_string();
        let (ids, err) = Envelope::parse_line(&line).unwrap_err();
        assert_eq!(ids, Some((CameraId::new("a"), 4)));
        assert!(matches!(err, ProtocolError::Privacy(_)));
    }
}
