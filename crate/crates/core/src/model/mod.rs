//! Shared domain types used by every stage of the pipeline and by the
//! global node. All of them are plain values: once built they are only
//! moved between stages, never mutated in place by two owners.

mod geometry;
mod pose;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{iou, BoundingBox};
pub use pose::{mean_pose_confidence, Keypoint, PoseSkeleton, COCO_KEYPOINTS, KEYPOINT_COUNT};

/// Nanoseconds; either since the Unix epoch (wall clock) or since the start
/// of a simulated run.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

/// Default embedding length for re-identification features.
pub const DEFAULT_FEATURE_DIM: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid bounding box ({x_min}, {y_min}, {x_max}, {y_max})")]
    InvalidBox { x_min: f64, y_min: f64, x_max: f64, y_max: f64 },
    #[error("expected 17 keypoints, got {0}")]
    KeypointCount(usize),
    #[error("keypoint confidence {0} outside [0, 1] or non-finite coordinate")]
    InvalidKeypoint(f64),
    #[error("detection score {0} outside [0, 1]")]
    InvalidScore(f64),
    #[error("feature vector norm {0} is not 1")]
    NotNormalized(f64),
    #[error("feature vector is empty or has a zero norm")]
    ZeroVector,
    #[error("feature quality {0} outside [0, 1]")]
    InvalidQuality(f64),
}

/// Opaque camera identifier.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CameraId(Arc<str>);

impl CameraId {
    pub fn new(id: impl AsRef<str>) -> Self {
        Self(Arc::from(id.as_ref()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for CameraId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for CameraId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabel {
    Person,
    Other(String),
}

impl ClassLabel {
    pub fn is_person(&self) -> bool {
        matches!(self, ClassLabel::Person)
    }

    pub fn tag(&self) -> &str {
        match self {
            ClassLabel::Person => "person",
            ClassLabel::Other(t) => t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub class_label: ClassLabel,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BoundingBox, class_label: ClassLabel, score: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(ModelError::InvalidScore(score));
        }
        Ok(Self { bbox, class_label, score })
    }

    pub fn person(bbox: BoundingBox, score: f64) -> Result<Self, ModelError> {
        Self::new(bbox, ClassLabel::Person, score)
    }
}

/// Orders detections by descending score; ties go to the lower `x_min`,
/// then the lower `y_min`.
pub fn sort_detections(dets: &mut [Detection]) {
    dets.sort_by(|a, b| {
        b.score.total_cmp(&a.score).then(a.bbox.x_min.total_cmp(&b.bbox.x_min)).then(a.bbox.y_min.total_cmp(&b.bbox.y_min))
    });
}

/// Raw image data attached to a frame. Never serialized.
#[derive(Clone)]
pub struct PixelBuffer {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Arc<[u8]>,
}

impl fmt::Debug for PixelBuffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PixelBuffer({}x{}x{})", self.width, self.height, self.channels)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Frame {
    pub camera_id: CameraId,
    pub frame_index: u64,
    pub capture_time: Nanos,
    #[serde(skip)]
    pub payload: Option<PixelBuffer>,
}

impl Frame {
    pub fn synthetic(camera_id: CameraId, frame_index: u64, capture_time: Nanos) -> Self {
        Self { camera_id, frame_index, capture_time, payload: None }
    }
}

/// Consecutive frames of one camera, at most β₁ long.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameBatch {
    pub camera_id: CameraId,
    pub batch_index: u64,
    pub frames: Vec<Frame>,
}

impl FrameBatch {
    pub fn first_frame_index(&self) -> Option<u64> {
        self.frames.first().map(|f| f.frame_index)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedPerson {
    pub local_id: u64,
    pub detection: Detection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseSkeleton>,
    pub frame_index: u64,
    pub camera_id: CameraId,
}

/// Anonymized appearance embedding. Holds no pixel data by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawFeature")]
pub struct FeatureRecord {
    pub vector: Vec<f32>,
    pub camera_id: CameraId,
    pub local_id: u64,
    pub capture_time: Nanos,
    pub quality: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    vector: Vec<f32>,
    camera_id: CameraId,
    local_id: u64,
    capture_time: Nanos,
    quality: f64,
}

impl TryFrom<RawFeature> for FeatureRecord {
    type Error = ModelError;

    fn try_from(r: RawFeature) -> Result<Self, Self::Error> {
        FeatureRecord::new(r.vector, r.camera_id, r.local_id, r.capture_time, r.quality)
    }
}

pub const NORM_TOLERANCE: f64 = 1e-6;

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `v` to unit length.
pub fn normalize(v: &mut [f32]) -> Result<(), ModelError> {
    let norm = l2_norm(v);
    if v.is_empty() || norm == 0.0 || !norm.is_finite() {
        return Err(ModelError::ZeroVector);
    }
    for x in v.iter_mut() {
        *x = (*x as f64 / norm) as f32;
    }
    Ok(())
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl FeatureRecord {
    /// Validates a vector that is already unit length.
    pub fn new(vector: Vec<f32>, camera_id: CameraId, local_id: u64, capture_time: Nanos, quality: f64) -> Result<Self, ModelError> {
        if vector.is_empty() {
            return Err(ModelError::ZeroVector);
        }
        let norm = l2_norm(&vector);
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(ModelError::NotNormalized(norm));
        }
        if !(0.0..=1.0).contains(&quality) {
            return Err(ModelError::InvalidQuality(quality));
        }
        Ok(Self { vector, camera_id, local_id, capture_time, quality })
    }

    /// Normalizes `vector` first.
    pub fn from_raw(
        mut vector: Vec<f32>,
        camera_id: CameraId,
        local_id: u64,
        capture_time: Nanos,
        quality: f64,
    ) -> Result<Self, ModelError> {
        normalize(&mut vector)?;
        Self::new(vector, camera_id, local_id, capture_time, quality)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn detection_sort_breaks_ties_by_position() {
        let mk = |x: f64, y: f64, s: f64| Detection::person(BoundingBox::new(x, y, x + 5.0, y + 5.0).unwrap(), s).unwrap();
        let mut dets = vec![mk(10.0, 0.0, 0.5), mk(3.0, 9.0, 0.9), mk(3.0, 1.0, 0.9), mk(1.0, 1.0, 0.2)];
        sort_detections(&mut dets);
        let order: Vec<(f64, f64)> = dets.iter().map(|d| (d.bbox.x_min, d.bbox.y_min)).collect();
        assert_eq!(order, vec![(3.0, 1.0), (3.0, 9.0), (10.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn detection_score_range() {
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Detection::person(b, 1.2).is_err());
        assert!(Detection::person(b, -0.1).is_err());
    }

    #[test]
    fn feature_requires_unit_norm() {
        let cam = CameraId::new("c");
        assert!(FeatureRecord::new(vec![1.0, 1.0], cam.clone(), 1, 0, 0.5).is_err());
        let ok = FeatureRecord::from_raw(vec![3.0, 4.0], cam.clone(), 1, 0, 0.5).unwrap();
        assert!((l2_norm(&ok.vector) - 1.0).abs() < NORM_TOLERANCE);
        assert!(FeatureRecord::from_raw(vec![0.0; 4], cam, 1, 0, 0.5).is_err());
    }

    #[test]
    fn feature_json_rejects_extra_fields() {
        let json = r#"{"vector":[1.0],"camera_id":"a","local_id":1,"capture_time":0,"quality":0.5,"crop":"AAAA"}"#;
        assert!(serde_json::from_str::<FeatureRecord>(json).is_err());
    }

    #[test]
    fn frame_payload_never_serialized() {
        let mut f = Frame::synthetic(CameraId::new("c"), 3, 100);
        f.payload = Some(PixelBuffer { width: 1, height: 1, channels: 3, data: Arc::from(vec![1u8, 2, 3]) });
        let json = serde_json::to_value(&f).unwrap();
        assert_eq!(json.as_object().unwrap().len(), 3);
    }

    proptest! {
        #[test]
        fn feature_record_json_roundtrip(raw in proptest::collection::vec(-1.0f32..1.0, 1..64),
                                         local_id in 1u64..1_000_000, t in 0u64..u64::MAX / 2, q in 0.0f64..=1.0) {
            prop_assume!(l2_norm(&raw) > 1e-3);
            let rec = FeatureRecord::from_raw(raw, CameraId::new("cam-7"), local_id, t, q).unwrap();
            let json = serde_json::to_string(&rec).unwrap();
            let back: FeatureRecord = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.vector.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            rec.vector.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            prop_assert_eq!(back.quality.to_bits(), rec.quality.to_bits());
            prop_assert_eq!(&back, &rec);
            let keys: Vec<String> = serde_json::from_str::<serde_json::Map<String, serde_json::Value>>(&json)
                .unwrap().keys().cloned().collect();
            prop_assert_eq!(keys, vec!["camera_id", "capture_time", "local_id", "quality", "vector"]);
        }
    }
}
