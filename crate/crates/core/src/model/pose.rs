use serde::{Deserialize, Serialize};

use super::ModelError;

pub const KEYPOINT_COUNT: usize = 17;

/// COCO-17 keypoint order.
pub const COCO_KEYPOINTS: [&str; KEYPOINT_COUNT] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

/// A 2D skeleton in COCO-17 order. Confidences are always in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSkeleton")]
pub struct PoseSkeleton {
    keypoints: [Keypoint; KEYPOINT_COUNT],
}

#[derive(Deserialize)]
struct RawSkeleton {
    keypoints: Vec<Keypoint>,
}

impl TryFrom<RawSkeleton> for PoseSkeleton {
    type Error = ModelError;

    fn try_from(raw: RawSkeleton) -> Result<Self, Self::Error> {
        let n = raw.keypoints.len();
        let keypoints: [Keypoint; KEYPOINT_COUNT] = raw.keypoints.try_into().map_err(|_| ModelError::KeypointCount(n))?;
        PoseSkeleton::new(keypoints)
    }
}

impl PoseSkeleton {
    pub fn new(keypoints: [Keypoint; KEYPOINT_COUNT]) -> Result<Self, ModelError> {
        for kp in &keypoints {
            if !(0.0..=1.0).contains(&kp.confidence) || !kp.x.is_finite() || !kp.y.is_finite() {
                return Err(ModelError::InvalidKeypoint(kp.confidence));
            }
        }
        Ok(Self { keypoints })
    }

    /// Skeleton with every keypoint at `(x, y)` and the same confidence.
    pub fn uniform(x: f64, y: f64, confidence: f64) -> Result<Self, ModelError> {
        Self::new([Keypoint { x, y, confidence }; KEYPOINT_COUNT])
    }

    pub fn keypoints(&self) -> &[Keypoint; KEYPOINT_COUNT] {
        &self.keypoints
    }

    pub fn confidences(&self) -> impl Iterator<Item = f64> + '_ {
        self.keypoints.iter().map(|k| k.confidence)
    }

    /// Number of keypoints at or above `threshold`.
    pub fn confident_count(&self, threshold: f64) -> usize {
        self.confidences().filter(|&c| c >= threshold).count()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        let mut keypoints = self.keypoints;
        for kp in &mut keypoints {
            kp.x += dx;
            kp.y += dy;
        }
        Self { keypoints }
    }
}

/// Arithmetic mean of the 17 keypoint confidences.
pub fn mean_pose_confidence(pose: &PoseSkeleton) -> f64 {
    pose.confidences().sum::<f64>() / KEYPOINT_COUNT as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_confidences(conf: impl Fn(usize) -> f64) -> PoseSkeleton {
        let kps = std::array::from_fn(|i| Keypoint { x: i as f64, y: 0.0, confidence: conf(i) });
        PoseSkeleton::new(kps).unwrap()
    }

    #[test]
    fn mean_confidence_examples() {
        assert_eq!(mean_pose_confidence(&with_confidences(|_| 0.0)), 0.0);
        assert_eq!(mean_pose_confidence(&with_confidences(|_| 1.0)), 1.0);
        // 9 * 0.6 = 5.4, summed by hand; 5.4 / 17
        let mixed = with_confidences(|i| if i < 9 { 0.6 } else { 0.0 });
        assert!((mean_pose_confidence(&mixed) - 0.3176).abs() < 1e-4);
        assert!((mean_pose_confidence(&mixed) - 5.4 / 17.0).abs() < 1e-12);
    }

    #[test]
    fn json_requires_seventeen_valid_points() {
        let pose = with_confidences(|i| i as f64 / 16.0);
        let json = serde_json::to_string(&pose).unwrap();
        assert_eq!(serde_json::from_str::<PoseSkeleton>(&json).unwrap(), pose);

        let short = r#"{"keypoints":[{"x":0,"y":0,"confidence":0.5}]}"#;
        assert!(serde_json::from_str::<PoseSkeleton>(short).is_err());
        assert!(PoseSkeleton::uniform(0.0, 0.0, 1.5).is_err());
    }
}
