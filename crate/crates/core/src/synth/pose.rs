use rand::Rng;

use super::scenario::{rng_for, tags};
use crate::backend::{PoseEstimator, PoseRequest, SyntheticTruth};
use crate::model::{Keypoint, PoseSkeleton};

/// Highest keypoint confidence a false-positive crop can produce.
pub const FALSE_POSITIVE_MAX_CONFIDENCE: f64 = 0.55;

/// Pose estimator that reads the true skeleton carried by a synthetic crop.
/// False positives get scattered low-confidence keypoints; crops without a
/// synthetic origin get an all-zero skeleton.
#[derive(Debug, Default, Clone)]
pub struct SyntheticPose {
    pub seed: u64,
}

impl SyntheticPose {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

impl PoseEstimator for SyntheticPose {
    fn estimate(&mut self, requests: &[PoseRequest<'_>]) -> Vec<PoseSkeleton> {
        requests
            .iter()
            .map(|r| match &r.crop.origin().truth {
                Some(SyntheticTruth::Person { pose, .. }) => pose.clone(),
                Some(SyntheticTruth::FalsePositive { seed }) => {
                    let mut rng = rng_for(&[self.seed, tags::FALSE_POSE, *seed, r.frame_index]);
                    let b = r.bbox;
                    let kps = std::array::from_fn(|_| Keypoint {
                        x: b.x_min + rng.random::<f64>() * b.width(),
                        y: b.y_min + rng.random::<f64>() * b.height(),
                        confidence: rng.random_range(0.0..FALSE_POSITIVE_MAX_CONFIDENCE),
                    });
                    PoseSkeleton::new(kps).expect("confidences in range")
                }
                None => {
                    let (x, y) = r.bbox.center();
                    PoseSkeleton::uniform(x, y, 0.0).expect("zero confidence is valid")
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Origin;
    use crate::crops::{CropHandle, CropLedger};
    use crate::model::BoundingBox;

    #[test]
    fn false_positive_poses_fail_every_keypoint() {
        let ledger = CropLedger::new();
        let b = BoundingBox::new(10.0, 10.0, 60.0, 160.0).unwrap();
        let crops: Vec<CropHandle> = (0..50).map(|s| CropHandle::cut(None, &b, Origin::false_positive(s), &ledger)).collect();
        let reqs: Vec<PoseRequest> = crops.iter().map(|c| PoseRequest { frame_index: 3, bbox: b, crop: c }).collect();
        for p in SyntheticPose::new(1).estimate(&reqs) {
            assert!(p.confidences().all(|c| c < 0.6));
        }
    }
}
