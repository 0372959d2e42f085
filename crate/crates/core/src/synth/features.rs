use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::scenario::{rng_for, tags, GroundTruth};
use crate::backend::{FeatureExtractor, FeatureRequest, SyntheticTruth};
use crate::model::normalize;

/// The identity's true feature plus per-dimension Gaussian noise of scale
/// `sigma`, re-normalized.
pub fn perturbed_feature(truth: &[f32], sigma: f64, rng: &mut impl Rng) -> Vec<f32> {
    let mut v: Vec<f32> = truth.iter().map(|&x| x + (sigma * rng.sample::<f64, _>(StandardNormal)) as f32).collect();
    normalize(&mut v).expect("perturbed unit vector is non-zero");
    v
}

/// Feature extractor backed by a generated world's identity features.
#[derive(Debug, Clone)]
pub struct SyntheticFeatures {
    gt: Arc<GroundTruth>,
    noise: f64,
}

impl SyntheticFeatures {
    pub fn new(gt: Arc<GroundTruth>) -> Self {
        let noise = gt.spec().features.noise;
        Self { gt, noise }
    }

    pub fn with_noise(gt: Arc<GroundTruth>, noise: f64) -> Self {
        Self { gt, noise }
    }
}

impl FeatureExtractor for SyntheticFeatures {
    fn extract(&mut self, requests: &[FeatureRequest<'_>]) -> Vec<Vec<f32>> {
        let seed = self.gt.spec().seed;
        let dim = self.gt.spec().features.dim;
        requests
            .iter()
            .map(|r| match &r.crop.origin().truth {
                Some(SyntheticTruth::Person { identity, .. }) => {
                    let mut rng = rng_for(&[seed, tags::FEATURE_NOISE, *identity as u64, r.frame_index]);
                    perturbed_feature(self.gt.identity_feature(*identity), self.noise, &mut rng)
                }
                other => {
                    let salt = match other {
                        Some(SyntheticTruth::FalsePositive { seed }) => *seed,
                        _ => 0,
                    };
                    let mut rng = rng_for(&[seed, tags::FEATURE, u64::MAX, salt, r.frame_index]);
                    let mut v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
                    normalize(&mut v).expect("gaussian draw is non-zero");
                    v
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
    use crate::model::{cosine, l2_norm, BoundingBox, PoseSkeleton};
    use crate::synth::{generate_world, ScenarioSpec};

    #[test]
    fn feature_similarity_bounds() {
        let gt = Arc::new(generate_world(&ScenarioSpec { identity_count: Some(60), ..ScenarioSpec::default() }).unwrap());
        let feats = gt.identity_features();
        for i in 0..feats.len() {
            assert!((l2_norm(&feats[i]) - 1.0).abs() < 1e-6);
            for j in i + 1..feats.len() {
                assert!(cosine(&feats[i], &feats[j]) <= 0.25 + 1e-9);
            }
        }
        let ledger = CropLedger::new();
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let pose = PoseSkeleton::uniform(0.0, 0.0, 1.0).unwrap();
        let crops: Vec<CropHandle> = (0..60).map(|id| CropHandle::cut(None, &b, Origin::person(id, pose.clone()), &ledger)).collect();
        let reqs: Vec<FeatureRequest> = crops.iter().map(|c| FeatureRequest { frame_index: 5, crop: c }).collect();
        let out = SyntheticFeatures::new(Arc::clone(&gt)).extract(&reqs);
        for (id, v) in out.iter().enumerate() {
            assert!((l2_norm(v) - 1.0).abs() < 1e-6);
            assert!(cosine(v, gt.identity_feature(id as u32)) >= 0.9);
            for (other, w) in out.iter().enumerate().skip(id + 1) {
                assert!(cosine(v, w) <= 0.3, "{id} vs {other}");
            }
        }
        let exact = SyntheticFeatures::with_noise(Arc::clone(&gt), 0.0).extract(&reqs[..1]);
        assert!((cosine(&exact[0], gt.identity_feature(0)) - 1.0).abs() < 1e-6);
    }
}
