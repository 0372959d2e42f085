//! Deterministic synthetic worlds and the backends that "see" them, so the
//! whole pipeline can run and be checked against ground truth without
//! cameras or neural networks.

mod detect;
mod features;
mod pose;
mod scenario;
mod trace;

use thiserror::Error;

pub use detect::{detect_frame, synthetic_detect, SyntheticDetector};
pub use features::{perturbed_feature, SyntheticFeatures};
pub use pose::{SyntheticPose, FALSE_POSITIVE_MAX_CONFIDENCE};
pub use scenario::{
    generate_scenario, generate_world, Appearance, DensityPreset, FeatureModel, GroundTruth, GroundTruthFrame, GtPerson, IdentitySpan,
    MotionModel, NoiseModel, PoseModel, ScenarioSpec, ScoreDistribution, SyntheticSource,
};
pub use trace::TraceDetector;

pub(crate) use scenario::mix;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
}

/// Detector, pose estimator and feature extractor for one generated world.
pub fn synthetic_backends(gt: &std::sync::Arc<GroundTruth>) -> (SyntheticDetector, SyntheticPose, SyntheticFeatures) {
    (SyntheticDetector::new(gt.clone()), SyntheticPose::new(gt.spec().seed), SyntheticFeatures::new(gt.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_hit_persons_per_frame() {
        assert!((DensityPreset::Normal.persons_per_frame(30.0) - 2.3333).abs() < 1e-4);
        assert!((DensityPreset::Extreme.persons_per_frame(30.0) - 24.8).abs() < 1e-9);
    }

    #[test]
    fn measured_density_matches_preset() {
        for preset in DensityPreset::ALL {
            let spec = ScenarioSpec::preset(preset, 7, 9000);
            let gt = generate_world(&spec).unwrap();
            let persons: usize = (0..spec.duration_frames).map(|f| gt.person_count(f)).sum();
            let rate = persons as f64 / spec.duration_frames as f64 * spec.fps;
            let target = preset.detections_per_second();
            assert!((rate - target).abs() / target < 0.05, "{preset:?}: {rate}");
        }
    }

    #[test]
    fn same_seed_same_world() {
        let spec = ScenarioSpec::preset(DensityPreset::Heavy, 3, 600);
        let a = generate_world(&spec).unwrap();
        let b = generate_world(&spec).unwrap();
        for f in (0..600).step_by(37) {
            let (fa, fb) = (a.frame(f), b.frame(f));
            assert_eq!(format!("{:?}", fa.persons), format!("{:?}", fb.persons));
        }
        assert_eq!(a.identity_features(), b.identity_features());
    }

    #[test]
    fn boxes_stay_in_image() {
        let gt = generate_world(&ScenarioSpec::preset(DensityPreset::Extreme, 11, 1200)).unwrap();
        for fr in gt.frames() {
            for p in fr.persons {
                assert!(p.bbox.x_min >= -1e-9 && p.bbox.y_min >= -1e-9);
                assert!(p.bbox.x_max <= 1920.0 + 1e-9 && p.bbox.y_max <= 1080.0 + 1e-9);
            }
        }
    }

    #[test]
    fn infeasible_density_is_rejected() {
        let spec = ScenarioSpec { density: 500.0, ..ScenarioSpec::default() };
        assert!(matches!(generate_world(&spec), Err(SynthError::Infeasible(_))));
        let bad = ScenarioSpec { noise: NoiseModel { miss_rate: 1.0, ..NoiseModel::default() }, ..ScenarioSpec::default() };
        assert!(matches!(generate_world(&bad), Err(SynthError::InvalidSpec(_))));
    }

    #[test]
    fn identities_persist_over_their_span() {
        let gt = generate_world(&ScenarioSpec { identity_count: Some(12), duration_frames: 3000, ..ScenarioSpec::default() }).unwrap();
        for a in gt.appearances() {
            for f in [a.entry, (a.entry + a.exit) / 2, a.exit - 1] {
                assert!(gt.frame(f).persons.iter().any(|p| p.identity == a.identity));
            }
        }
    }
}
