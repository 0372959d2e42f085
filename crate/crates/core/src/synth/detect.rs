use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::scenario::{mix, rng_for, tags, GroundTruth, NoiseModel};
use crate::backend::{Detector, Origin, RawDetection};
use crate::model::{BoundingBox, ClassLabel, Detection, FrameBatch};
use crate::pipeline::batching::FrameDetections;

fn jitter(b: &BoundingBox, sigma: f64, rng: &mut impl Rng, width: f64, height: f64) -> BoundingBox {
    if sigma == 0.0 {
        return *b;
    }
    let mut n = || sigma * rng.sample::<f64, _>(StandardNormal);
    let (x0, y0, x1, y1) = (b.x_min + n(), b.y_min + n(), b.x_max + n(), b.y_max + n());
    BoundingBox { x_min: x0.min(x1), y_min: y0.min(y1), x_max: x0.max(x1), y_max: y0.max(y1) }.clamp_to(width, height)
}

/// Detections for one frame: ground-truth boxes perturbed by `noise`, then
/// false positives, then static objects.
pub fn detect_frame(gt: &GroundTruth, noise: &NoiseModel, frame_index: u64) -> Vec<RawDetection> {
    let spec = gt.spec();
    let (w, h) = (spec.image_width, spec.image_height);
    let truth = gt.frame(frame_index);
    let mut rng = rng_for(&[spec.seed, tags::DETECT, frame_index]);
    let mut out = Vec::with_capacity(truth.persons.len() + 2);

    for p in truth.persons {
        if noise.miss_rate > 0.0 && rng.random::<f64>() < noise.miss_rate {
            continue;
        }
        let bbox = jitter(&p.bbox, noise.jitter_sigma, &mut rng, w, h);
        let score = noise.person_score.sample(&mut rng);
        let detection = Detection::person(bbox, score).expect("score in range");
        out.push(RawDetection { detection, origin: Origin::person(p.identity, p.pose) });
    }

    if noise.false_positive_rate > 0.0 && rng.random::<f64>() < noise.false_positive_rate {
        let m = &spec.motion;
        let bh = rng.random_range(m.height_min..=m.height_max);
        let bw = bh * m.aspect;
        let x = rng.random_range(0.0..w - bw);
        let y = rng.random_range(0.0..h - bh);
        let score = noise.false_positive_score.sample(&mut rng);
        let detection = Detection::person(BoundingBox { x_min: x, y_min: y, x_max: x + bw, y_max: y + bh }, score).expect("score in range");
        out.push(RawDetection { detection, origin: Origin::false_positive(mix(&[spec.seed, frame_index])) });
    }

    for o in truth.objects {
        let bbox = jitter(&o, noise.jitter_sigma, &mut rng, w, h);
        let detection = Detection::new(bbox, ClassLabel::Other("vehicle".into()), 0.9).expect("score in range");
        out.push(RawDetection::new(detection));
    }
    out
}

/// Per-frame detections for every frame of `batch`.
pub fn synthetic_detect(batch: &FrameBatch, gt: &GroundTruth, noise: &NoiseModel) -> Vec<FrameDetections<RawDetection>> {
    batch.frames.iter().map(|f| FrameDetections { frame_index: f.frame_index, items: detect_frame(gt, noise, f.frame_index) }).collect()
}

/// Detector backed by a generated world.
#[derive(Debug, Clone)]
pub struct SyntheticDetector {
    gt: Arc<GroundTruth>,
    noise: NoiseModel,
}

impl SyntheticDetector {
    pub fn new(gt: Arc<GroundTruth>) -> Self {
        let noise = gt.spec().noise.clone();
        Self { gt, noise }
    }

    pub fn with_noise(gt: Arc<GroundTruth>, noise: NoiseModel) -> Self {
        Self { gt, noise }
    }
}

impl Detector for SyntheticDetector {
    fn detect(&mut self, batch: &FrameBatch) -> Vec<FrameDetections<RawDetection>> {
        synthetic_detect(batch, &self.gt, &self.noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_world, ScenarioSpec};

    fn world(noise: NoiseModel) -> GroundTruth {
        generate_world(&ScenarioSpec { noise, duration_frames: 300, other_objects: 0, ..ScenarioSpec::default() }).unwrap()
    }

    #[test]
    fn zero_noise_reproduces_ground_truth() {
        let gt = world(NoiseModel::none());
        for f in [0, 17, 299] {
            let dets = detect_frame(&gt, &gt.spec().noise, f);
            let truth = gt.frame(f);
            assert_eq!(dets.len(), truth.persons.len());
            for (d, p) in dets.iter().zip(&truth.persons) {
                assert_eq!(d.detection.bbox, p.bbox);
            }
        }
    }

    #[test]
    fn full_miss_rate_detects_nothing() {
        let gt = world(NoiseModel::none());
        // scenario validation caps miss_rate below 1, the detector itself accepts it
        let noise = NoiseModel { miss_rate: 1.0, ..NoiseModel::none() };
        assert!((0..300).all(|f| detect_frame(&gt, &noise, f).is_empty()));
    }

    #[test]
    fn jitter_mean_abs_matches_half_normal() {
        let gt = world(NoiseModel::none());
        let sigma = 2.0;
        let noise = NoiseModel { jitter_sigma: sigma, ..NoiseModel::none() };
        let (mut sum, mut n) = (0.0, 0usize);
        let mut f = 0;
        while n < 10_000 {
            let truth = gt.frame(f % 300);
            let mut rng = rng_for(&[99, f]);
            for p in &truth.persons {
                // interior boxes only, so clamping never truncates the noise
                if p.bbox.x_min < 20.0 || p.bbox.x_max > 1900.0 || p.bbox.y_min < 20.0 || p.bbox.y_max > 1060.0 {
                    continue;
                }
                let j = jitter(&p.bbox, noise.jitter_sigma, &mut rng, 1920.0, 1080.0);
                sum += (j.x_min - p.bbox.x_min).abs();
                n += 1;
            }
            f += 1;
        }
        let expected = sigma * (2.0 / std::f64::consts::PI).sqrt();
        let mean = sum / n as f64;
        assert!((mean - expected).abs() / expected < 0.05, "mean {mean} vs {expected}");
    }

    #[test]
    fn false_positive_scores_stay_low() {
        let gt = world(NoiseModel { false_positive_rate: 0.5, ..NoiseModel::default() });
        let mut seen = 0;
        for f in 0..300 {
            for d in detect_frame(&gt, &gt.spec().noise, f) {
                if matches!(d.origin.truth, Some(crate::backend::SyntheticTruth::FalsePositive { .. })) {
                    assert!((0.1..0.5).contains(&d.detection.score));
                    seen += 1;
                }
            }
        }
        assert!(seen > 100);
    }
}
