//! Backend interfaces for the neural stages. Real detectors, pose
//! estimators and feature extractors plug in here; the synthetic backends
//! in [`crate::synth`] implement the same traits from a generated world.

use crate::crops::CropHandle;
use crate::model::{BoundingBox, Detection, Frame, FrameBatch, PoseSkeleton};
use crate::pipeline::batching::FrameDetections;

/// What a synthetic crop "shows" in place of pixels. Real backends always
/// use [`Origin::unknown`].
#[derive(Debug, Clone, Default)]
pub struct Origin {
    pub(crate) truth: Option<SyntheticTruth>,
}

#[derive(Debug, Clone)]
pub(crate) enum SyntheticTruth {
    Person { identity: u32, pose: PoseSkeleton },
    FalsePositive { seed: u64 },
}

impl Origin {
    pub fn unknown() -> Self {
        Self::default()
    }

    pub(crate) fn person(identity: u32, pose: PoseSkeleton) -> Self {
        Self { truth: Some(SyntheticTruth::Person { identity, pose }) }
    }

    pub(crate) fn false_positive(seed: u64) -> Self {
        Self { truth: Some(SyntheticTruth::FalsePositive { seed }) }
    }
}

/// Detector output for one box.
#[derive(Debug, Clone)]
pub struct RawDetection {
    pub detection: Detection,
    pub origin: Origin,
}

impl RawDetection {
    pub fn new(detection: Detection) -> Self {
        Self { detection, origin: Origin::unknown() }
    }
}

pub trait FrameSource: Send {
    fn next_frame(&mut self) -> Option<Frame>;
}

impl<I: Iterator<Item = Frame> + Send> FrameSource for I {
    fn next_frame(&mut self) -> Option<Frame> {
        self.next()
    }
}

pub trait Detector: Send {
    /// One entry per frame of the batch, in frame order.
    fn detect(&mut self, batch: &FrameBatch) -> Vec<FrameDetections<RawDetection>>;
}

/// One person crop submitted to the pose estimator.
pub struct PoseRequest<'a> {
    pub frame_index: u64,
    pub bbox: BoundingBox,
    pub crop: &'a CropHandle,
}

pub trait PoseEstimator: Send {
    /// Called with at most β₂ crops at a time; returns one skeleton per crop.
    fn estimate(&mut self, requests: &[PoseRequest<'_>]) -> Vec<PoseSkeleton>;
}

pub struct FeatureRequest<'a> {
    pub frame_index: u64,
    pub crop: &'a CropHandle,
}

pub trait FeatureExtractor: Send {
    /// Returns one raw (not necessarily normalized) embedding per crop.
    fn extract(&mut self, requests: &[FeatureRequest<'_>]) -> Vec<Vec<f32>>;
}

/// Detects nothing.
#[derive(Debug, Default)]
pub struct NullDetector;

impl Detector for NullDetector {
    fn detect(&mut self, batch: &FrameBatch) -> Vec<FrameDetections<RawDetection>> {
        batch.frames.iter().map(|f| FrameDetections { frame_index: f.frame_index, items: Vec::new() }).collect()
    }
}

/// Returns a zero-confidence skeleton at the box centre.
#[derive(Debug, Default)]
pub struct NullPose;

impl PoseEstimator for NullPose {
    fn estimate(&mut self, requests: &[PoseRequest<'_>]) -> Vec<PoseSkeleton> {
        requests
            .iter()
            .map(|r| {
                let (x, y) = r.bbox.center();
                PoseSkeleton::uniform(x, y, 0.0).expect("zero confidence is valid")
            })
            .collect()
    }
}

/// Returns a fixed unit vector of the given length.
#[derive(Debug)]
pub struct NullFeatures {
    pub dim: usize,
}

impl FeatureExtractor for NullFeatures {
    fn extract(&mut self, requests: &[FeatureRequest<'_>]) -> Vec<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim.max(1)];
        v[0] = 1.0;
        vec![v; requests.len()]
    }
}
