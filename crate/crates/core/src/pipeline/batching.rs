use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::model::{CameraId, Frame, FrameBatch};

/// Groups an ordered frame stream into consecutive batches of `beta1`.
#[derive(Debug)]
pub struct BatchAssembler {
    beta1: usize,
    pending: Vec<Frame>,
    next_batch: u64,
    last: Option<(CameraId, u64)>,
}

impl BatchAssembler {
    pub fn new(beta1: usize) -> Self {
        assert!(beta1 >= 1, "beta1 must be at least 1");
        Self { beta1, pending: Vec::with_capacity(beta1), next_batch: 0, last: None }
    }

    /// Adds a frame; returns a batch once `beta1` frames are pending.
    pub fn push(&mut self, frame: Frame) -> Result<Option<FrameBatch>, PipelineError> {
        if let Some((camera, last)) = &self.last {
            if *camera != frame.camera_id {
                return Err(PipelineError::MixedCameras { expected: camera.clone(), got: frame.camera_id });
            }
            if frame.frame_index <= *last {
                return Err(PipelineError::OutOfOrder { last: *last, got: frame.frame_index });
            }
            if frame.frame_index != last + 1 {
                return Err(PipelineError::FrameGap { last: *last, got: frame.frame_index });
            }
        }
        self.last = Some((frame.camera_id.clone(), frame.frame_index));
        self.pending.push(frame);
        if self.pending.len() == self.beta1 {
            return Ok(self.take());
        }
        Ok(None)
    }

    /// Flushes the partial final batch, if any.
    pub fn finish(&mut self) -> Option<FrameBatch> {
        self.take()
    }

    fn take(&mut self) -> Option<FrameBatch> {
        if self.pending.is_empty() {
            return None;
        }
        let frames = std::mem::replace(&mut self.pending, Vec::with_capacity(self.beta1));
        let batch = FrameBatch { camera_id: frames[0].camera_id.clone(), batch_index: self.next_batch, frames };
        self.next_batch += 1;
        Some(batch)
    }
}

/// Lazily batches `frames`; an ordering error ends the stream.
pub fn assemble_batches<I>(frames: I, beta1: usize) -> AssembleBatches<I::IntoIter>
where
    I: IntoIterator<Item = Frame>,
{
    AssembleBatches { frames: frames.into_iter(), assembler: BatchAssembler::new(beta1), done: false }
}

pub struct AssembleBatches<I> {
    frames: I,
    assembler: BatchAssembler,
    done: bool,
}

impl<I: Iterator<Item = Frame>> Iterator for AssembleBatches<I> {
    type Item = Result<FrameBatch, PipelineError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        for frame in self.frames.by_ref() {
            match self.assembler.push(frame) {
                Ok(Some(batch)) => return Some(Ok(batch)),
                Ok(None) => {}
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
        self.done = true;
        self.assembler.finish().map(Ok)
    }
}

/// Per-frame items of a batch (detections, tracked persons, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections<T> {
    pub frame_index: u64,
    pub items: Vec<T>,
}

/// Emits the frames of a batch one at a time, in frame order.
pub fn unbatch<T>(batch: Vec<FrameDetections<T>>) -> impl Iterator<Item = FrameDetections<T>> {
    let mut batch = batch;
    batch.sort_by_key(|f| f.frame_index);
    batch.into_iter()
}

/// Regroups sequential per-frame results into one frame batch.
pub fn rebatch<T>(frames: impl IntoIterator<Item = FrameDetections<T>>) -> Vec<FrameDetections<T>> {
    frames.into_iter().collect()
}
