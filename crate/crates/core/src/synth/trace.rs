use std::collections::BTreeMap;
use std::io::BufRead;

use crate::backend::{Detector, RawDetection};
use crate::model::{Detection, FrameBatch};
use crate::pipeline::batching::FrameDetections;
use crate::tracker::mot::{read_rows, MotRow};
use crate::tracker::TrackerError;

/// Replays detections recorded in MOT text format. Rows with a score
/// outside `[0, 1]` (MOT ground truth uses 1 or -1) are given score 1.
#[derive(Debug, Clone, Default)]
pub struct TraceDetector {
    frames: BTreeMap<u64, Vec<Detection>>,
}

impl TraceDetector {
    pub fn from_rows(rows: impl IntoIterator<Item = MotRow>) -> Self {
        let mut frames: BTreeMap<u64, Vec<Detection>> = BTreeMap::new();
        for r in rows {
            let score = if (0.0..=1.0).contains(&r.score) { r.score } else { 1.0 };
            frames.entry(r.frame_index).or_default().push(Detection::person(r.bbox, score).expect("score clamped"));
        }
        Self { frames }
    }

    pub fn from_reader(input: impl BufRead) -> Result<Self, TrackerError> {
        Ok(Self::from_rows(read_rows(input)?))
    }

    /// Highest frame index present, if any.
    pub fn last_frame(&self) -> Option<u64> {
        self.frames.keys().next_back().copied()
    }
}

impl Detector for TraceDetector {
    fn detect(&mut self, batch: &FrameBatch) -> Vec<FrameDetections<RawDetection>> {
        batch
            .frames
            .iter()
            .map(|f| FrameDetections {
                frame_index: f.frame_index,
                items: self.frames.get(&f.frame_index).into_iter().flatten().cloned().map(RawDetection::new).collect(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CameraId, Frame};

    #[test]
    fn replays_rows_by_frame() {
        let text = "1,1,10,10,5,5,-1,-1,-1,-1\n1,2,50,50,5,5,0.4,-1,-1,-1\n3,1,12,10,5,5,1,-1,-1,-1\n";
        let mut det = TraceDetector::from_reader(text.as_bytes()).unwrap();
        let cam = CameraId::new("c");
        let batch =
            FrameBatch { camera_id: cam.clone(), batch_index: 0, frames: (0..3).map(|i| Frame::synthetic(cam.clone(), i, 0)).collect() };
        let out = det.detect(&batch);
        assert_eq!(out.iter().map(|f| f.items.len()).collect::<Vec<_>>(), vec![2, 0, 1]);
        assert_eq!(out[0].items[1].detection.score, 0.4);
        assert_eq!(out[0].items[0].detection.score, 1.0);
        assert_eq!(det.last_frame(), Some(2));
    }
}
