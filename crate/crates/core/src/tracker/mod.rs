//! Per-camera multi-object tracking in the ByteTrack style: Kalman-predicted
//! boxes, Hungarian assignment on `1 - IoU`, and a second association pass
//! that lets low-score detections keep existing tracks alive.

mod bytetrack;
pub mod hungarian;
pub mod kalman;
pub mod mot;

use thiserror::Error;

pub use bytetrack::{gated_iou_match, Assignment, ByteTracker, TrackStatus, TrackerConfig, Tracklet};
pub use kalman::KalmanTrackState;

use crate::model::{CameraId, Detection, TrackedPerson};
use crate::pipeline::batching::{rebatch, unbatch, FrameDetections};

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("frame {got} arrived after frame {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("MOT line {line}: {reason}")]
    Mot { line: usize, reason: String },
}

/// Tracks one batch frame by frame and regroups the output per frame.
pub fn track_batch(
    tracker: &mut ByteTracker,
    camera_id: &CameraId,
    batch: Vec<FrameDetections<Detection>>,
) -> Result<Vec<FrameDetections<TrackedPerson>>, TrackerError> {
    let tracked = unbatch(batch)
        .map(|frame| {
            let persons = tracker.track_frame(camera_id, frame.frame_index, &frame.items)?;
            Ok(FrameDetections { frame_index: frame.frame_index, items: persons })
        })
        .collect::<Result<Vec<_>, TrackerError>>()?;
    Ok(rebatch(tracked))
}
