use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::hungarian;
use super::kalman::KalmanTrackState;
use super::TrackerError;
use crate::model::{iou, BoundingBox, CameraId, Detection, TrackedPerson};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Detections at or above this score take part in the first association.
    pub high_thresh: f64,
    /// Lower bound for the second (rescue) association.
    pub low_thresh: f64,
    /// Unmatched high-score detections at or above this spawn tracks.
    pub new_track_thresh: f64,
    /// Minimum IoU for a track/detection pair to be matched.
    pub iou_gate: f64,
    pub init_hits: u32,
    pub max_age: u32,
    pub history_len: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { high_thresh: 0.6, low_thresh: 0.1, new_track_thresh: 0.7, iou_gate: 0.2, init_hits: 2, max_age: 30, history_len: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackStatus {
    Tentative,
    Confirmed,
    Lost,
}

#[derive(Debug, Clone)]
pub struct Tracklet {
    pub local_id: u64,
    pub state: KalmanTrackState,
    pub status: TrackStatus,
    pub frames_since_update: u32,
    pub hits: u32,
    pub history: VecDeque<(u64, BoundingBox)>,
}

impl Tracklet {
    pub fn predicted_box(&self) -> BoundingBox {
        self.state.to_box()
    }
}

/// A detection index paired with the local ID it was assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub detection: usize,
    pub local_id: u64,
}

/// Matches tracks (rows) to detections (columns) on `1 - IoU`, keeping only
/// pairs with IoU at or above `gate`. Returns `(row, column)` pairs.
pub fn gated_iou_match(tracks: &[BoundingBox], dets: &[BoundingBox], gate: f64) -> Vec<(usize, usize)> {
    if tracks.is_empty() || dets.is_empty() {
        return Vec::new();
    }
    // infeasible pairs get a cost above any feasible assignment sum
    let infeasible = 1.0 + tracks.len().max(dets.len()) as f64;
    let ious: Vec<Vec<f64>> = tracks.iter().map(|t| dets.iter().map(|d| iou(t, d)).collect()).collect();
    let cost: Vec<Vec<f64>> = ious.iter().map(|row| row.iter().map(|&v| if v >= gate { 1.0 - v } else { infeasible }).collect()).collect();
    hungarian::solve(&cost).into_iter().enumerate().filter_map(|(r, c)| c.filter(|&c| ious[r][c] >= gate).map(|c| (r, c))).collect()
}

/// Two-stage, score-partitioned tracker for one camera.
#[derive(Debug)]
pub struct ByteTracker {
    config: TrackerConfig,
    tracks: Vec<Tracklet>,
    next_id: u64,
    last_frame: Option<u64>,
}

impl ByteTracker {
    pub fn new(config: TrackerConfig) -> Self {
        Self { config, tracks: Vec::new(), next_id: 1, last_frame: None }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Tracklet] {
        &self.tracks
    }

    /// Number of local IDs issued so far.
    pub fn issued_ids(&self) -> u64 {
        self.next_id - 1
    }

    /// Processes one frame. Only person detections are considered; the
    /// result lists, by detection index, every detection that now belongs to
    /// a track. Unmatched low-score detections get no ID.
    pub fn update(&mut self, frame_index: u64, detections: &[Detection]) -> Result<Vec<Assignment>, TrackerError> {
        let steps = match self.last_frame {
            Some(last) if frame_index <= last => {
                return Err(TrackerError::OutOfOrder { last, got: frame_index });
            }
            Some(last) => frame_index - last,
            None => 1,
        };
        self.last_frame = Some(frame_index);
        let cfg = self.config.clone();

        for t in &mut self.tracks {
            for _ in 0..steps {
                t.state = t.state.predict();
            }
        }

        let (mut high, mut low) = (Vec::new(), Vec::new());
        for (i, d) in detections.iter().enumerate() {
            if !d.class_label.is_person() {
                continue;
            }
            if d.score >= cfg.high_thresh {
                high.push(i);
            } else if d.score >= cfg.low_thresh {
                low.push(i);
            }
        }

        let mut updated = vec![false; self.tracks.len()];
        let mut out = Vec::new();

        // stage 1: confirmed and lost tracks against high-score detections
        let pool: Vec<usize> = (0..self.tracks.len()).filter(|&t| self.tracks[t].status != TrackStatus::Tentative).collect();
        let pairs = self.match_subset(&pool, &high, detections);
        let mut high_used = vec![false; high.len()];
        for &(pi, hi) in &pairs {
            let t = pool[pi];
            self.apply_match(t, frame_index, &detections[high[hi]].bbox);
            updated[t] = true;
            high_used[hi] = true;
            out.push(Assignment { detection: high[hi], local_id: self.tracks[t].local_id });
        }

        // stage 2: still-tracked leftovers against low-score detections
        let rest: Vec<usize> = pool.iter().copied().filter(|&t| !updated[t] && self.tracks[t].status == TrackStatus::Confirmed).collect();
        for (ri, li) in self.match_subset(&rest, &low, detections) {
            let t = rest[ri];
            self.apply_match(t, frame_index, &detections[low[li]].bbox);
            updated[t] = true;
            out.push(Assignment { detection: low[li], local_id: self.tracks[t].local_id });
        }
        for &t in &rest {
            if !updated[t] {
                self.tracks[t].status = TrackStatus::Lost;
            }
        }

        // stage 3: tentative tracks against the remaining high-score detections
        let remaining_high: Vec<usize> = high.iter().zip(&high_used).filter(|(_, &u)| !u).map(|(&d, _)| d).collect();
        let tentative: Vec<usize> = (0..self.tracks.len()).filter(|&t| self.tracks[t].status == TrackStatus::Tentative).collect();
        let mut rem_used = vec![false; remaining_high.len()];
        for (ti, di) in self.match_subset(&tentative, &remaining_high, detections) {
            let t = tentative[ti];
            self.apply_match(t, frame_index, &detections[remaining_high[di]].bbox);
            updated[t] = true;
            rem_used[di] = true;
            out.push(Assignment { detection: remaining_high[di], local_id: self.tracks[t].local_id });
        }

        // age and prune
        let mut keep = Vec::with_capacity(self.tracks.len());
        for (t, track) in self.tracks.drain(..).enumerate() {
            let mut track = track;
            if !updated[t] {
                if track.status == TrackStatus::Tentative {
                    continue;
                }
                track.frames_since_update += 1;
                track.hits = 0;
                if track.frames_since_update > cfg.max_age {
                    continue;
                }
            }
            keep.push(track);
        }
        self.tracks = keep;

        // births
        for (&d, _) in remaining_high.iter().zip(&rem_used).filter(|(_, &u)| !u) {
            if detections[d].score < cfg.new_track_thresh {
                continue;
            }
            let local_id = self.next_id;
            self.next_id += 1;
            let bbox = detections[d].bbox;
            let mut history = VecDeque::with_capacity(cfg.history_len.max(1));
            history.push_back((frame_index, bbox));
            self.tracks.push(Tracklet {
                local_id,
                state: KalmanTrackState::initiate(&bbox),
                status: if cfg.init_hits <= 1 { TrackStatus::Confirmed } else { TrackStatus::Tentative },
                frames_since_update: 0,
                hits: 1,
                history,
            });
            out.push(Assignment { detection: d, local_id });
        }

        out.sort_by_key(|a| a.detection);
        Ok(out)
    }

    /// Runs [`ByteTracker::update`] and wraps the result as tracked persons.
    pub fn track_frame(
        &mut self,
        camera_id: &CameraId,
        frame_index: u64,
        detections: &[Detection],
    ) -> Result<Vec<TrackedPerson>, TrackerError> {
        Ok(self
            .update(frame_index, detections)?
            .into_iter()
            .map(|a| TrackedPerson {
                local_id: a.local_id,
                detection: detections[a.detection].clone(),
                pose: None,
                frame_index,
                camera_id: camera_id.clone(),
            })
            .collect())
    }

    fn match_subset(&self, tracks: &[usize], dets: &[usize], detections: &[Detection]) -> Vec<(usize, usize)> {
        let tb: Vec<BoundingBox> = tracks.iter().map(|&t| self.tracks[t].predicted_box()).collect();
        let db: Vec<BoundingBox> = dets.iter().map(|&d| detections[d].bbox).collect();
        gated_iou_match(&tb, &db, self.config.iou_gate)
    }

    fn apply_match(&mut self, t: usize, frame_index: u64, bbox: &BoundingBox) {
        let init_hits = self.config.init_hits;
        let history_len = self.config.history_len;
        let track = &mut self.tracks[t];
        track.state = track.state.update(bbox);
        track.frames_since_update = 0;
        track.hits += 1;
        track.status = match track.status {
            TrackStatus::Tentative if track.hits < init_hits => TrackStatus::Tentative,
            _ => TrackStatus::Confirmed,
        };
        track.history.push_back((frame_index, *bbox));
        while track.history.len() > history_len.max(1) {
            track.history.pop_front();
        }
    }
}
