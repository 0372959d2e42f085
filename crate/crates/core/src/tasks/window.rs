use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, CameraId, PoseSkeleton, TrackedPerson};
use crate::pipeline::batching::FrameDetections;

/// `W` consecutive (sampled) frames of one tracked person. Holds poses and
/// boxes only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseWindow {
    pub camera_id: CameraId,
    pub local_id: u64,
    /// Frame index of the first entry.
    pub start_frame: u64,
    pub stride: usize,
    /// Original frames between consecutive entries.
    pub decimation: usize,
    pub poses: Vec<PoseSkeleton>,
    pub boxes: Vec<BoundingBox>,
    /// `true` where the person was not observed and the previous
    /// observation was carried forward.
    pub missing: Vec<bool>,
}

impl PoseWindow {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|m| **m).count()
    }

    pub fn frame_index(&self, i: usize) -> u64 {
        self.start_frame + (i * self.decimation) as u64
    }
}

type Obs = (PoseSkeleton, BoundingBox);

#[derive(Debug)]
struct IdCadence {
    /// Sampled time of the next window's first entry.
    start: u64,
    buffer: VecDeque<(u64, Option<Obs>)>,
    /// Latest observation before `start`, for carry-forward.
    before: Option<Obs>,
}

/// Cuts per-person windows of `window` sampled frames every `stride`
/// sampled frames, where a sampled frame is every `decimation`-th frame.
///
/// A person's cadence starts at their first appearance. A window is
/// emitted once its last frame has been seen, provided the person is
/// missing from at most half of it; otherwise the cadence ends and restarts
/// at the person's next appearance.
#[derive(Debug)]
pub struct WindowAssembler {
    camera_id: CameraId,
    window: usize,
    stride: usize,
    decimation: usize,
    ids: BTreeMap<u64, IdCadence>,
    last_frame: Option<u64>,
}

impl WindowAssembler {
    pub fn new(camera_id: CameraId, window: usize, stride: usize, decimation: usize) -> Self {
        assert!(window >= 1 && stride >= 1 && decimation >= 1, "window, stride and decimation must be positive");
        Self { camera_id, window, stride, decimation, ids: BTreeMap::new(), last_frame: None }
    }

    /// Consumes one frame's tracked persons; frames must arrive in order
    /// and without gaps, including frames with nobody in view.
    pub fn push_frame(&mut self, frame_index: u64, persons: &[TrackedPerson]) -> Vec<PoseWindow> {
        if let Some(last) = self.last_frame {
            debug_assert!(frame_index > last, "frames out of order");
        }
        self.last_frame = Some(frame_index);
        if !frame_index.is_multiple_of(self.decimation as u64) {
            return Vec::new();
        }
        let t = frame_index / self.decimation as u64;
        let mut seen: BTreeMap<u64, Obs> = BTreeMap::new();
        for p in persons {
            if let Some(pose) = &p.pose {
                seen.insert(p.local_id, (pose.clone(), p.detection.bbox));
            }
        }
        for id in seen.keys() {
            self.ids.entry(*id).or_insert_with(|| IdCadence { start: t, buffer: VecDeque::new(), before: None });
        }

        let (w, s) = (self.window as u64, self.stride as u64);
        let mut out = Vec::new();
        let mut retired = Vec::new();
        for (&id, cad) in self.ids.iter_mut() {
            cad.buffer.push_back((t, seen.remove(&id)));
            while t + 1 >= cad.start + w {
                let entries: Vec<&(u64, Option<Obs>)> =
                    cad.buffer.iter().filter(|(bt, _)| *bt >= cad.start && *bt < cad.start + w).collect();
                let missing = w as usize - entries.iter().filter(|(_, o)| o.is_some()).count();
                if missing * 2 > self.window {
                    retired.push(id);
                    break;
                }
                let mut carry = cad.before.clone();
                let (mut poses, mut boxes, mut mask) = (Vec::new(), Vec::new(), Vec::new());
                for (_, o) in &entries {
                    if let Some(obs) = o {
                        carry = Some(obs.clone());
                    }
                    // a window never starts before the first observation, so
                    // carry is set by the time a gap needs filling
                    let (p, b) = carry.clone().expect("observation before gap");
                    poses.push(p);
                    boxes.push(b);
                    mask.push(o.is_none());
                }
                out.push(PoseWindow {
                    camera_id: self.camera_id.clone(),
                    local_id: id,
                    start_frame: cad.start * self.decimation as u64,
                    stride: self.stride,
                    decimation: self.decimation,
                    poses,
                    boxes,
                    missing: mask,
                });
                cad.start += s;
                while cad.buffer.front().is_some_and(|(bt, _)| *bt < cad.start) {
                    if let Some((_, Some(obs))) = cad.buffer.pop_front() {
                        cad.before = Some(obs);
                    }
                }
            }
        }
        for id in retired {
            self.ids.remove(&id);
        }
        out
    }

    pub fn push_batch(&mut self, frames: &[FrameDetections<TrackedPerson>]) -> Vec<PoseWindow> {
        frames.iter().flat_map(|f| self.push_frame(f.frame_index, &f.items)).collect()
    }

    /// Persons currently being windowed.
    pub fn active_ids(&self) -> usize {
        self.ids.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Detection, Keypoint};

    fn person(id: u64, frame: u64, x: f64) -> TrackedPerson {
        let pose = PoseSkeleton::new(std::array::from_fn(|k| Keypoint { x: x + k as f64, y: 10.0, confidence: 0.9 })).unwrap();
        TrackedPerson {
            local_id: id,
            detection: Detection::person(BoundingBox::new(x, 0.0, x + 10.0, 30.0).unwrap(), 0.9).unwrap(),
            pose: Some(pose),
            frame_index: frame,
            camera_id: CameraId::new("c"),
        }
    }

    fn run(asm: &mut WindowAssembler, frames: u64, present: impl Fn(u64) -> bool) -> Vec<PoseWindow> {
        (0..frames)
            .flat_map(|f| {
                let ps = if present(f) { vec![person(7, f, f as f64)] } else { vec![] };
                asm.push_frame(f, &ps)
            })
            .collect()
    }

    #[test]
    fn fifty_frames_give_two_windows() {
        let mut asm = WindowAssembler::new(CameraId::new("c"), 30, 20, 1);
        let ws = run(&mut asm, 120, |f| f < 50);
        let starts: Vec<u64> = ws.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, vec![0, 20]);
        assert!(ws.iter().all(|w| w.len() == 30 && w.missing_count() == 0));
        assert_eq!(asm.active_ids(), 0);
    }

    #[test]
    fn short_presence_gives_nothing() {
        let mut asm = WindowAssembler::new(CameraId::new("c"), 30, 20, 1);
        assert!(run(&mut asm, 100, |f| f < 10).is_empty());
    }

    #[test]
    fn gaps_are_masked_and_carried_forward() {
        let mut asm = WindowAssembler::new(CameraId::new("c"), 30, 20, 1);
        let ws = run(&mut asm, 30, |f| !(12..=14).contains(&f));
        assert_eq!(ws.len(), 1);
        let w = &ws[0];
        let masked: Vec<usize> = (0..30).filter(|&i| w.missing[i]).collect();
        assert_eq!(masked, vec![12, 13, 14]);
        for i in 12..=14 {
            assert_eq!(w.poses[i], w.poses[11]);
            assert_eq!(w.boxes[i], w.boxes[11]);
        }
        assert_ne!(w.poses[15], w.poses[11]);
    }

    #[test]
    fn decimation_spaces_entries() {
        let mut asm = WindowAssembler::new(CameraId::new("c"), 30, 30, 2);
        let ws = run(&mut asm, 200, |_| true);
        assert_eq!(ws[0].start_frame, 0);
        assert_eq!(ws[1].start_frame, 60);
        assert_eq!(ws[0].frame_index(29), 58);
    }

    #[test]
    fn cadence_restarts_after_retirement() {
        let mut asm = WindowAssembler::new(CameraId::new("c"), 30, 30, 1);
        let ws = run(&mut asm, 200, |f| f < 30 || (100..130).contains(&f));
        let starts: Vec<u64> = ws.iter().map(|w| w.start_frame).collect();
        assert_eq!(starts, vec![0, 100]);
    }
}
