use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CropHandle;
use crate::model::{iou, mean_pose_confidence, BoundingBox, CameraId, PoseSkeleton};

/// Thresholds of the crop quality filter. All comparisons are inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionRule {
    pub min_keypoints: usize,
    pub keypoint_confidence: f64,
    pub max_overlap_iou: f64,
}

impl Default for SelectionRule {
    fn default() -> Self {
        Self { min_keypoints: 9, keypoint_confidence: 0.6, max_overlap_iou: 0.1 }
    }
}

impl SelectionRule {
    pub fn pose_ok(&self, pose: &PoseSkeleton) -> bool {
        pose.confident_count(self.keypoint_confidence) >= self.min_keypoints
    }

    pub fn overlap_ok(&self, max_iou: f64) -> bool {
        max_iou <= self.max_overlap_iou
    }
}

/// Largest IoU between `bbox` and any of `others`; 0 when there are none.
pub fn max_overlap<'a>(bbox: &BoundingBox, others: impl IntoIterator<Item = &'a BoundingBox>) -> f64 {
    others.into_iter().map(|o| iou(bbox, o)).fold(0.0, f64::max)
}

/// A tracked person's crop with the pose that qualifies it.
#[derive(Debug)]
pub struct CropCandidate {
    pub camera_id: CameraId,
    pub local_id: u64,
    pub frame_index: u64,
    pub bbox: BoundingBox,
    pub pose: PoseSkeleton,
    pub crop: CropHandle,
    pub quality: f64,
}

impl CropCandidate {
    pub fn new(camera_id: CameraId, local_id: u64, frame_index: u64, bbox: BoundingBox, pose: PoseSkeleton, crop: CropHandle) -> Self {
        let quality = mean_pose_confidence(&pose);
        Self { camera_id, local_id, frame_index, bbox, pose, crop, quality }
    }
}

/// True iff the pose has enough confident keypoints and the box overlaps no
/// other person in the frame by more than the rule allows.
pub fn is_eligible(rule: &SelectionRule, candidate: &CropCandidate, others_in_frame: &[BoundingBox]) -> bool {
    rule.pose_ok(&candidate.pose) && rule.overlap_ok(max_overlap(&candidate.bbox, others_in_frame))
}

/// All person boxes of one frame: those with crops plus any untracked ones.
#[derive(Debug, Default)]
pub struct CropFrame {
    pub frame_index: u64,
    pub candidates: Vec<CropCandidate>,
    pub untracked_boxes: Vec<BoundingBox>,
}

/// Audit row for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub camera_id: CameraId,
    pub window: u64,
    pub local_id: u64,
    pub frame_index: u64,
    pub confident_keypoints: usize,
    pub max_iou: f64,
    pub quality: f64,
    pub eligible: bool,
    pub selected: bool,
}

#[derive(Debug)]
pub struct SelectedCrop {
    pub candidate: CropCandidate,
    /// Overlap measured at selection, kept for the extraction-boundary recheck.
    pub max_iou: f64,
}

#[derive(Debug, Default)]
pub struct Selection {
    pub selected: Vec<SelectedCrop>,
    pub decisions: Vec<SelectionDecision>,
}

/// Keeps, per local ID, the eligible candidate with the highest mean pose
/// confidence over one window; ties go to the later frame. Every other
/// candidate (and its crop handle) is dropped here.
pub fn select_per_window(rule: &SelectionRule, window: u64, frames: Vec<CropFrame>) -> Selection {
    let mut best: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
    let mut scored: Vec<(CropCandidate, f64, bool)> = Vec::new();
    let mut decisions = Vec::new();

    for frame in frames {
        let boxes: Vec<BoundingBox> = frame.candidates.iter().map(|c| c.bbox).collect();
        for (i, cand) in frame.candidates.into_iter().enumerate() {
            let others = boxes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, b)| b).chain(&frame.untracked_boxes);
            let max_iou = max_overlap(&cand.bbox, others);
            let eligible = rule.pose_ok(&cand.pose) && rule.overlap_ok(max_iou);
            if eligible {
                let idx = scored.len();
                let better = match best.get(&cand.local_id) {
                    None => true,
                    Some(&(j, _)) => {
                        let cur = &scored[j].0;
                        cand.quality > cur.quality || (cand.quality == cur.quality && cand.frame_index > cur.frame_index)
                    }
                };
                if better {
                    best.insert(cand.local_id, (idx, max_iou));
                }
            }
            decisions.push(SelectionDecision {
                camera_id: cand.camera_id.clone(),
                window,
                local_id: cand.local_id,
                frame_index: cand.frame_index,
                confident_keypoints: cand.pose.confident_count(rule.keypoint_confidence),
                max_iou,
                quality: cand.quality,
                eligible,
                selected: false,
            });
            scored.push((cand, max_iou, eligible));
        }
    }

    let chosen: Vec<usize> = best.values().map(|&(i, _)| i).collect();
    for &i in &chosen {
        decisions[i].selected = true;
    }
    let mut slots: Vec<Option<(CropCandidate, f64, bool)>> = scored.into_iter().map(Some).collect();
    let selected = chosen
        .into_iter()
        .map(|i| {
            let (candidate, max_iou, _) = slots[i].take().expect("chosen once");
            SelectedCrop { candidate, max_iou }
        })
        .collect();
    Selection { selected, decisions }
}

/// Splits one window's selection into feature batches of at most `cap`.
pub fn batch_for_extraction(selected: Vec<SelectedCrop>, cap: usize) -> Vec<Vec<SelectedCrop>> {
    let cap = cap.max(1);
    let mut batches = Vec::with_capacity(selected.len().div_ceil(cap));
    let mut iter = selected.into_iter().peekable();
    while iter.peek().is_some() {
        batches.push(iter.by_ref().take(cap).collect());
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Origin;
    use crate::crops::CropLedger;
    use crate::model::Keypoint;
    use std::sync::Arc;

    fn pose(n_conf: usize, conf: f64) -> PoseSkeleton {
        PoseSkeleton::new(std::array::from_fn(|i| Keypoint { x: 0.0, y: 0.0, confidence: if i < n_conf { conf } else { 0.0 } })).unwrap()
    }

    fn cand(ledger: &Arc<CropLedger>, id: u64, frame: u64, x: f64, p: PoseSkeleton) -> CropCandidate {
        let b = BoundingBox::new(x, 0.0, x + 10.0, 10.0).unwrap();
        CropCandidate::new(CameraId::new("c"), id, frame, b, p, CropHandle::cut(None, &b, Origin::unknown(), ledger))
    }

    #[test]
    fn keypoint_threshold_is_inclusive() {
        let l = CropLedger::new();
        let rule = SelectionRule::default();
        assert!(is_eligible(&rule, &cand(&l, 1, 0, 0.0, pose(9, 0.60)), &[]));
        assert!(!is_eligible(&rule, &cand(&l, 1, 0, 0.0, pose(8, 0.99)), &[]));
    }

    #[test]
    fn overlap_threshold_is_inclusive() {
        let l = CropLedger::new();
        let rule = SelectionRule::default();
        let c = cand(&l, 1, 0, 0.0, pose(12, 0.9));
        // neighbour of equal height shifted in x: IoU = s / (20 - s) for overlap width s
        let neighbour = |s: f64| BoundingBox::new(10.0 - s, 0.0, 20.0 - s, 10.0).unwrap();
        let at = |target: f64| neighbour(20.0 * target / (1.0 + target));
        assert!((iou(&c.bbox, &at(0.15)) - 0.15).abs() < 1e-12);
        assert!(!is_eligible(&rule, &c, &[at(0.15)]));
        let b010 = BoundingBox::new(0.0, 0.0, 10.0, 1.0).unwrap();
        assert_eq!(iou(&c.bbox, &b010), 0.1);
        assert!(is_eligible(&rule, &c, &[b010]));
    }

    #[test]
    fn picks_most_confident_and_drops_the_rest() {
        let l = CropLedger::new();
        let frames = vec![
            CropFrame { frame_index: 0, candidates: vec![cand(&l, 4, 0, 0.0, pose(17, 0.8))], untracked_boxes: vec![] },
            CropFrame { frame_index: 1, candidates: vec![cand(&l, 4, 1, 0.0, pose(17, 0.9))], untracked_boxes: vec![] },
            CropFrame { frame_index: 2, candidates: vec![cand(&l, 5, 2, 0.0, pose(3, 0.9))], untracked_boxes: vec![] },
        ];
        let sel = select_per_window(&SelectionRule::default(), 0, frames);
        assert_eq!(sel.selected.len(), 1);
        assert_eq!(sel.selected[0].candidate.frame_index, 1);
        assert_eq!(sel.decisions.iter().filter(|d| d.selected).count(), 1);
        assert_eq!(l.live(), 1);
        drop(sel);
        assert_eq!(l.live(), 0);
    }

    #[test]
    fn quality_tie_prefers_later_frame() {
        let l = CropLedger::new();
        let frames = (0..3)
            .map(|f| CropFrame { frame_index: f, candidates: vec![cand(&l, 1, f, 0.0, pose(17, 0.7))], untracked_boxes: vec![] })
            .collect();
        let sel = select_per_window(&SelectionRule::default(), 0, frames);
        assert_eq!(sel.selected[0].candidate.frame_index, 2);
    }

    #[test]
    fn extraction_batches() {
        let l = CropLedger::new();
        let mk = |n: usize| -> Vec<SelectedCrop> {
            (0..n).map(|i| SelectedCrop { candidate: cand(&l, i as u64, 0, 0.0, pose(17, 0.9)), max_iou: 0.0 }).collect()
        };
        let sizes = |v: Vec<Vec<SelectedCrop>>| v.iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(batch_for_extraction(mk(7), 64)), vec![7]);
        assert!(batch_for_extraction(mk(0), 64).is_empty());
        assert_eq!(sizes(batch_for_extraction(mk(70), 64)), vec![64, 6]);
    }
}
