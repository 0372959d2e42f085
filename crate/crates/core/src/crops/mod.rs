//! Crop quality filter: at most one confident, non-overlapping crop per
//! person and window goes on to feature extraction.

mod handle;
mod select;

use std::collections::HashSet;

pub use handle::{CropHandle, CropLedger};
pub use select::{
    batch_for_extraction, is_eligible, max_overlap, select_per_window, CropCandidate, CropFrame, SelectedCrop, Selection,
    SelectionDecision, SelectionRule,
};

use crate::model::CameraId;

/// Re-checks crops at the feature-extraction boundary.
#[derive(Debug, Default)]
pub struct ExtractionAudit {
    seen: HashSet<(CameraId, u64, u64)>,
    pub forwarded: u64,
    pub duplicates: u64,
    pub ineligible: u64,
}

impl ExtractionAudit {
    /// Records a crop about to be extracted; returns false on a violation.
    pub fn admit(&mut self, rule: &SelectionRule, window: u64, crop: &SelectedCrop) -> bool {
        let c = &crop.candidate;
        self.forwarded += 1;
        let fresh = self.seen.insert((c.camera_id.clone(), c.local_id, window));
        let eligible = rule.pose_ok(&c.pose) && rule.overlap_ok(crop.max_iou);
        if !fresh {
            self.duplicates += 1;
        }
        if !eligible {
            self.ineligible += 1;
        }
        fresh && eligible
    }

    pub fn violations(&self) -> u64 {
        self.duplicates + self.ineligible
    }
}
