//! Statistical summaries computed from stored events. The set is open:
//! each analysis reads the store and adds one field to [`AnalysisResult`].

use std::collections::BTreeMap;

use rusqlite::{params, Connection};
use serde::{Deserialize, Serialize};

use super::protocol::ObjectSummary;
use super::store::StoreResult;
use crate::model::{Nanos, NANOS_PER_SEC};
use crate::tasks::TaskEvent;

pub const DEFAULT_BUCKET_S: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisResult {
    pub range_start: Nanos,
    pub range_end: Nanos,
    pub bucket_s: f64,
    /// Person-seconds per camera and bucket.
    pub occupancy: BTreeMap<String, Vec<f64>>,
    /// Cameras each global ID visited, in capture order with repeats collapsed.
    pub transitions: BTreeMap<u64, Vec<String>>,
    /// Task events per task name.
    pub task_events: BTreeMap<String, u64>,
}

impl AnalysisResult {
    pub fn empty(range_start: Nanos, range_end: Nanos, bucket_s: f64) -> Self {
        Self { range_start, range_end, bucket_s, occupancy: BTreeMap::new(), transitions: BTreeMap::new(), task_events: BTreeMap::new() }
    }

    pub fn bucket_count(&self) -> usize {
        let span = self.range_end.saturating_sub(self.range_start) as f64;
        (span / (self.bucket_s * NANOS_PER_SEC)).ceil() as usize
    }
}

fn i(v: Nanos) -> i64 {
    i64::try_from(v).unwrap_or(i64::MAX)
}

/// Runs all analyses over capture times in `[start, end)`.
pub fn analyze(conn: &Connection, start: Nanos, end: Nanos, bucket_s: f64) -> StoreResult<AnalysisResult> {
    let mut result = AnalysisResult::empty(start, end, bucket_s);
    if end <= start || bucket_s <= 0.0 {
        return Ok(result);
    }
    let buckets = result.bucket_count();
    let bucket_ns = bucket_s * NANOS_PER_SEC;

    let mut cams = conn.prepare("SELECT DISTINCT camera_id FROM events ORDER BY camera_id")?;
    for cam in cams.query_map([], |r| r.get::<_, String>(0))? {
        result.occupancy.insert(cam?, vec![0.0; buckets]);
    }

    let mut summaries = conn.prepare("SELECT camera_id, payload FROM events WHERE kind = 'object_summary' ORDER BY id")?;
    let rows = summaries.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
    for row in rows {
        let (cam, payload) = row?;
        let Ok(s) = serde_json::from_str::<ObjectSummary>(&payload) else { continue };
        let series = result.occupancy.entry(cam).or_insert_with(|| vec![0.0; buckets]);
        let period_s = s.frame_period_ns as f64 / NANOS_PER_SEC;
        for (k, &n) in s.persons.iter().enumerate() {
            let t = s.start_time + k as u64 * s.frame_period_ns;
            if t < start || t >= end || n == 0 {
                continue;
            }
            let b = (((t - start) as f64) / bucket_ns) as usize;
            series[b.min(buckets - 1)] += n as f64 * period_s;
        }
    }

    let mut feats = conn.prepare(
        "SELECT global_id, camera_id FROM features WHERE capture_time >= ?1 AND capture_time < ?2
         ORDER BY global_id, capture_time, event_id",
    )?;
    for row in feats.query_map(params![i(start), i(end)], |r| Ok((r.get::<_, i64>(0)? as u64, r.get::<_, String>(1)?)))? {
        let (gid, cam) = row?;
        let visits = result.transitions.entry(gid).or_default();
        if visits.last() != Some(&cam) {
            visits.push(cam);
        }
    }

    let mut events = conn.prepare("SELECT payload FROM events WHERE kind = 'task_event' AND sent_at >= ?1 AND sent_at < ?2")?;
    for row in events.query_map(params![i(start), i(end)], |r| r.get::<_, String>(0))? {
        if let Ok(e) = serde_json::from_str::<TaskEvent>(&row?) {
            *result.task_events.entry(e.task).or_default() += 1;
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global::gallery::GalleryConfig;
    use crate::global::node::GlobalNode;
    use crate::global::protocol::{Envelope, Payload};
    use crate::model::{CameraId, FeatureRecord};

    const SEC: Nanos = 1_000_000_000;

    fn node() -> GlobalNode {
        GlobalNode::in_memory(GalleryConfig { feature_dim: Some(2), ..GalleryConfig::default() }).unwrap()
    }

    #[test]
    fn empty_range_gives_empty_result() {
        let n = node();
        let r = n.analyze(10, 10, 60.0, 0).unwrap();
        assert_eq!(r, AnalysisResult::empty(10, 10, 60.0));
    }

    #[test]
    fn no_events_means_zero_occupancy() {
        let mut n = node();
        let hb = Envelope::wrap(CameraId::new("a"), 1, &Payload::Heartbeat(Default::default()), 0);
        n.ingest(&hb, 0);
        let r = n.analyze(0, 120 * SEC, 60.0, 0).unwrap();
        assert_eq!(r.occupancy["a"], vec![0.0, 0.0]);
        assert_eq!(n.store().count("analyses").unwrap(), 1);
    }

    #[test]
    fn transitions_follow_capture_order() {
        let mut n = node();
        let send = |n: &mut GlobalNode, cam: &str, seq: u64, t: Nanos| {
            let f = FeatureRecord::from_raw(vec![1.0, 0.0], CameraId::new(cam), 1, t, 0.9).unwrap();
            n.ingest(&Envelope::wrap(CameraId::new(cam), seq, &Payload::Feature(f), t), t);
        };
        send(&mut n, "A", 1, SEC);
        send(&mut n, "A", 2, 2 * SEC);
        send(&mut n, "B", 1, 3 * SEC);
        let r = n.analyze(0, 10 * SEC, 60.0, 0).unwrap();
        assert_eq!(r.transitions[&1], vec!["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn occupancy_integrates_person_counts() {
        let mut n = node();
        // 45 frames every 2 s with 2 persons each: 60 s in the first bucket, 30 s in the second
        let s = ObjectSummary { frame_start: 0, start_time: 0, frame_period_ns: 2 * SEC, persons: vec![2; 45], objects: vec![0; 45] };
        n.ingest(&Envelope::wrap(CameraId::new("a"), 1, &Payload::ObjectSummary(s), 0), 0);
        let r = n.analyze(0, 120 * SEC, 60.0, 0).unwrap();
        assert_eq!(r.occupancy["a"], vec![120.0, 60.0]);
    }
}
