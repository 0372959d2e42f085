use std::path::Path;

use serde::{Deserialize, Serialize};

use super::engine::NodeReport;
use super::{PipelineError, Stage};
use crate::model::Nanos;

/// One row per batch per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub node: usize,
    pub camera_id: String,
    pub stage: Stage,
    pub batch: u64,
    pub frames: usize,
    pub invocations: usize,
    pub items: usize,
    pub enqueue_ns: Nanos,
    pub dequeue_ns: Nanos,
    pub start_ns: Nanos,
    pub complete_ns: Nanos,
    pub handoff_ns: Nanos,
    pub queue_wait_ns: Nanos,
    pub service_ns: Nanos,
    pub demand_ns: Nanos,
}

impl StageReport {
    pub fn rows(node: &NodeReport) -> Vec<StageReport> {
        let mut rows = Vec::new();
        for b in &node.batches {
            for stage in Stage::ALL {
                let Some(t) = b.timing[stage.index()] else { continue };
                let w = b.work[stage.index()];
                rows.push(StageReport {
                    node: node.node,
                    camera_id: node.camera_id.to_string(),
                    stage,
                    batch: b.batch,
                    frames: w.frames,
                    invocations: w.invocations,
                    items: w.items,
                    enqueue_ns: t.enqueue,
                    dequeue_ns: t.dequeue,
                    start_ns: t.start,
                    complete_ns: t.complete,
                    handoff_ns: t.handoff,
                    queue_wait_ns: t.dequeue.saturating_sub(t.enqueue),
                    service_ns: t.complete.saturating_sub(t.dequeue),
                    demand_ns: b.demand[stage.index()],
                });
            }
        }
        rows
    }
}

/// Writes `node_<i>.csv` per node into `dir`.
pub fn write_stage_reports(dir: &Path, nodes: &[NodeReport]) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    for node in nodes {
        let mut w = csv::Writer::from_path(dir.join(format!("node_{}.csv", node.node)))?;
        for row in StageReport::rows(node) {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    Ok(())
}
