use serde::{Deserialize, Serialize};

use super::engine::{NodeReport, RunReport};
use crate::model::{Nanos, NANOS_PER_SEC};

/// Frames excluded at either end of a run. A batch counts only if all of
/// its frames lie inside the window.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureWindow {
    pub warmup_frames: u64,
    pub cooldown_frames: u64,
}

impl MeasureWindow {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn new(warmup_frames: u64, cooldown_frames: u64) -> Self {
        Self { warmup_frames, cooldown_frames }
    }
}

/// One measured batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub batch: u64,
    pub first_frame: u64,
    pub frames: usize,
    pub origin: Nanos,
    pub sink_complete: Nanos,
}

impl BatchOutcome {
    pub fn latency_s(&self) -> f64 {
        self.sink_complete.saturating_sub(self.origin) as f64 / NANOS_PER_SEC
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Measurement {
    /// No frame made it through the measured window.
    Empty,
    Measured {
        frames: u64,
        elapsed_s: f64,
        fps: f64,
        mean_latency_s: f64,
        batches: Vec<BatchOutcome>,
    },
}

impl Measurement {
    pub fn fps(&self) -> Option<f64> {
        match self {
            Measurement::Measured { fps, .. } => Some(*fps),
            Measurement::Empty => None,
        }
    }

    pub fn latency_s(&self) -> Option<f64> {
        match self {
            Measurement::Measured { mean_latency_s, .. } => Some(*mean_latency_s),
            Measurement::Empty => None,
        }
    }
}

/// Throughput and latency of one node.
///
/// FPS is the number of measured frames over the time from the sink
/// completion of the batch just before the window (or time zero) to the
/// last measured sink completion. Latency runs from each batch's first
/// capture to its completion at the last sink.
pub fn measure_node(node: &NodeReport, window: &MeasureWindow) -> Measurement {
    let total: u64 = node.batches.iter().map(|b| b.frames as u64).sum();
    let first = node.batches.first().map_or(0, |b| b.first_frame);
    let lo = first + window.warmup_frames;
    let hi = (first + total).saturating_sub(window.cooldown_frames);
    let mut before: Option<Nanos> = None;
    let mut batches = Vec::new();
    for b in &node.batches {
        let (Some(done), Some(origin)) = (b.sink_complete(), b.origin_time()) else { continue };
        let end = b.first_frame + b.frames as u64;
        if b.first_frame < lo {
            before = Some(before.map_or(done, |x: Nanos| x.max(done)));
        } else if end <= hi {
            batches.push(BatchOutcome { batch: b.batch, first_frame: b.first_frame, frames: b.frames, origin, sink_complete: done });
        }
    }
    let Some(last) = batches.iter().map(|b| b.sink_complete).max() else { return Measurement::Empty };
    let frames: u64 = batches.iter().map(|b| b.frames as u64).sum();
    let elapsed_s = last.saturating_sub(before.unwrap_or(0)) as f64 / NANOS_PER_SEC;
    if frames == 0 || elapsed_s <= 0.0 {
        return Measurement::Empty;
    }
    let mean_latency_s = batches.iter().map(BatchOutcome::latency_s).sum::<f64>() / batches.len() as f64;
    Measurement::Measured { frames, elapsed_s, fps: frames as f64 / elapsed_s, mean_latency_s, batches }
}

/// Averages over the nodes of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputLatencySummary {
    pub nodes: usize,
    /// Nodes with at least one measured batch.
    pub measured_nodes: usize,
    pub fps_per_node: Option<f64>,
    pub latency_s: Option<f64>,
    pub per_node: Vec<Measurement>,
}

impl ThroughputLatencySummary {
    pub fn is_empty(&self) -> bool {
        self.measured_nodes == 0
    }
}

pub fn measure(report: &RunReport, window: &MeasureWindow) -> ThroughputLatencySummary {
    let per_node: Vec<Measurement> = report.nodes.iter().map(|n| measure_node(n, window)).collect();
    let fps: Vec<f64> = per_node.iter().filter_map(Measurement::fps).collect();
    let lat: Vec<f64> = per_node.iter().filter_map(Measurement::latency_s).collect();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    ThroughputLatencySummary { nodes: per_node.len(), measured_nodes: fps.len(), fps_per_node: mean(&fps), latency_s: mean(&lat), per_node }
}
