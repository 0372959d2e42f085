//! The local node: a staged, batched and back-pressured dataflow per camera.
//!
//! ```text
//! source ─▶ detect ─▶ track ─▶ pose ─┬─▶ crop_select ─▶ features
//!                                    └─▶ tasks
//! ```
//!
//! Every arrow is a bounded FIFO of capacity λ₁ holding whole batches. Each
//! stage runs on its own thread. Under the deterministic clock the stages
//! only declare service demands and a discrete-event timeline replays them
//! against the host budget afterwards, so results do not depend on the
//! machine running them.

pub mod batching;
mod config;
mod engine;
mod host;
mod measure;
mod outbox;
mod queue;
mod report;
mod timeline;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ClockMode, OverflowPolicy, PipelineConfig, Resource, ServiceModel, ServiceProfile, SourceMode, Work};
pub use engine::{run_local_node, run_nodes, NodeCounters, NodeReport, NodeSetup, RunHandle, RunReport, SequenceAudit};
pub use host::{HostBudget, ResourcePools};
pub use measure::{measure, measure_node, BatchOutcome, MeasureWindow, Measurement, ThroughputLatencySummary};
pub use outbox::{GlobalSink, LinkStats, NullSink, Outbound, Outbox, RecordingSink, SinkError, StalledSink};
pub use queue::{stage_queue, QueueReceiver, QueueSender, QueueSnapshot, QueueStats, SendOutcome};
pub use report::{write_stage_reports, StageReport};
pub use timeline::{simulate, NodeDemands, StageTiming, Timeline};

use crate::model::CameraId;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("batch mixes cameras: expected {expected}, got {got}")]
    MixedCameras { expected: CameraId, got: CameraId },
    #[error("frame {got} arrived after frame {last}")]
    OutOfOrder { last: u64, got: u64 },
    #[error("frame {got} follows frame {last}; frames must be consecutive")]
    FrameGap { last: u64, got: u64 },
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("host budget exhausted: {0}")]
    ResourceExhausted(String),
    #[error("timeline stalled at {at_ns} ns")]
    Deadlock { at_ns: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// The stages of a local node, in dataflow order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Source,
    Detect,
    Track,
    Pose,
    CropSelect,
    Features,
    Tasks,
}

impl Stage {
    pub const ALL: [Stage; 7] = [Stage::Source, Stage::Detect, Stage::Track, Stage::Pose, Stage::CropSelect, Stage::Features, Stage::Tasks];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Stages fed by this one, in send order.
    pub fn downstream(self) -> &'static [Stage] {
        match self {
            Stage::Source => &[Stage::Detect],
            Stage::Detect => &[Stage::Track],
            Stage::Track => &[Stage::Pose],
            Stage::Pose => &[Stage::CropSelect, Stage::Tasks],
            Stage::CropSelect => &[Stage::Features],
            Stage::Features | Stage::Tasks => &[],
        }
    }

    pub fn upstream(self) -> Option<Stage> {
        match self {
            Stage::Source => None,
            Stage::Detect => Some(Stage::Source),
            Stage::Track => Some(Stage::Detect),
            Stage::Pose => Some(Stage::Track),
            Stage::CropSelect | Stage::Tasks => Some(Stage::Pose),
            Stage::Features => Some(Stage::CropSelect),
        }
    }

    pub fn is_sink(self) -> bool {
        self.downstream().is_empty()
    }

    pub fn name(self) -> &'static str {
        match self {
            Stage::Source => "source",
            Stage::Detect => "detect",
            Stage::Track => "track",
            Stage::Pose => "pose",
            Stage::CropSelect => "crop_select",
            Stage::Features => "features",
            Stage::Tasks => "tasks",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
