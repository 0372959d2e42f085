//! Hosting for high-level tasks such as action recognition or anomaly
//! detection. Plugins see per-person pose windows (poses, boxes and local
//! IDs); the interface has no way to reach pixels or appearance features.

mod anomaly;
mod window;

use std::panic::{catch_unwind, AssertUnwindSafe};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anomaly::{mean_joint_displacement, toy_anomaly_score, RunningStats, ToyAnomalyScorer};
pub use window::{PoseWindow, WindowAssembler};

use crate::model::{CameraId, TrackedPerson};
use crate::pipeline::batching::FrameDetections;

pub const TASK_EVENT_SCHEMA: &str = "task_event/v1";

/// One result of a task, as sent to the global node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEvent {
    pub task: String,
    pub camera_id: CameraId,
    pub local_id: u64,
    pub window_start: u64,
    pub score: f64,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    ToyAnomaly,
    /// Registered in code with [`TaskHost::register`].
    External,
}

/// How a task wants its windows cut.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskDescriptor {
    pub name: String,
    pub kind: TaskKind,
    pub window: usize,
    pub stride: usize,
    /// Use every n-th frame only (half-rate tasks use 2).
    pub decimation: usize,
    pub schema: String,
}

impl Default for TaskDescriptor {
    fn default() -> Self {
        Self::toy_anomaly()
    }
}

impl TaskDescriptor {
    /// Anomaly-style cadence: window 30, stride 20.
    pub fn toy_anomaly() -> Self {
        Self {
            name: "toy_anomaly".into(),
            kind: TaskKind::ToyAnomaly,
            window: 30,
            stride: 20,
            decimation: 1,
            schema: TASK_EVENT_SCHEMA.into(),
        }
    }

    /// Action-style cadence: window 30, stride 30.
    pub fn external(name: impl Into<String>, window: usize, stride: usize) -> Self {
        Self { name: name.into(), kind: TaskKind::External, window, stride, decimation: 1, schema: TASK_EVENT_SCHEMA.into() }
    }

    fn validate(&self) -> Result<(), TaskError> {
        if self.window == 0 || self.stride == 0 || self.decimation == 0 {
            return Err(TaskError::InvalidDescriptor(format!("{}: window, stride and decimation must be positive", self.name)));
        }
        if self.schema != TASK_EVENT_SCHEMA {
            return Err(TaskError::InvalidDescriptor(format!("{}: unsupported event schema {:?}", self.name, self.schema)));
        }
        Ok(())
    }
}

pub trait TaskPlugin: Send {
    fn on_window(&mut self, window: &PoseWindow) -> Vec<TaskEvent>;
}

impl<F: FnMut(&PoseWindow) -> Vec<TaskEvent> + Send> TaskPlugin for F {
    fn on_window(&mut self, window: &PoseWindow) -> Vec<TaskEvent> {
        self(window)
    }
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("a task named {0:?} is already registered")]
    DuplicateName(String),
    #[error("invalid task descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("task kind {0:?} must be registered in code")]
    NotBuiltIn(String),
}

struct HostedTask {
    descriptor: TaskDescriptor,
    assembler: WindowAssembler,
    plugin: Box<dyn TaskPlugin>,
    failure: Option<String>,
}

#[derive(Debug, Default)]
pub struct TaskOutput {
    pub events: Vec<TaskEvent>,
    pub windows: usize,
    /// Plugins that failed during this call.
    pub failures: Vec<String>,
}

/// All tasks of one camera. Each task cuts its own windows; a task that
/// panics is switched off without affecting the others.
pub struct TaskHost {
    camera_id: CameraId,
    tasks: Vec<HostedTask>,
}

impl TaskHost {
    pub fn new(camera_id: CameraId) -> Self {
        Self { camera_id, tasks: Vec::new() }
    }

    /// Registers the built-in tasks named by `descriptors`.
    pub fn from_descriptors(camera_id: CameraId, descriptors: &[TaskDescriptor]) -> Result<Self, TaskError> {
        let mut host = Self::new(camera_id);
        for d in descriptors {
            match d.kind {
                TaskKind::ToyAnomaly => host.register(d.clone(), Box::new(ToyAnomalyScorer::new(d.name.clone())))?,
                TaskKind::External => return Err(TaskError::NotBuiltIn(d.name.clone())),
            }
        }
        Ok(host)
    }

    pub fn register(&mut self, descriptor: TaskDescriptor, plugin: Box<dyn TaskPlugin>) -> Result<(), TaskError> {
        descriptor.validate()?;
        if self.tasks.iter().any(|t| t.descriptor.name == descriptor.name) {
            return Err(TaskError::DuplicateName(descriptor.name));
        }
        let assembler = WindowAssembler::new(self.camera_id.clone(), descriptor.window, descriptor.stride, descriptor.decimation);
        self.tasks.push(HostedTask { descriptor, assembler, plugin, failure: None });
        Ok(())
    }

    pub fn task_names(&self) -> Vec<&str> {
        self.tasks.iter().map(|t| t.descriptor.name.as_str()).collect()
    }

    /// Tasks switched off by a panic, with the panic message.
    pub fn failed(&self) -> Vec<(&str, &str)> {
        self.tasks.iter().filter_map(|t| t.failure.as_deref().map(|f| (t.descriptor.name.as_str(), f))).collect()
    }

    pub fn process(&mut self, frames: &[FrameDetections<TrackedPerson>]) -> TaskOutput {
        let mut out = TaskOutput::default();
        for task in &mut self.tasks {
            let windows = task.assembler.push_batch(frames);
            if task.failure.is_some() {
                continue;
            }
            for w in &windows {
                out.windows += 1;
                match catch_unwind(AssertUnwindSafe(|| task.plugin.on_window(w))) {
                    Ok(events) => out.events.extend(events),
                    Err(panic) => {
                        let msg = panic
                            .downcast_ref::<&str>()
                            .map(|s| s.to_string())
                            .or_else(|| panic.downcast_ref::<String>().cloned())
                            .unwrap_or_else(|| "panic".into());
                        log::error!("task {} failed: {msg}", task.descriptor.name);
                        out.failures.push(format!("{}: {msg}", task.descriptor.name));
                        task.failure = Some(msg);
                        break;
                    }
                }
            }
        }
        out
    }
}
