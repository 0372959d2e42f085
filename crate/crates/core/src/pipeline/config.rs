use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use super::{PipelineError, Stage};
use crate::crops::SelectionRule;
use crate::model::{Nanos, NANOS_PER_SEC};
use crate::tasks::TaskDescriptor;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// Stages declare service demands; a discrete-event timeline assigns
    /// all timestamps. Bit-reproducible.
    Deterministic,
    /// Stages sleep for their demands and timestamps come from the OS clock.
    Wall,
}

impl std::str::FromStr for ClockMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(ClockMode::Deterministic),
            "wall" => Ok(ClockMode::Wall),
            other => Err(format!("unknown clock mode {other:?}")),
        }
    }
}

/// What a producer does when the downstream queue is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowPolicy {
    Block,
    /// Discard the new batch. Wall clock only.
    DropNewest,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SourceMode {
    /// A camera delivering frames at `fps`; frame `i` is captured at `i / fps`
    /// and handed over one frame period later.
    Live { fps: f64 },
    /// A recording read as fast as the pipeline accepts it.
    Unthrottled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    None,
    Cpu,
    Gpu,
}

/// Counts a stage reports for one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Work {
    pub frames: usize,
    pub invocations: usize,
    pub items: usize,
}

/// Emulated cost of one stage:
/// `per_batch + per_frame·frames + per_invocation·invocations + per_item·items`,
/// optionally scaled by a mean-one lognormal factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceModel {
    pub per_batch_ms: f64,
    pub per_frame_ms: f64,
    pub per_invocation_ms: f64,
    pub per_item_ms: f64,
    pub jitter_sigma: f64,
    pub resource: Resource,
}

impl Default for ServiceModel {
    fn default() -> Self {
        Self::zero()
    }
}

impl ServiceModel {
    pub const fn zero() -> Self {
        Self { per_batch_ms: 0.0, per_frame_ms: 0.0, per_invocation_ms: 0.0, per_item_ms: 0.0, jitter_sigma: 0.0, resource: Resource::None }
    }

    pub fn per_batch(ms: f64) -> Self {
        Self { per_batch_ms: ms, ..Self::zero() }
    }

    pub fn on(mut self, resource: Resource) -> Self {
        self.resource = resource;
        self
    }

    /// Demand in milliseconds before jitter and host scaling.
    pub fn base_ms(&self, work: &Work) -> f64 {
        self.per_batch_ms
            + self.per_frame_ms * work.frames as f64
            + self.per_invocation_ms * work.invocations as f64
            + self.per_item_ms * work.items as f64
    }

    /// Demand for one batch; the jitter draw depends only on `stream`.
    pub fn demand(&self, work: &Work, scale: f64, stream: u64) -> Nanos {
        let mut ms = self.base_ms(work) * scale;
        if self.jitter_sigma > 0.0 && ms > 0.0 {
            let s = self.jitter_sigma;
            let dist = LogNormal::new(-0.5 * s * s, s).expect("finite sigma");
            ms *= dist.sample(&mut ChaCha8Rng::seed_from_u64(stream));
        }
        (ms * 1e6).round().max(0.0) as Nanos
    }

    fn validate(&self, stage: Stage) -> Result<(), PipelineError> {
        let fields = [self.per_batch_ms, self.per_frame_ms, self.per_invocation_ms, self.per_item_ms, self.jitter_sigma];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(PipelineError::InvalidConfig(format!("{stage}: service times must be finite and non-negative")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceProfile {
    pub source: ServiceModel,
    pub detect: ServiceModel,
    pub track: ServiceModel,
    pub pose: ServiceModel,
    pub crop_select: ServiceModel,
    pub features: ServiceModel,
    pub tasks: ServiceModel,
}

impl ServiceProfile {
    /// Every stage free.
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, stage: Stage) -> &ServiceModel {
        match stage {
            Stage::Source => &self.source,
            Stage::Detect => &self.detect,
            Stage::Track => &self.track,
            Stage::Pose => &self.pose,
            Stage::CropSelect => &self.crop_select,
            Stage::Features => &self.features,
            Stage::Tasks => &self.tasks,
        }
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut ServiceModel {
        match stage {
            Stage::Source => &mut self.source,
            Stage::Detect => &mut self.detect,
            Stage::Track => &mut self.track,
            Stage::Pose => &mut self.pose,
            Stage::CropSelect => &mut self.crop_select,
            Stage::Features => &mut self.features,
            Stage::Tasks => &mut self.tasks,
        }
    }

    /// Strips the lognormal jitter from every stage.
    pub fn without_jitter(mut self) -> Self {
        for s in Stage::ALL {
            self.get_mut(s).jitter_sigma = 0.0;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Frames per batch.
    pub beta1: usize,
    /// Pose backend batch size.
    pub beta2: usize,
    /// Upper bound on one feature-extraction batch.
    pub beta3_cap: usize,
    /// Capacity of every inter-stage queue.
    pub lambda1: usize,
    pub source: SourceMode,
    pub clock: ClockMode,
    pub overflow: OverflowPolicy,
    pub services: ServiceProfile,
    /// Seed for service-time jitter.
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub selection: SelectionRule,
    pub tasks: Vec<TaskDescriptor>,
    pub outbox_capacity: usize,
    /// How long a finished run waits for the global-node link to drain.
    pub outbox_grace_ms: u64,
    /// Keep every crop-selection decision in the node report.
    pub record_selection: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            beta1: 30,
            beta2: 32,
            beta3_cap: 64,
            lambda1: 4,
            source: SourceMode::Live { fps: 30.0 },
            clock: ClockMode::Deterministic,
            overflow: OverflowPolicy::Block,
            services: ServiceProfile::zero(),
            seed: 0,
            tracker: TrackerConfig::default(),
            selection: SelectionRule::default(),
            tasks: vec![TaskDescriptor::toy_anomaly()],
            outbox_capacity: 4096,
            outbox_grace_ms: 2000,
            record_selection: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let positive = [("beta1", self.beta1), ("beta2", self.beta2), ("beta3_cap", self.beta3_cap), ("lambda1", self.lambda1)];
        for (name, v) in positive {
            if v < 1 {
                return Err(PipelineError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if let SourceMode::Live { fps } = self.source {
            if !(fps > 0.0 && fps.is_finite()) {
                return Err(PipelineError::InvalidConfig("source fps must be positive".into()));
            }
        }
        if self.clock == ClockMode::Deterministic && self.overflow != OverflowPolicy::Block {
            return Err(PipelineError::InvalidConfig("dropping batches is only supported with the wall clock".into()));
        }
        for s in Stage::ALL {
            self.services.get(s).validate(s)?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Frame period of a live source.
    pub fn frame_period_ns(&self) -> Option<f64> {
        match self.source {
            SourceMode::Live { fps } => Some(NANOS_PER_SEC / fps),
            SourceMode::Unthrottled => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_constants() {
        let c = PipelineConfig::default();
        assert_eq!((c.beta1, c.beta2, c.lambda1), (30, 32, 4));
        c.validate().unwrap();
    }

    #[test]
    fn json_round_trip_and_partial_documents() {
        let c = PipelineConfig::from_json(r#"{"lambda1": 2, "source": {"mode": "unthrottled"}}"#).unwrap();
        assert_eq!(c.lambda1, 2);
        assert_eq!(c.beta1, 30);
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(PipelineConfig::from_json(&text).unwrap(), c);
        assert!(PipelineConfig::from_json(r#"{"beta1": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"overflow": "drop_newest"}"#).is_err());
    }

    #[test]
    fn demand_is_linear_without_jitter() {
        let m = ServiceModel { per_batch_ms: 1.0, per_frame_ms: 2.0, per_invocation_ms: 3.0, per_item_ms: 0.5, ..ServiceModel::zero() };
        let w = Work { frames: 30, invocations: 2, items: 10 };
        assert_eq!(m.demand(&w, 1.0, 7), ((1.0 + 60.0 + 6.0 + 5.0) * 1e6) as u64);
        assert_eq!(m.demand(&w, 2.0, 7), 2 * 72_000_000);
    }

    #[test]
    fn jitter_is_seeded_and_mean_one() {
        let m = ServiceModel { per_batch_ms: 10.0, jitter_sigma: 0.2, ..ServiceModel::zero() };
        let w = Work::default();
        assert_eq!(m.demand(&w, 1.0, 3), m.demand(&w, 1.0, 3));
        let mean = (0..20_000).map(|s| m.demand(&w, 1.0, s) as f64).sum::<f64>() / 20_000.0;
        assert!((mean / 1e7 - 1.0).abs() < 0.01, "{mean}");
    }
}
