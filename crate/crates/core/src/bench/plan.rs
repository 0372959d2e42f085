use std::path::Path;

use serde::{Deserialize, Serialize};

use super::profiles::HostProfile;
use crate::pipeline::{ClockMode, HostBudget, PipelineError, ServiceProfile, SourceMode};
use crate::synth::DensityPreset;

/// Which runs keep per-batch stage reports. A full default plan writes
/// well over a million rows per repetition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageReportScope {
    All,
    FirstRepetition,
    None,
}

impl StageReportScope {
    pub fn keeps(self, repetition: usize) -> bool {
        match self {
            StageReportScope::All => true,
            StageReportScope::FirstRepetition => repetition == 0,
            StageReportScope::None => false,
        }
    }
}

/// A grid of scaling runs: every node count at every density, repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentPlan {
    /// One of the named host profiles, or a free label when `host` and
    /// `services` are given explicitly.
    pub hardware: String,
    pub node_counts: Vec<usize>,
    pub densities: Vec<DensityPreset>,
    pub repetitions: usize,
    pub clock: ClockMode,
    pub seed: u64,
    /// Frames per camera and run.
    pub frames: u64,
    pub warmup_frames: u64,
    pub cooldown_frames: u64,
    pub source: SourceMode,
    /// Overrides the profile's host budget.
    pub host: Option<HostBudget>,
    /// Overrides the profile's service model.
    pub services: Option<ServiceProfile>,
    pub stage_reports: StageReportScope,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            hardware: "workstation-like".into(),
            node_counts: vec![1, 2, 4, 6, 8],
            densities: DensityPreset::ALL.to_vec(),
            repetitions: 3,
            clock: ClockMode::Deterministic,
            seed: 0,
            frames: 32_000,
            warmup_frames: 7_000,
            cooldown_frames: 7_000,
            source: SourceMode::Unthrottled,
            host: None,
            services: None,
            stage_reports: StageReportScope::FirstRepetition,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.into()));
        if self.node_counts.is_empty() || self.node_counts.contains(&0) {
            return bad("node counts must be non-empty and at least 1");
        }
        if self.densities.is_empty() {
            return bad("at least one density is required");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.frames == 0 {
            return bad("frames must be positive");
        }
        if self.warmup_frames + self.cooldown_frames >= self.frames {
            return bad("warm-up and cool-down leave no frames to measure");
        }
        if (self.host.is_none() || self.services.is_none()) && HostProfile::named(&self.hardware).is_none() {
            return Err(PipelineError::InvalidConfig(format!(
                "unknown hardware profile {:?}; use one of {:?} or give host and services",
                self.hardware,
                HostProfile::NAMES
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let plan: Self = serde_json::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Host budget and service model the plan runs with.
    pub fn resolve(&self) -> HostProfile {
        let base = HostProfile::named(&self.hardware).unwrap_or_else(HostProfile::workstation_like);
        HostProfile {
            name: self.hardware.clone(),
            host: self.host.clone().unwrap_or(base.host),
            services: self.services.clone().unwrap_or(base.services),
        }
    }
}
