//! Illustrative host presets. The numbers are chosen so the emulated
//! pipeline lands in the same range as small multi-GPU servers; they are
//! not measurements of any particular machine.

use crate::pipeline::{HostBudget, Resource, ServiceModel, ServiceProfile};

#[derive(Debug, Clone, PartialEq)]
pub struct HostProfile {
    pub name: String,
    pub host: HostBudget,
    pub services: ServiceProfile,
}

const JITTER: f64 = 0.05;

fn model(resource: Resource, per_batch: f64, per_frame: f64, per_invocation: f64, per_item: f64) -> ServiceModel {
    ServiceModel {
        per_batch_ms: per_batch,
        per_frame_ms: per_frame,
        per_invocation_ms: per_invocation,
        per_item_ms: per_item,
        jitter_sigma: JITTER,
        resource,
    }
}

/// Stage costs of a detector, pose network and re-ID network on one
/// accelerator, before the host's speed factor.
pub fn reference_services() -> ServiceProfile {
    ServiceProfile {
        source: model(Resource::Cpu, 0.0, 0.5, 0.0, 0.0),
        detect: model(Resource::Gpu, 0.0, 15.0, 0.0, 0.5),
        track: model(Resource::Cpu, 0.0, 0.2, 0.0, 0.05),
        pose: model(Resource::Gpu, 0.0, 0.0, 8.0, 1.5),
        crop_select: model(Resource::Cpu, 0.2, 0.0, 0.0, 0.02),
        features: model(Resource::Gpu, 0.0, 0.0, 5.0, 2.0),
        tasks: model(Resource::Cpu, 1.0, 0.0, 0.1, 0.0),
    }
}

impl HostProfile {
    pub const NAMES: [&'static str; 3] = ["serverA-like", "serverB-like", "workstation-like"];

    pub fn named(name: &str) -> Option<Self> {
        match name {
            "serverA-like" => Some(Self::server_a_like()),
            "serverB-like" => Some(Self::server_b_like()),
            "workstation-like" => Some(Self::workstation_like()),
            _ => None,
        }
    }

    /// Four 32 GB accelerators, 32 cores.
    pub fn server_a_like() -> Self {
        Self {
            name: "serverA-like".into(),
            host: HostBudget {
                label: "serverA-like".into(),
                gpus: 4,
                cpus: 32,
                vram_gb_per_gpu: 32.0,
                node_vram_gb: 10.0,
                speed: 1.2,
                contention: 0.05,
            },
            services: reference_services(),
        }
    }

    /// Two 12 GB accelerators, 10 cores: room for two nodes only.
    pub fn server_b_like() -> Self {
        Self {
            name: "serverB-like".into(),
            host: HostBudget {
                label: "serverB-like".into(),
                gpus: 2,
                cpus: 10,
                vram_gb_per_gpu: 12.0,
                node_vram_gb: 10.0,
                speed: 1.6,
                contention: 0.08,
            },
            services: reference_services(),
        }
    }

    /// Three 48 GB accelerators, 32 cores.
    pub fn workstation_like() -> Self {
        Self {
            name: "workstation-like".into(),
            host: HostBudget {
                label: "workstation-like".into(),
                gpus: 3,
                cpus: 32,
                vram_gb_per_gpu: 48.0,
                node_vram_gb: 10.0,
                speed: 1.1,
                contention: 0.05,
            },
            services: reference_services(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn server_b_fits_two_nodes() {
        let p = HostProfile::server_b_like();
        assert!(p.host.check(2).is_ok());
        assert!(p.host.check(4).is_err());
        for n in [1, 2, 4, 6, 8] {
            assert!(HostProfile::server_a_like().host.check(n).is_ok());
            assert!(HostProfile::workstation_like().host.check(n).is_ok());
        }
    }
}
