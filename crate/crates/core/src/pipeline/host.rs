use std::sync::{Condvar, Mutex};

use serde::{Deserialize, Serialize};

use super::{PipelineError, Resource};

/// Resources shared by every local node on one host.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HostBudget {
    pub label: String,
    pub gpus: usize,
    pub cpus: usize,
    pub vram_gb_per_gpu: f64,
    /// Accelerator memory one local node keeps resident.
    pub node_vram_gb: f64,
    /// Multiplier on every service demand (slower hardware > 1).
    pub speed: f64,
    /// Extra slowdown per co-located node from shared memory bandwidth,
    /// host-to-device copies and context switching.
    pub contention: f64,
}

impl Default for HostBudget {
    fn default() -> Self {
        Self::unlimited()
    }
}

impl HostBudget {
    /// No contention at all: every stage of every node gets its own unit.
    pub fn unlimited() -> Self {
        Self {
            label: "unlimited".into(),
            gpus: usize::MAX,
            cpus: usize::MAX,
            vram_gb_per_gpu: f64::INFINITY,
            node_vram_gb: 0.0,
            speed: 1.0,
            contention: 0.0,
        }
    }

    pub fn capacity(&self, resource: Resource) -> usize {
        match resource {
            Resource::None => usize::MAX,
            Resource::Cpu => self.cpus,
            Resource::Gpu => self.gpus,
        }
    }

    /// Fails when `nodes` local nodes cannot be resident at once.
    pub fn check(&self, nodes: usize) -> Result<(), PipelineError> {
        if nodes == 0 {
            return Err(PipelineError::InvalidConfig("at least one node is required".into()));
        }
        let need = self.node_vram_gb * nodes as f64;
        let have = self.vram_gb_per_gpu * self.gpus as f64;
        if need > have {
            return Err(PipelineError::ResourceExhausted(format!(
                "{nodes} nodes need {need:.0} GB of accelerator memory, {} has {have:.0} GB",
                self.label
            )));
        }
        if self.gpus == 0 || self.cpus == 0 {
            return Err(PipelineError::ResourceExhausted(format!("{} has no compute units", self.label)));
        }
        Ok(())
    }

    /// Demand multiplier for each node when `nodes` share the host.
    pub fn scale(&self, nodes: usize) -> f64 {
        self.speed * (1.0 + self.contention * nodes.saturating_sub(1) as f64)
    }
}

/// Counting semaphore handing out units of one resource, FIFO-fair enough
/// for the wall clock.
#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn new(units: usize) -> Self {
        Self { free: Mutex::new(units), cv: Condvar::new() }
    }

    fn acquire(&self) {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
    }

    fn release(&self) {
        *self.free.lock().expect("semaphore poisoned") += 1;
        self.cv.notify_one();
    }
}

/// Wall-clock counterpart of the timeline's resource pools.
#[derive(Debug)]
pub struct ResourcePools {
    gpu: Semaphore,
    cpu: Semaphore,
}

pub(crate) struct Lease<'a> {
    sem: Option<&'a Semaphore>,
}

impl Drop for Lease<'_> {
    fn drop(&mut self) {
        if let Some(s) = self.sem {
            s.release();
        }
    }
}

impl ResourcePools {
    pub fn new(budget: &HostBudget) -> Self {
        Self { gpu: Semaphore::new(budget.gpus), cpu: Semaphore::new(budget.cpus) }
    }

    pub(crate) fn lease(&self, resource: Resource) -> Lease<'_> {
        let sem = match resource {
            Resource::None => None,
            Resource::Cpu => Some(&self.cpu),
            Resource::Gpu => Some(&self.gpu),
        };
        if let Some(s) = sem {
            s.acquire();
        }
        Lease { sem }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vram_limits_node_count() {
        let host =
            HostBudget { label: "small".into(), gpus: 2, cpus: 10, vram_gb_per_gpu: 12.0, node_vram_gb: 10.0, ..HostBudget::unlimited() };
        assert!(host.check(2).is_ok());
        assert!(matches!(host.check(4), Err(PipelineError::ResourceExhausted(_))));
    }

    #[test]
    fn leases_bound_concurrency() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        use std::sync::Arc;
        let pools = Arc::new(ResourcePools::new(&HostBudget { gpus: 2, cpus: 1, ..HostBudget::unlimited() }));
        let live = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..6)
            .map(|_| {
                let (pools, live, peak) = (pools.clone(), live.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _l = pools.lease(Resource::Gpu);
                    let now = live.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    live.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
