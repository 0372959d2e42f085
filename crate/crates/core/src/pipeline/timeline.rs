use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{HostBudget, PipelineError, Resource, Stage};
use crate::model::Nanos;

/// Declared work of one node, in batch order.
#[derive(Debug, Clone)]
pub struct NodeDemands {
    /// Capture time of each batch's first frame; `None` when frames are read
    /// on demand rather than captured live.
    pub capture_first: Vec<Option<Nanos>>,
    /// Earliest time each batch can leave the source.
    pub ready: Vec<Nanos>,
    /// Service demand per stage (indexed by [`Stage::index`]) and batch.
    pub demand: [Vec<Nanos>; 7],
    pub resource: [Resource; 7],
}

impl NodeDemands {
    pub fn batches(&self) -> usize {
        self.ready.len()
    }
}

/// When one batch passed through one stage.
///
/// `enqueue` is the upstream completion, so `dequeue - enqueue` also covers
/// time the upstream stage spent blocked on a full queue. For the source it
/// is the capture time of the batch's first frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageTiming {
    pub enqueue: Nanos,
    pub dequeue: Nanos,
    /// Service start, after any wait for a host resource.
    pub start: Nanos,
    pub complete: Nanos,
    /// Moment the output was accepted by every downstream queue.
    pub handoff: Nanos,
}

#[derive(Debug, Clone, Default)]
pub struct Timeline {
    /// `[node][stage][batch]`.
    pub nodes: Vec<Vec<Vec<StageTiming>>>,
    /// Peak input-queue occupancy per node and stage.
    pub max_occupancy: Vec<[usize; 7]>,
}

impl Timeline {
    pub fn timing(&self, node: usize, stage: Stage, batch: usize) -> &StageTiming {
        &self.nodes[node][stage.index()][batch]
    }

    /// Completion of `batch` at the last sink to finish it.
    pub fn sink_complete(&self, node: usize, batch: usize) -> Nanos {
        Stage::ALL.iter().filter(|s| s.is_sink()).map(|s| self.timing(node, *s, batch).complete).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Idle,
    Waiting { b: usize },
    Serving { b: usize, until: Nanos },
    Blocked { b: usize, sent: usize },
    Done,
}

struct Pool {
    cap: usize,
    used: usize,
    waiters: VecDeque<(usize, usize)>,
}

struct Sim<'a> {
    nodes: &'a [NodeDemands],
    lambda1: usize,
    phase: Vec<[Phase; 7]>,
    next: Vec<[usize; 7]>,
    inbox: Vec<[VecDeque<usize>; 7]>,
    pools: [Pool; 2],
    out: Timeline,
}

fn pool_index(r: Resource) -> Option<usize> {
    match r {
        Resource::None => None,
        Resource::Cpu => Some(0),
        Resource::Gpu => Some(1),
    }
}

impl Sim<'_> {
    fn timing(&mut self, n: usize, s: usize, b: usize) -> &mut StageTiming {
        &mut self.out.nodes[n][s][b]
    }

    fn begin_service(&mut self, n: usize, s: usize, b: usize, now: Nanos) {
        let node = &self.nodes[n];
        let (demand, ready) = (node.demand[s][b], node.ready[b]);
        let t = self.timing(n, s, b);
        t.start = t.dequeue.max(now);
        let mut until = t.start + demand;
        if s == Stage::Source.index() {
            until = until.max(ready);
        }
        self.phase[n][s] = Phase::Serving { b, until };
    }

    /// Takes a unit of the stage's resource, or joins the queue for one.
    fn acquire(&mut self, n: usize, s: usize, b: usize, now: Nanos) {
        match pool_index(self.nodes[n].resource[s]) {
            Some(p) if self.pools[p].used >= self.pools[p].cap => {
                self.pools[p].waiters.push_back((n, s));
                self.phase[n][s] = Phase::Waiting { b };
            }
            Some(p) => {
                self.pools[p].used += 1;
                self.begin_service(n, s, b, now);
            }
            None => self.begin_service(n, s, b, now),
        }
    }

    fn step(&mut self, n: usize, stage: Stage, now: Nanos) -> bool {
        let s = stage.index();
        let nodes = self.nodes;
        let node = &nodes[n];
        match self.phase[n][s] {
            Phase::Done | Phase::Waiting { .. } => false,
            Phase::Serving { b, until } => {
                if until > now {
                    return false;
                }
                self.timing(n, s, b).complete = until;
                if let Some(p) = pool_index(node.resource[s]) {
                    self.pools[p].used -= 1;
                    while self.pools[p].used < self.pools[p].cap {
                        let Some((wn, ws)) = self.pools[p].waiters.pop_front() else { break };
                        self.pools[p].used += 1;
                        let Phase::Waiting { b: wb } = self.phase[wn][ws] else { unreachable!("waiter not waiting") };
                        self.begin_service(wn, ws, wb, now);
                    }
                }
                self.phase[n][s] = Phase::Blocked { b, sent: 0 };
                true
            }
            Phase::Blocked { b, sent } => {
                let outs = stage.downstream();
                let mut k = sent;
                while k < outs.len() {
                    let d = outs[k].index();
                    if self.inbox[n][d].len() >= self.lambda1 {
                        break;
                    }
                    self.inbox[n][d].push_back(b);
                    let len = self.inbox[n][d].len();
                    let occ = &mut self.out.max_occupancy[n][d];
                    *occ = (*occ).max(len);
                    k += 1;
                }
                if k == outs.len() {
                    self.timing(n, s, b).handoff = now;
                    self.next[n][s] += 1;
                    self.phase[n][s] = Phase::Idle;
                    true
                } else {
                    self.phase[n][s] = Phase::Blocked { b, sent: k };
                    k != sent
                }
            }
            Phase::Idle => {
                let b = self.next[n][s];
                if stage == Stage::Source {
                    if b >= node.batches() {
                        self.phase[n][s] = Phase::Done;
                        return true;
                    }
                    let capture = node.capture_first[b];
                    let t = self.timing(n, s, b);
                    t.enqueue = capture.unwrap_or(now);
                    t.dequeue = capture.map_or(now, |c| c.max(now));
                    self.acquire(n, s, b, now);
                    return true;
                }
                let up = stage.upstream().expect("non-source stage").index();
                let Some(got) = self.inbox[n][s].pop_front() else {
                    if self.phase[n][up] == Phase::Done && self.next[n][s] >= node.batches() {
                        self.phase[n][s] = Phase::Done;
                        return true;
                    }
                    return false;
                };
                debug_assert_eq!(got, b, "FIFO order");
                let enqueue = self.out.nodes[n][up][b].complete;
                let t = self.timing(n, s, b);
                t.enqueue = enqueue;
                t.dequeue = now;
                self.acquire(n, s, b, now);
                true
            }
        }
    }
}

/// Replays declared demands through bounded queues of `lambda1` batches and
/// the host's shared CPU and GPU pools. A stage holds its resource unit only
/// while serving; a finished batch blocks its stage until every downstream
/// queue has room. Deterministic: ties resolve by node, then stage order.
pub fn simulate(nodes: &[NodeDemands], lambda1: usize, host: &HostBudget) -> Result<Timeline, PipelineError> {
    let mut sim = Sim {
        nodes,
        lambda1,
        phase: vec![[Phase::Idle; 7]; nodes.len()],
        next: vec![[0; 7]; nodes.len()],
        inbox: (0..nodes.len()).map(|_| std::array::from_fn(|_| VecDeque::new())).collect(),
        pools: [
            Pool { cap: host.capacity(Resource::Cpu), used: 0, waiters: VecDeque::new() },
            Pool { cap: host.capacity(Resource::Gpu), used: 0, waiters: VecDeque::new() },
        ],
        out: Timeline {
            nodes: nodes.iter().map(|d| vec![vec![StageTiming::default(); d.batches()]; 7]).collect(),
            max_occupancy: vec![[0; 7]; nodes.len()],
        },
    };
    for d in nodes {
        if d.capture_first.len() != d.batches() || d.demand.iter().any(|v| v.len() != d.batches()) {
            return Err(PipelineError::InvalidConfig("demand vectors disagree on batch count".into()));
        }
    }

    let mut now: Nanos = 0;
    loop {
        let mut progress = true;
        while progress {
            progress = false;
            for n in 0..nodes.len() {
                for stage in Stage::ALL {
                    progress |= sim.step(n, stage, now);
                }
            }
        }
        if sim.phase.iter().all(|p| p.iter().all(|x| *x == Phase::Done)) {
            break;
        }
        let next = sim
            .phase
            .iter()
            .flat_map(|p| p.iter())
            .filter_map(|p| match p {
                Phase::Serving { until, .. } if *until > now => Some(*until),
                _ => None,
            })
            .min();
        match next {
            Some(t) => now = t,
            None => return Err(PipelineError::Deadlock { at_ns: now }),
        }
    }
    Ok(sim.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MS: Nanos = 1_000_000;

    fn node(batches: usize, live_period: Option<Nanos>, per_stage: [Nanos; 7], resource: [Resource; 7]) -> NodeDemands {
        let (capture_first, ready) = match live_period {
            Some(p) => {
                ((0..batches).map(|b| Some(b as Nanos * 30 * p)).collect(), (0..batches).map(|b| (b as Nanos + 1) * 30 * p).collect())
            }
            None => (vec![None; batches], vec![0; batches]),
        };
        NodeDemands { capture_first, ready, demand: std::array::from_fn(|s| vec![per_stage[s]; batches]), resource }
    }

    #[test]
    fn zero_cost_live_latency_is_one_batch_period() {
        let d = node(10, Some(33_333_333), [0; 7], [Resource::None; 7]);
        let t = simulate(&[d], 4, &HostBudget::unlimited()).unwrap();
        for b in 0..10 {
            let lat = t.sink_complete(0, b) - t.timing(0, Stage::Source, b).enqueue;
            assert_eq!(lat, 30 * 33_333_333);
        }
    }

    #[test]
    fn unthrottled_throughput_hits_the_bottleneck() {
        let d = node(200, None, [MS, 10 * MS, 2 * MS, 25 * MS, MS, 5 * MS, 3 * MS], [Resource::None; 7]);
        let t = simulate(&[d], 4, &HostBudget::unlimited()).unwrap();
        // steady state: one batch per 25 ms at the sinks
        let gap = t.sink_complete(0, 199) - t.sink_complete(0, 99);
        assert_eq!(gap, 100 * 25 * MS);
        for s in Stage::ALL {
            assert!(t.max_occupancy[0][s.index()] <= 4);
        }
    }

    #[test]
    fn timestamps_are_ordered_and_queues_bounded() {
        let d = node(
            50,
            None,
            [0, 3 * MS, 0, 7 * MS, 0, 2 * MS, 40 * MS],
            [Resource::None, Resource::Gpu, Resource::Cpu, Resource::Gpu, Resource::None, Resource::Gpu, Resource::None],
        );
        let host = HostBudget { gpus: 1, cpus: 1, ..HostBudget::unlimited() };
        let t = simulate(&[d.clone(), d], 2, &host).unwrap();
        for n in 0..2 {
            for s in Stage::ALL {
                for b in 0..50 {
                    let x = t.timing(n, s, b);
                    assert!(x.enqueue <= x.dequeue && x.dequeue <= x.start && x.start <= x.complete && x.complete <= x.handoff);
                }
                assert!(t.max_occupancy[n][s.index()] <= 2);
            }
        }
    }

    #[test]
    fn source_shares_the_cpu_pool() {
        let stages = [2 * MS, 0, 3 * MS, 0, 0, 0, 0];
        let res = [Resource::Cpu, Resource::None, Resource::Cpu, Resource::None, Resource::None, Resource::None, Resource::None];
        let host = HostBudget { cpus: 1, ..HostBudget::unlimited() };
        let t = simulate(&[node(20, None, stages, res), node(20, Some(MS), stages, res)], 4, &host).unwrap();
        for n in 0..2 {
            assert!(t.sink_complete(n, 19) > 0);
        }
    }

    #[test]
    fn shared_gpu_serializes_service() {
        let stages = [0, 10 * MS, 0, 0, 0, 0, 0];
        let res = [Resource::None, Resource::Gpu, Resource::None, Resource::None, Resource::None, Resource::None, Resource::None];
        let one = simulate(&[node(100, None, stages, res)], 4, &HostBudget { gpus: 1, ..HostBudget::unlimited() }).unwrap();
        let two =
            simulate(&[node(100, None, stages, res), node(100, None, stages, res)], 4, &HostBudget { gpus: 1, ..HostBudget::unlimited() })
                .unwrap();
        assert_eq!(one.sink_complete(0, 99), 100 * 10 * MS);
        assert_eq!(two.sink_complete(0, 99).max(two.sink_complete(1, 99)), 200 * 10 * MS);
    }
}
