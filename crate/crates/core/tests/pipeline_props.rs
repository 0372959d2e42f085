use std::sync::Arc;

use proptest::prelude::*;
use vigil::pipeline::{run_local_node, ClockMode, NodeSetup, PipelineConfig, RecordingSink, ServiceModel, Stage};
use vigil::synth::{generate_world, ScenarioSpec};

fn spec(seed: u64, frames: u64, persons: f64) -> ScenarioSpec {
    ScenarioSpec { seed, duration_frames: frames, density: persons, ..ScenarioSpec::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_frame_arrives_once_in_order(
        seed in 0u64..1000,
        frames in 1u64..400,
        persons in 0.0f64..8.0,
        beta1 in 1usize..40,
        lambda1 in 1usize..6,
        slow in 0usize..7,
        ms in 0.0f64..60.0,
    ) {
        let gt = Arc::new(generate_world(&spec(seed, frames, persons)).unwrap());
        let mut config = PipelineConfig { beta1, lambda1, clock: ClockMode::Deterministic, seed, ..PipelineConfig::default() };
        *config.services.get_mut(Stage::ALL[slow]) = ServiceModel::per_batch(ms);
        let sink = RecordingSink::new();
        let report = run_local_node(&config, NodeSetup::synthetic(&gt, &config).unwrap().with_sink(sink.clone())).unwrap().join().unwrap();
        let node = &report.nodes[0];
        prop_assert!(node.failures.is_empty(), "{:?}", node.failures);
        prop_assert_eq!(node.frames_out(), frames);
        prop_assert_eq!(node.batches.len() as u64, frames.div_ceil(beta1 as u64));
        prop_assert!(node.max_occupancy.iter().all(|&o| o <= lambda1), "{:?}", node.max_occupancy);
        for a in &node.audits {
            prop_assert!(a.is_clean(), "{:?}", a);
            prop_assert_eq!(a.frames, frames);
        }
        let seqs: Vec<u64> = sink.take().iter().map(|e| e.seq).collect();
        prop_assert_eq!(seqs, (1..).take(node.link.as_ref().unwrap().delivered as usize).collect::<Vec<u64>>());
    }

    #[test]
    fn deterministic_runs_repeat(seed in 0u64..1000, frames in 30u64..200) {
        let gt = Arc::new(generate_world(&spec(seed, frames, 3.0)).unwrap());
        let config = PipelineConfig { clock: ClockMode::Deterministic, seed, ..PipelineConfig::default() };
        let run = || {
            let r = run_local_node(&config, NodeSetup::synthetic(&gt, &config).unwrap()).unwrap().join().unwrap();
            r.nodes[0].batches.iter().map(|b| b.sink_complete()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn large_batches_pass_the_privacy_screen() {
    use vigil::global::{GalleryConfig, GlobalNode, SharedNode};
    let gt = Arc::new(generate_world(&spec(8, 600, 4.0)).unwrap());
    let config = PipelineConfig { beta1: 150, clock: ClockMode::Deterministic, ..PipelineConfig::default() };
    let node = SharedNode::new(GlobalNode::in_memory(GalleryConfig::default()).unwrap());
    let report = run_local_node(&config, NodeSetup::synthetic(&gt, &config).unwrap().with_sink(node.clone())).unwrap().join().unwrap();
    assert_eq!(report.nodes[0].frames_out(), 600);
    let stats = node.lock().stats();
    assert_eq!(stats.rejected, 0);
    let summaries = node
        .lock()
        .store()
        .connection()
        .query_row("SELECT COUNT(*) FROM events WHERE kind = 'object_summary'", [], |r| r.get::<_, i64>(0))
        .unwrap();
    assert_eq!(summaries, 20);
}
