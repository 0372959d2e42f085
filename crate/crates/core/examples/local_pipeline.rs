//! One local node on a live 30 FPS camera with reference service times.

use std::sync::Arc;

use vigil::bench::reference_services;
use vigil::pipeline::{measure, run_local_node, MeasureWindow, NodeSetup, PipelineConfig};
use vigil::synth::{generate_world, DensityPreset, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = Arc::new(generate_world(&ScenarioSpec::preset(DensityPreset::Normal, 1, 3000))?);
    let config = PipelineConfig { services: reference_services(), ..PipelineConfig::default() };
    let report = run_local_node(&config, NodeSetup::synthetic(&gt, &config)?)?.join()?;
    let node = &report.nodes[0];
    let summary = measure(&report, &MeasureWindow::new(600, 600));
    println!(
        "frames out {}, FPS {:.2}, latency {:.3} s",
        node.frames_out(),
        summary.fps_per_node.unwrap_or(0.0),
        summary.latency_s.unwrap_or(0.0)
    );
    let c = &node.counters;
    println!("detections {} persons / {} objects, tracked {}", c.person_detections, c.object_detections, c.tracked);
    println!("crops {}, features sent {}, task events {}", c.crops_created, c.features_sent, c.task_events);
    println!("peak queue occupancy per stage {:?}", node.max_occupancy);
    for a in &node.audits {
        println!("{} audit: {} frames, clean {}", a.stage, a.frames, a.is_clean());
    }
    Ok(())
}
