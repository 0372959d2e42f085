//! Registers a custom high-level task next to the built-in anomaly scorer.

use std::sync::Arc;

use vigil::pipeline::{run_local_node, NodeSetup, PipelineConfig, RecordingSink};
use vigil::synth::{generate_world, DensityPreset, ScenarioSpec};
use vigil::tasks::{PoseWindow, TaskDescriptor, TaskEvent};

/// Labels each window by how far the person moved, in box heights.
fn walking(w: &PoseWindow) -> Vec<TaskEvent> {
    let (Some(a), Some(b)) = (w.boxes.first(), w.boxes.last()) else { return Vec::new() };
    let ((ax, ay), (bx, by)) = (a.center(), b.center());
    let moved = (bx - ax).hypot(by - ay) / a.height().max(1.0);
    vec![TaskEvent {
        task: "walking".into(),
        camera_id: w.camera_id.clone(),
        local_id: w.local_id,
        window_start: w.start_frame,
        score: moved,
        label: Some(if moved > 0.25 { "walking" } else { "standing" }.into()),
    }]
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = Arc::new(generate_world(&ScenarioSpec::preset(DensityPreset::Normal, 4, 1800))?);
    let config = PipelineConfig::default();
    let mut setup = NodeSetup::synthetic(&gt, &config)?;
    setup.tasks.register(TaskDescriptor::external("walking", 30, 30), Box::new(walking))?;
    let sink = RecordingSink::new();
    let report = run_local_node(&config, setup.with_sink(sink.clone()))?.join()?;
    println!("task windows {}, events {}", report.nodes[0].counters.task_windows, report.nodes[0].counters.task_events);
    let mut per_task = std::collections::BTreeMap::new();
    for env in sink.take() {
        if let Some(task) = env.payload.get("task").and_then(|t| t.as_str()) {
            *per_task.entry(task.to_string()).or_insert(0) += 1;
        }
    }
    println!("events sent per task: {per_task:?}");
    Ok(())
}
