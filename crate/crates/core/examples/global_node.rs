//! A local node streaming to a global node over TCP, then an analysis.

use std::sync::Arc;

use vigil::global::{serve, wall_clock_ns, GalleryConfig, GlobalNode, TcpSink};
use vigil::pipeline::{run_local_node, NodeSetup, PipelineConfig};
use vigil::synth::{generate_world, DensityPreset, ScenarioSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let server = serve("127.0.0.1:0", GlobalNode::in_memory(GalleryConfig::default())?)?;
    let addr = server.local_addr();
    println!("global node on {addr}");

    for cam in ["cam-a", "cam-b"] {
        let spec = ScenarioSpec { camera_id: cam.into(), identity_count: Some(6), ..ScenarioSpec::preset(DensityPreset::Normal, 9, 900) };
        let gt = Arc::new(generate_world(&spec)?);
        let config = PipelineConfig::default();
        let setup = NodeSetup::synthetic(&gt, &config)?.with_sink(TcpSink::new(addr));
        let report = run_local_node(&config, setup)?.join()?;
        println!("{cam}: link {:?}", report.nodes[0].link);
    }

    let node = server.shutdown();
    let stats = node.stats();
    println!("accepted {}, duplicates {}, rejected {}, features {}", stats.accepted, stats.duplicates, stats.rejected, stats.features);
    let r = node.analyze(0, 30 * 1_000_000_000, 10.0, wall_clock_ns())?;
    for (cam, occ) in &r.occupancy {
        println!("{cam} person-seconds per 10 s: {occ:?}");
    }
    let crossed = r.transitions.values().filter(|v| v.len() > 1).count();
    println!("{} global IDs, {crossed} seen on more than one camera", r.transitions.len());
    println!("task events {:?}", r.task_events);
    Ok(())
}
