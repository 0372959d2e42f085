//! A reduced scaling grid: results.csv, stage reports and plots in a temp dir.

use vigil::bench::{render_report, run_experiment, ExperimentPlan};
use vigil::synth::DensityPreset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plan = ExperimentPlan {
        hardware: "serverB-like".into(),
        node_counts: vec![1, 2, 4],
        densities: vec![DensityPreset::Normal, DensityPreset::Extreme],
        repetitions: 1,
        frames: 6000,
        warmup_frames: 1500,
        cooldown_frames: 1500,
        ..ExperimentPlan::default()
    };
    let out = std::env::temp_dir().join("vigil_scaling");
    run_experiment(&plan, Some(&out))?;
    let result = render_report(&out)?;
    print!("{}", result.summary_markdown());
    println!("\nwritten to {}", out.display());
    Ok(())
}
