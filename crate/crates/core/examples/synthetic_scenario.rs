//! Generates a crowd scene and writes its ground truth in MOT format.

use vigil::synth::{generate_world, DensityPreset, ScenarioSpec};
use vigil::tracker::mot::write_rows;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for preset in DensityPreset::ALL {
        let spec = ScenarioSpec::preset(preset, 42, 3000);
        let gt = generate_world(&spec)?;
        let persons: usize = (0..spec.duration_frames).map(|f| gt.person_count(f)).sum();
        let rate = persons as f64 / spec.duration_frames as f64 * spec.fps;
        println!(
            "{:>8}: {:>6.1} detections/s (label {}), {} appearances, {} identities",
            preset.name(),
            rate,
            preset.detections_per_second(),
            gt.appearances().len(),
            gt.identity_count()
        );
    }

    let gt = generate_world(&ScenarioSpec::preset(DensityPreset::Normal, 42, 300))?;
    let path = std::env::temp_dir().join("vigil_gt.txt");
    write_rows(std::fs::File::create(&path)?, &gt.mot_rows())?;
    println!("ground truth for 300 frames written to {}", path.display());
    Ok(())
}
