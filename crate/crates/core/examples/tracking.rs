//! Tracks a noisy synthetic scene and scores it against ground truth.

use vigil::synth::{detect_frame, generate_world, DensityPreset, ScenarioSpec};
use vigil::tracker::mot::{evaluate, MotRow};
use vigil::tracker::{ByteTracker, TrackerConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = ScenarioSpec::preset(DensityPreset::Heavy, 3, 1800);
    let gt = generate_world(&spec)?;
    let mut tracker = ByteTracker::new(TrackerConfig::default());
    let mut hyp = Vec::new();
    for f in 0..spec.duration_frames {
        let dets: Vec<_> = detect_frame(&gt, &spec.noise, f).into_iter().map(|r| r.detection).collect();
        for a in tracker.update(f, &dets)? {
            let d = &dets[a.detection];
            hyp.push(MotRow { frame_index: f, id: a.local_id as i64, bbox: d.bbox, score: d.score });
        }
    }
    let m = evaluate(&gt.mot_rows(), &hyp, 0.5);
    println!("ground truth boxes: {}", m.gt_detections);
    println!("matched {}, missed {}, false positives {}, ID switches {}", m.matches, m.misses, m.false_positives, m.id_switches);
    println!("MOTA {:.3}, local IDs issued {}", m.mota(), tracker.issued_ids());
    Ok(())
}
