//! Runs the crop quality filter over one hand-made window.

use vigil::backend::Origin;
use vigil::crops::{select_per_window, CropCandidate, CropFrame, CropHandle, CropLedger, SelectionRule};
use vigil::model::{BoundingBox, CameraId, Keypoint, PoseSkeleton};

fn pose(confident: usize, level: f64) -> PoseSkeleton {
    PoseSkeleton::new(std::array::from_fn(|k| Keypoint { x: 0.0, y: 0.0, confidence: if k < confident { level } else { 0.2 } })).unwrap()
}

fn main() {
    let rule = SelectionRule::default();
    let ledger = CropLedger::new();
    let cam = CameraId::new("entrance");
    let cand = |id: u64, frame: u64, bbox: BoundingBox, p: PoseSkeleton| {
        let crop = CropHandle::cut(None, &bbox, Origin::unknown(), &ledger);
        CropCandidate::new(cam.clone(), id, frame, bbox, p, crop)
    };
    let lone = BoundingBox::new(0.0, 0.0, 50.0, 120.0).unwrap();
    let crowded_a = BoundingBox::new(300.0, 0.0, 350.0, 120.0).unwrap();
    let crowded_b = BoundingBox::new(320.0, 0.0, 370.0, 120.0).unwrap();
    let frames = vec![
        CropFrame {
            frame_index: 0,
            candidates: vec![cand(1, 0, lone, pose(9, 0.6)), cand(2, 0, crowded_a, pose(17, 0.95))],
            untracked_boxes: vec![crowded_b],
        },
        CropFrame {
            frame_index: 1,
            candidates: vec![cand(1, 1, lone, pose(12, 0.8)), cand(2, 1, crowded_b, pose(8, 0.9))],
            untracked_boxes: vec![],
        },
    ];
    let selection = select_per_window(&rule, 0, frames);
    for d in &selection.decisions {
        println!(
            "id {} frame {}: {:>2} confident keypoints, max IoU {:.2}, eligible {}, selected {}",
            d.local_id, d.frame_index, d.confident_keypoints, d.max_iou, d.eligible, d.selected
        );
    }
    println!("crops alive after selection: {}", ledger.live());
    drop(selection);
    println!("crops alive after extraction: {}", ledger.live());
}
