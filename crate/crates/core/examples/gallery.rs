//! Cross-camera matching and the one-hour matching period.

use vigil::global::{Gallery, GalleryConfig};
use vigil::model::{CameraId, FeatureRecord};

const SEC: u64 = 1_000_000_000;

fn feature(v: [f32; 3], cam: &str, t: u64) -> FeatureRecord {
    FeatureRecord::from_raw(v.to_vec(), CameraId::new(cam), 1, t, 0.9).unwrap()
}

fn main() {
    let mut g = Gallery::new(GalleryConfig { feature_dim: Some(3), ..GalleryConfig::default() });
    let seen = [
        ("lobby", [1.0, 0.1, 0.0], 0),
        ("hall", [0.0, 1.0, 0.1], 5 * SEC),
        ("stairs", [0.95, 0.15, 0.05], 60 * SEC),
        ("lobby", [0.1, 0.0, 1.0], 90 * SEC),
        ("hall", [1.0, 0.1, 0.0], 2 * 3600 * SEC),
    ];
    for (cam, v, t) in seen {
        let m = g.match_feature(&feature(v, cam, t), t).unwrap();
        let sim = m.similarity.map_or("new".to_string(), |s| format!("cosine {s:.3}"));
        println!("{cam:>6} at {:>5} s -> global ID {} ({sim})", t / SEC, m.global_id);
    }
    println!("{} entries left after expiry", g.len());
}
