use super::{PoseWindow, TaskEvent, TaskPlugin};

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Population variance; 0 before two samples.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / self.count as f64
        }
    }
}

/// Mean per-frame joint displacement over consecutive observed frames.
pub fn mean_joint_displacement(window: &PoseWindow) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 1..window.len() {
        if window.missing[i] || window.missing[i - 1] {
            continue;
        }
        let (a, b) = (window.poses[i - 1].keypoints(), window.poses[i].keypoints());
        let per_joint: f64 = a.iter().zip(b).map(|(p, q)| ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt()).sum();
        total += per_joint / a.len() as f64;
        pairs += 1;
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// z-score of `window`'s mean joint displacement against `stats`; 0 while
/// the variance is below 1e-9.
pub fn toy_anomaly_score(window: &PoseWindow, stats: &RunningStats) -> f64 {
    let var = stats.variance();
    if var < 1e-9 {
        return 0.0;
    }
    (mean_joint_displacement(window) - stats.mean) / var.sqrt()
}

/// Kinematic stand-in for a pose-based anomaly detector: scores each window
/// against the camera's history of motion, then adds it to that history.
#[derive(Debug, Clone)]
pub struct ToyAnomalyScorer {
    name: String,
    stats: RunningStats,
    threshold: f64,
}

impl ToyAnomalyScorer {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), stats: RunningStats::default(), threshold: 3.0 }
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }
}

impl TaskPlugin for ToyAnomalyScorer {
    fn on_window(&mut self, window: &PoseWindow) -> Vec<TaskEvent> {
        let score = toy_anomaly_score(window, &self.stats);
        self.stats.push(mean_joint_displacement(window));
        vec![TaskEvent {
            task: self.name.clone(),
            camera_id: window.camera_id.clone(),
            local_id: window.local_id,
            window_start: window.start_frame,
            score,
            label: (score > self.threshold).then(|| "anomalous".to_string()),
        }]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BoundingBox, CameraId, Keypoint, PoseSkeleton};

    fn walking(speed: f64, offset: f64) -> PoseWindow {
        let poses: Vec<PoseSkeleton> = (0..30)
            .map(|t| {
                PoseSkeleton::new(std::array::from_fn(|k| Keypoint {
                    x: offset + speed * t as f64 + k as f64,
                    y: 50.0 + offset,
                    confidence: 0.9,
                }))
                .unwrap()
            })
            .collect();
        PoseWindow {
            camera_id: CameraId::new("c"),
            local_id: 1,
            start_frame: 0,
            stride: 20,
            decimation: 1,
            boxes: vec![BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(); 30],
            missing: vec![false; 30],
            poses,
        }
    }

    #[test]
    fn still_poses_without_history_score_zero() {
        let w = walking(0.0, 0.0);
        assert_eq!(mean_joint_displacement(&w), 0.0);
        assert_eq!(toy_anomaly_score(&w, &RunningStats::default()), 0.0);
    }

    #[test]
    fn tenfold_motion_is_anomalous() {
        let mut stats = RunningStats::default();
        let speeds: Vec<f64> = (0..40).map(|i| 1.0 + 0.01 * (i % 5) as f64).collect();
        for &s in &speeds {
            stats.push(mean_joint_displacement(&walking(s, 0.0)));
        }
        // oracle: z = (10·1 − mean) / std over the constructed history
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        let var = speeds.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / speeds.len() as f64;
        let expected = (10.0 - mean) / var.sqrt();
        let z = toy_anomaly_score(&walking(10.0, 0.0), &stats);
        assert!((z - expected).abs() < 1e-6 * expected);
        assert!(z > 3.0);
    }

    #[test]
    fn translation_does_not_change_the_score() {
        let mut stats = RunningStats::default();
        for s in [1.0, 1.5, 2.0, 0.5] {
            stats.push(mean_joint_displacement(&walking(s, 0.0)));
        }
        let a = toy_anomaly_score(&walking(3.0, 0.0), &stats);
        let b = toy_anomaly_score(&walking(3.0, 250.0), &stats);
        assert!((a - b).abs() < 1e-9);
    }
}
