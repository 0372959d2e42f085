use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::model::{cosine, iou, normalize, BoundingBox, CameraId, Frame, Keypoint, PoseSkeleton, KEYPOINT_COUNT, NANOS_PER_SEC};

/// Crowd-density presets, labelled in detections per second.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityPreset {
    Normal,
    Heavy,
    Extreme,
}

impl DensityPreset {
    pub const ALL: [DensityPreset; 3] = [DensityPreset::Normal, DensityPreset::Heavy, DensityPreset::Extreme];

    pub fn detections_per_second(self) -> f64 {
        match self {
            DensityPreset::Normal => 70.0,
            DensityPreset::Heavy => 216.0,
            DensityPreset::Extreme => 744.0,
        }
    }

    /// Persons per frame at `fps`.
    pub fn persons_per_frame(self, fps: f64) -> f64 {
        self.detections_per_second() / fps
    }

    pub fn name(self) -> &'static str {
        match self {
            DensityPreset::Normal => "normal",
            DensityPreset::Heavy => "heavy",
            DensityPreset::Extreme => "extreme",
        }
    }
}

impl std::str::FromStr for DensityPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(DensityPreset::Normal),
            "heavy" => Ok(DensityPreset::Heavy),
            "extreme" => Ok(DensityPreset::Extreme),
            other => Err(format!("unknown density preset {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionModel {
    /// Walking speed range, px/frame.
    pub speed_min: f64,
    pub speed_max: f64,
    pub height_min: f64,
    pub height_max: f64,
    /// Box width / height.
    pub aspect: f64,
    /// Frames a person stays in view.
    pub lifespan_min: u64,
    pub lifespan_max: u64,
}

impl Default for MotionModel {
    fn default() -> Self {
        Self { speed_min: 0.5, speed_max: 2.5, height_min: 110.0, height_max: 200.0, aspect: 0.41, lifespan_min: 300, lifespan_max: 900 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScoreDistribution {
    TruncatedNormal { mean: f64, sigma: f64 },
    Uniform { low: f64, high: f64 },
}

impl ScoreDistribution {
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            ScoreDistribution::TruncatedNormal { mean, sigma } => {
                for _ in 0..64 {
                    let z: f64 = rng.sample(StandardNormal);
                    let s = mean + sigma * z;
                    if (0.0..=1.0).contains(&s) {
                        return s;
                    }
                }
                mean.clamp(0.0, 1.0)
            }
            ScoreDistribution::Uniform { low, high } => {
                if high > low {
                    rng.random_range(low..high)
                } else {
                    low
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// Per-coordinate Gaussian jitter of detected boxes, px.
    pub jitter_sigma: f64,
    pub miss_rate: f64,
    /// Probability of one false-positive person box per frame.
    pub false_positive_rate: f64,
    pub person_score: ScoreDistribution,
    pub false_positive_score: ScoreDistribution,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            jitter_sigma: 1.5,
            miss_rate: 0.01,
            false_positive_rate: 0.02,
            person_score: ScoreDistribution::TruncatedNormal { mean: 0.85, sigma: 0.1 },
            false_positive_score: ScoreDistribution::Uniform { low: 0.1, high: 0.5 },
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { jitter_sigma: 0.0, miss_rate: 0.0, false_positive_rate: 0.0, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseModel {
    pub confidence_mean: f64,
    pub confidence_sigma: f64,
    /// Confidence loss at full overlap with another person.
    pub occlusion_penalty: f64,
}

impl Default for PoseModel {
    fn default() -> Self {
        Self { confidence_mean: 0.85, confidence_sigma: 0.08, occlusion_penalty: 0.6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureModel {
    pub dim: usize,
    /// Per-dimension Gaussian perturbation added before re-normalizing.
    pub noise: f64,
    /// Identity features are redrawn until every pair is at most this similar.
    pub max_identity_cosine: f64,
}

impl Default for FeatureModel {
    fn default() -> Self {
        Self { dim: crate::model::DEFAULT_FEATURE_DIM, noise: 0.01, max_identity_cosine: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub camera_id: String,
    pub duration_frames: u64,
    pub fps: f64,
    /// Mean persons per frame.
    pub density: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub motion: MotionModel,
    pub noise: NoiseModel,
    pub pose: PoseModel,
    pub features: FeatureModel,
    /// Size of the identity pool; `None` gives every appearance a fresh identity.
    pub identity_count: Option<u32>,
    /// Static non-person objects in view.
    pub other_objects: u32,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            camera_id: "cam-0".to_string(),
            duration_frames: 900,
            fps: 30.0,
            density: DensityPreset::Normal.persons_per_frame(30.0),
            image_width: 1920.0,
            image_height: 1080.0,
            motion: MotionModel::default(),
            noise: NoiseModel::default(),
            pose: PoseModel::default(),
            features: FeatureModel::default(),
            identity_count: None,
            other_objects: 1,
        }
    }
}

impl ScenarioSpec {
    pub fn preset(preset: DensityPreset, seed: u64, duration_frames: u64) -> Self {
        let fps = 30.0;
        Self { seed, duration_frames, fps, density: preset.persons_per_frame(fps), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let rate = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(SynthError::InvalidSpec(format!("{name} = {v} must be in [0, 1)")))
            }
        };
        rate("miss_rate", self.noise.miss_rate)?;
        rate("false_positive_rate", self.noise.false_positive_rate)?;
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("density {} must be >= 0", self.density)));
        }
        if !(self.fps > 0.0) {
            return Err(SynthError::InvalidSpec("fps must be positive".into()));
        }
        let m = &self.motion;
        if !(m.speed_min > 0.0 && m.speed_max >= m.speed_min)
            || !(m.height_min > 0.0 && m.height_max >= m.height_min)
            || m.lifespan_min == 0
            || m.lifespan_max < m.lifespan_min
            || !(m.aspect > 0.0)
        {
            return Err(SynthError::InvalidSpec("motion model ranges are inconsistent".into()));
        }
        if self.features.dim == 0 {
            return Err(SynthError::InvalidSpec("feature dim must be positive".into()));
        }
        let max_w = m.height_max * m.aspect;
        if max_w >= self.image_width || m.height_max >= self.image_height {
            return Err(SynthError::Infeasible("person boxes do not fit the image".into()));
        }
        let mean_h = 0.5 * (m.height_min + m.height_max);
        let covered = self.density * mean_h * mean_h * m.aspect;
        if covered > 0.5 * self.image_width * self.image_height {
            return Err(SynthError::Infeasible(format!(
                "density {:.1} persons/frame covers more than half of a {}x{} image",
                self.density, self.image_width, self.image_height
            )));
        }
        if let Some(k) = self.identity_count {
            if (k as f64) < self.density.ceil() {
                return Err(SynthError::Infeasible(format!("identity_count {k} is below the concurrent crowd size")));
            }
        }
        Ok(())
    }

    pub fn frame_time(&self, frame_index: u64) -> u64 {
        (frame_index as f64 * NANOS_PER_SEC / self.fps).round() as u64
    }
}

/// Stable 64-bit mixing of a seed with stream tags.
pub(crate) fn mix(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        // splitmix64 finalizer
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

pub(crate) fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

pub(crate) mod tags {
    pub const SLOT: u64 = 1;
    pub const IDENTITY: u64 = 2;
    pub const POSE: u64 = 3;
    pub const DETECT: u64 = 4;
    pub const FEATURE: u64 = 5;
    pub const FEATURE_NOISE: u64 = 6;
    pub const OBJECTS: u64 = 7;
    pub const FALSE_POSE: u64 = 8;
}

#[derive(Debug, Clone)]
struct Segment {
    start: u64,
    x0: f64,
    y0: f64,
    vx: f64,
    vy: f64,
}

/// One continuous stay of an identity in view.
#[derive(Debug, Clone)]
pub struct Appearance {
    pub identity: u32,
    pub entry: u64,
    /// Exclusive.
    pub exit: u64,
    pub width: f64,
    pub height: f64,
    speed: f64,
    segments: Vec<Segment>,
}

impl Appearance {
    fn center_at(&self, f: u64) -> (f64, f64) {
        let i = self.segments.partition_point(|s| s.start <= f).saturating_sub(1);
        let s = &self.segments[i];
        let dt = (f - s.start) as f64;
        (s.x0 + s.vx * dt, s.y0 + s.vy * dt)
    }

    pub fn box_at(&self, f: u64) -> BoundingBox {
        let (cx, cy) = self.center_at(f);
        BoundingBox {
            x_min: cx - self.width / 2.0,
            y_min: cy - self.height / 2.0,
            x_max: cx + self.width / 2.0,
            y_max: cy + self.height / 2.0,
        }
    }

    pub fn is_present(&self, f: u64) -> bool {
        (self.entry..self.exit).contains(&f)
    }
}

#[derive(Debug, Clone)]
pub struct GtPerson {
    pub identity: u32,
    pub bbox: BoundingBox,
    pub pose: PoseSkeleton,
}

#[derive(Debug, Clone)]
pub struct GroundTruthFrame {
    pub frame_index: u64,
    pub persons: Vec<GtPerson>,
    pub objects: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdentitySpan {
    pub identity: u32,
    pub entry: u64,
    pub exit: u64,
}

/// Complete ground truth of a generated scenario. Frames are computed on
/// demand and are pure functions of the `ScenarioSpec`.
#[derive(Debug)]
pub struct GroundTruth {
    spec: ScenarioSpec,
    appearances: Vec<Appearance>,
    /// Appearance indices per slot, ordered by entry.
    slots: Vec<Vec<usize>>,
    objects: Vec<BoundingBox>,
    identity_total: u32,
    features: OnceLock<Vec<Vec<f32>>>,
}

// COCO-17 template in box-relative coordinates.
const TEMPLATE: [(f64, f64); KEYPOINT_COUNT] = [
    (0.50, 0.07),
    (0.46, 0.05),
    (0.54, 0.05),
    (0.41, 0.07),
    (0.59, 0.07),
    (0.30, 0.21),
    (0.70, 0.21),
    (0.23, 0.37),
    (0.77, 0.37),
    (0.20, 0.51),
    (0.80, 0.51),
    (0.37, 0.54),
    (0.63, 0.54),
    (0.37, 0.74),
    (0.63, 0.74),
    (0.37, 0.95),
    (0.63, 0.95),
];

impl GroundTruth {
    pub fn spec(&self) -> &ScenarioSpec {
        &self.spec
    }

    pub fn camera_id(&self) -> CameraId {
        CameraId::new(&self.spec.camera_id)
    }

    pub fn duration_frames(&self) -> u64 {
        self.spec.duration_frames
    }

    pub fn appearances(&self) -> &[Appearance] {
        &self.appearances
    }

    pub fn identity_count(&self) -> u32 {
        self.identity_total
    }

    pub fn identity_spans(&self) -> Vec<IdentitySpan> {
        let mut spans: Vec<IdentitySpan> =
            self.appearances.iter().map(|a| IdentitySpan { identity: a.identity, entry: a.entry, exit: a.exit }).collect();
        spans.sort_by_key(|s| (s.entry, s.identity));
        spans
    }

    /// Indices of appearances present in frame `f`, in slot order.
    fn active(&self, f: u64) -> impl Iterator<Item = &Appearance> + '_ {
        self.slots.iter().filter_map(move |slot| {
            let i = slot.partition_point(|&a| self.appearances[a].entry <= f);
            if i == 0 {
                return None;
            }
            let a = &self.appearances[slot[i - 1]];
            a.is_present(f).then_some(a)
        })
    }

    pub fn person_count(&self, f: u64) -> usize {
        self.active(f).count()
    }

    pub fn frame(&self, f: u64) -> GroundTruthFrame {
        let active: Vec<&Appearance> = self.active(f).collect();
        let boxes: Vec<BoundingBox> = active.iter().map(|a| a.box_at(f)).collect();
        let mut rng = rng_for(&[self.spec.seed, tags::POSE, f]);
        let pm = &self.spec.pose;
        let persons = active
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let b = boxes[i];
                let overlap = boxes.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, o)| iou(&b, o)).fold(0.0, f64::max);
                let phase = a.speed * (f - a.entry) as f64 / (0.5 * a.height) * std::f64::consts::TAU;
                let swing = phase.sin() * 0.08;
                let kps: [Keypoint; KEYPOINT_COUNT] = std::array::from_fn(|k| {
                    let (tx, ty) = TEMPLATE[k];
                    let dx = match k {
                        7 | 9 | 14 | 16 => swing,
                        8 | 10 | 13 | 15 => -swing,
                        _ => 0.0,
                    };
                    let z: f64 = rng.sample(StandardNormal);
                    let c = (pm.confidence_mean + pm.confidence_sigma * z) * (1.0 - pm.occlusion_penalty * (4.0 * overlap).min(1.0));
                    Keypoint { x: b.x_min + (tx + dx) * b.width(), y: b.y_min + ty * b.height(), confidence: c.clamp(0.0, 1.0) }
                });
                GtPerson { identity: a.identity, bbox: b, pose: PoseSkeleton::new(kps).expect("clamped") }
            })
            .collect();
        GroundTruthFrame { frame_index: f, persons, objects: self.objects.clone() }
    }

    pub fn frames(&self) -> impl Iterator<Item = GroundTruthFrame> + '_ {
        (0..self.spec.duration_frames).map(|f| self.frame(f))
    }

    /// Ground-truth unit feature per identity; pairwise cosine is at most
    /// `features.max_identity_cosine`.
    pub fn identity_features(&self) -> &[Vec<f32>] {
        self.features.get_or_init(|| build_identity_features(&self.spec, self.identity_total))
    }

    pub fn identity_feature(&self, identity: u32) -> &[f32] {
        &self.identity_features()[identity as usize]
    }

    /// Ground truth in MOT text rows (identities are 1-based there).
    pub fn mot_rows(&self) -> Vec<crate::tracker::mot::MotRow> {
        let mut rows = Vec::new();
        for f in 0..self.spec.duration_frames {
            for a in self.active(f) {
                rows.push(crate::tracker::mot::MotRow { frame_index: f, id: a.identity as i64 + 1, bbox: a.box_at(f), score: 1.0 });
            }
        }
        rows
    }
}

fn build_identity_features(spec: &ScenarioSpec, n: u32) -> Vec<Vec<f32>> {
    let dim = spec.features.dim;
    let max_cos = spec.features.max_identity_cosine;
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(n as usize);
    for id in 0..n {
        let mut attempt = 0u64;
        loop {
            let mut rng = rng_for(&[spec.seed, tags::IDENTITY, id as u64, attempt]);
            let mut v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
            normalize(&mut v).expect("gaussian draw is non-zero");
            if out.iter().all(|o| cosine(o, &v) <= max_cos) || attempt >= 1000 {
                out.push(v);
                break;
            }
            attempt += 1;
        }
    }
    out
}

fn build_appearance(spec: &ScenarioSpec, rng: &mut ChaCha8Rng, entry: u64, exit: u64) -> Appearance {
    let m = &spec.motion;
    let height = rng.random_range(m.height_min..=m.height_max);
    let width = height * m.aspect;
    let speed = rng.random_range(m.speed_min..=m.speed_max);
    let (lo_x, hi_x) = (width / 2.0, spec.image_width - width / 2.0);
    let (lo_y, hi_y) = (height / 2.0, spec.image_height - height / 2.0);
    let mut pos = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
    let mut segments = Vec::new();
    let mut t = entry;
    while t < exit {
        let target = (rng.random_range(lo_x..hi_x), rng.random_range(lo_y..hi_y));
        let (dx, dy) = (target.0 - pos.0, target.1 - pos.1);
        let frames = ((dx * dx + dy * dy).sqrt() / speed).ceil().max(1.0);
        segments.push(Segment { start: t, x0: pos.0, y0: pos.1, vx: dx / frames, vy: dy / frames });
        t += frames as u64;
        pos = (reflect(target.0, lo_x, hi_x), reflect(target.1, lo_y, hi_y));
    }
    Appearance { identity: 0, entry, exit, width, height, speed, segments }
}

/// Mirrors a coordinate back into `[lo, hi]`.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        (2.0 * lo - v).min(hi)
    } else if v > hi {
        (2.0 * hi - v).max(lo)
    } else {
        v
    }
}

fn lifespan(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> u64 {
    rng.random_range(spec.motion.lifespan_min..=spec.motion.lifespan_max)
}

/// Builds the ground-truth world for `spec`. Deterministic in `spec.seed`.
pub fn generate_world(spec: &ScenarioSpec) -> Result<GroundTruth, SynthError> {
    spec.validate()?;
    let total = spec.duration_frames;
    let full_slots = spec.density.floor() as usize;
    let frac = spec.density - spec.density.floor();
    let slot_count = full_slots + usize::from(frac > 1e-9);

    let mut appearances = Vec::new();
    let mut slots = Vec::with_capacity(slot_count);
    for slot in 0..slot_count {
        let mut rng = rng_for(&[spec.seed, tags::SLOT, slot as u64]);
        let mut members = Vec::new();
        if slot < full_slots {
            let mut t = 0;
            while t < total {
                let l = lifespan(spec, &mut rng);
                members.push(appearances.len());
                appearances.push(build_appearance(spec, &mut rng, t, (t + l).min(total)));
                t += l;
            }
        } else {
            // present for a fraction `frac` of the frames: each stay is followed
            // by a gap that brings cumulative presence back to frac * t
            let target = (frac * total as f64).round() as u64;
            let (mut t, mut present) = (0u64, 0u64);
            loop {
                let l = lifespan(spec, &mut rng).min(total - t).min(target - present);
                if l == 0 {
                    break;
                }
                members.push(appearances.len());
                appearances.push(build_appearance(spec, &mut rng, t, t + l));
                present += l;
                t = (t + l).max((present as f64 / frac).ceil() as u64);
                if t >= total {
                    break;
                }
            }
        }
        slots.push(members);
    }

    let identity_total = assign_identities(spec, &mut appearances)?;

    let mut orng = rng_for(&[spec.seed, tags::OBJECTS]);
    let objects = (0..spec.other_objects)
        .map(|_| {
            let (w, h) = (orng.random_range(150.0..300.0), orng.random_range(80.0..150.0));
            let x = orng.random_range(0.0..spec.image_width - w);
            let y = orng.random_range(0.0..spec.image_height - h);
            BoundingBox { x_min: x, y_min: y, x_max: x + w, y_max: y + h }
        })
        .collect();

    Ok(GroundTruth { spec: spec.clone(), appearances, slots, objects, identity_total, features: OnceLock::new() })
}

fn assign_identities(spec: &ScenarioSpec, appearances: &mut [Appearance]) -> Result<u32, SynthError> {
    let mut order: Vec<usize> = (0..appearances.len()).collect();
    order.sort_by_key(|&i| (appearances[i].entry, i));
    match spec.identity_count {
        None => {
            for (id, &i) in order.iter().enumerate() {
                appearances[i].identity = id as u32;
            }
            Ok(appearances.len() as u32)
        }
        Some(k) => {
            let mut busy_until = vec![0u64; k as usize];
            let mut rng = rng_for(&[spec.seed, tags::IDENTITY, u64::MAX]);
            for &i in &order {
                let entry = appearances[i].entry;
                let free: Vec<usize> = (0..k as usize).filter(|&id| busy_until[id] <= entry).collect();
                if free.is_empty() {
                    return Err(SynthError::Infeasible(format!("identity_count {k} too small for concurrent appearances")));
                }
                let id = free[rng.random_range(0..free.len())];
                busy_until[id] = appearances[i].exit;
                appearances[i].identity = id as u32;
            }
            Ok(k)
        }
    }
}

/// Frame source for a generated scenario; frames carry no pixels.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    camera_id: CameraId,
    spec_fps: f64,
    next: u64,
    total: u64,
}

impl SyntheticSource {
    pub fn new(gt: &GroundTruth) -> Self {
        Self { camera_id: gt.camera_id(), spec_fps: gt.spec.fps, next: 0, total: gt.spec.duration_frames }
    }
}

impl Iterator for SyntheticSource {
    type Item = Frame;

    fn next(&mut self) -> Option<Frame> {
        if self.next >= self.total {
            return None;
        }
        let f = self.next;
        self.next += 1;
        let t = (f as f64 * NANOS_PER_SEC / self.spec_fps).round() as u64;
        Some(Frame::synthetic(self.camera_id.clone(), f, t))
    }
}

/// Generates a scenario: a pixel-free frame stream plus its ground truth.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(SyntheticSource, Arc<GroundTruth>), SynthError> {
    let gt = Arc::new(generate_world(spec)?);
    Ok((SyntheticSource::new(&gt), gt))
}
