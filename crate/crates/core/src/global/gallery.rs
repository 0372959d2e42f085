use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{cosine, normalize, FeatureRecord, Nanos, NANOS_PER_SEC};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GalleryMode {
    /// Every matched feature is added as its own entry.
    Append,
    /// One running-mean entry per global ID.
    Centroid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GalleryConfig {
    /// Minimum cosine similarity to adopt an existing global ID.
    pub tau_id: f64,
    /// Matching period λ₅, seconds.
    pub lambda5_s: f64,
    pub mode: GalleryMode,
    /// Required embedding length; `None` accepts the first length seen.
    pub feature_dim: Option<usize>,
}

impl Default for GalleryConfig {
    fn default() -> Self {
        Self { tau_id: 0.7, lambda5_s: 3600.0, mode: GalleryMode::Append, feature_dim: Some(crate::model::DEFAULT_FEATURE_DIM) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry {
    pub global_id: u64,
    pub feature: FeatureRecord,
    pub inserted_at: Nanos,
    count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchOutcome {
    pub global_id: u64,
    /// Similarity to the adopted entry; `None` when a new ID was minted.
    pub similarity: Option<f64>,
}

impl MatchOutcome {
    pub fn is_new(&self) -> bool {
        self.similarity.is_none()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GalleryError {
    #[error("feature vector has length {got}, expected {expected}")]
    VectorLength { expected: usize, got: usize },
}

/// Temporal re-identification gallery. An entry takes part in matching
/// while `now - inserted_at <= λ₅`, with `now` the query's time.
#[derive(Debug, Clone)]
pub struct Gallery {
    config: GalleryConfig,
    entries: Vec<GalleryEntry>,
    next_id: u64,
    dim: Option<usize>,
    watermark: Nanos,
}

impl Gallery {
    pub fn new(config: GalleryConfig) -> Self {
        let dim = config.feature_dim;
        Self { config, entries: Vec::new(), next_id: 1, dim, watermark: 0 }
    }

    pub fn config(&self) -> &GalleryConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    /// Global IDs issued so far.
    pub fn issued(&self) -> u64 {
        self.next_id - 1
    }

    /// Puts back an entry read from the store, keeping ID issuance ahead of it.
    pub fn restore(&mut self, global_id: u64, feature: FeatureRecord, inserted_at: Nanos) {
        self.next_id = self.next_id.max(global_id + 1);
        self.dim.get_or_insert(feature.vector.len());
        self.watermark = self.watermark.max(inserted_at);
        self.entries.push(GalleryEntry { global_id, feature, inserted_at, count: 1 });
    }

    /// Starts minting IDs no lower than `next`.
    pub fn reserve_ids(&mut self, next: u64) {
        self.next_id = self.next_id.max(next);
    }

    fn lambda5_ns(&self) -> Nanos {
        (self.config.lambda5_s * NANOS_PER_SEC).round() as Nanos
    }

    fn live(&self, e: &GalleryEntry, now: Nanos) -> bool {
        now.saturating_sub(e.inserted_at) <= self.lambda5_ns()
    }

    /// Nearest live entry by cosine similarity; ties go to the lowest ID.
    pub fn nearest(&self, query: &[f32], now: Nanos) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for e in self.entries.iter().filter(|e| self.live(e, now)) {
            let s = cosine(query, &e.feature.vector);
            best = match best {
                Some((id, bs)) if bs > s || (bs == s && id <= e.global_id) => Some((id, bs)),
                _ => Some((e.global_id, s)),
            };
        }
        best
    }

    /// Assigns a global ID to `query` at time `now` and adds it to the gallery.
    pub fn match_feature(&mut self, query: &FeatureRecord, now: Nanos) -> Result<MatchOutcome, GalleryError> {
        let got = query.vector.len();
        match self.dim {
            Some(expected) if expected != got => return Err(GalleryError::VectorLength { expected, got }),
            Some(_) => {}
            None => self.dim = Some(got),
        }
        self.watermark = self.watermark.max(now);
        let horizon = self.lambda5_ns();
        let wm = self.watermark;
        self.entries.retain(|e| wm.saturating_sub(e.inserted_at) <= horizon);

        let outcome = match self.nearest(&query.vector, now) {
            Some((id, s)) if s >= self.config.tau_id => MatchOutcome { global_id: id, similarity: Some(s) },
            _ => {
                let id = self.next_id;
                self.next_id += 1;
                MatchOutcome { global_id: id, similarity: None }
            }
        };
        match self.config.mode {
            GalleryMode::Append => {
                self.entries.push(GalleryEntry { global_id: outcome.global_id, feature: query.clone(), inserted_at: now, count: 1 })
            }
            GalleryMode::Centroid => match self.entries.iter_mut().find(|e| e.global_id == outcome.global_id) {
                Some(e) => {
                    let n = e.count as f32;
                    for (c, q) in e.feature.vector.iter_mut().zip(&query.vector) {
                        *c = (*c * n + q) / (n + 1.0);
                    }
                    // a mean of unit vectors pointing the same way is never zero
                    normalize(&mut e.feature.vector).expect("centroid is non-zero");
                    e.count += 1;
                    e.inserted_at = e.inserted_at.max(now);
                }
                None => {
                    self.entries.push(GalleryEntry { global_id: outcome.global_id, feature: query.clone(), inserted_at: now, count: 1 })
                }
            },
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CameraId;

    const HOUR: Nanos = 3_600_000_000_000;
    const SEC: Nanos = 1_000_000_000;

    fn feat(v: Vec<f32>, t: Nanos) -> FeatureRecord {
        FeatureRecord::from_raw(v, CameraId::new("a"), 1, t, 0.9).unwrap()
    }

    fn gallery() -> Gallery {
        Gallery::new(GalleryConfig { feature_dim: None, ..GalleryConfig::default() })
    }

    #[test]
    fn first_query_gets_id_one() {
        assert_eq!(gallery().match_feature(&feat(vec![1.0, 0.0], 0), 0).unwrap(), MatchOutcome { global_id: 1, similarity: None });
    }

    #[test]
    fn lambda5_boundary() {
        let t0 = 10 * SEC;
        let mut g = gallery();
        g.match_feature(&feat(vec![1.0, 0.0], t0), t0).unwrap();
        let hit = g.clone().match_feature(&feat(vec![1.0, 0.0], t0 + HOUR - SEC), t0 + HOUR - SEC).unwrap();
        assert_eq!(hit.global_id, 1);
        let miss = g.match_feature(&feat(vec![1.0, 0.0], t0 + HOUR + SEC), t0 + HOUR + SEC).unwrap();
        assert_eq!(miss.global_id, 2);
    }

    #[test]
    fn expiry_reclaims_entries() {
        let mut g = gallery();
        for k in 0..100u64 {
            let t = k * 600 * SEC;
            g.match_feature(&feat(vec![1.0, k as f32], t), t).unwrap();
        }
        // one entry per 10 minutes: at most 7 fit in an hour (inclusive ends)
        assert!(g.len() <= 7, "{}", g.len());
    }

    #[test]
    fn dissimilar_queries_get_new_ids_and_ties_pick_lowest() {
        let mut g = gallery();
        assert_eq!(g.match_feature(&feat(vec![1.0, 0.0, 0.0], 0), 0).unwrap().global_id, 1);
        assert_eq!(g.match_feature(&feat(vec![0.0, 1.0, 0.0], 0), 0).unwrap().global_id, 2);
        assert_eq!(g.match_feature(&feat(vec![0.0, 0.0, 1.0], 0), 0).unwrap().global_id, 3);
        // equidistant from 1 and 2 at cosine 0.707
        let q = feat(vec![1.0, 1.0, 0.0], 0);
        assert_eq!(g.nearest(&q.vector, 0).unwrap().0, 1);
        assert_eq!(g.match_feature(&q, 0).unwrap().global_id, 1);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut g = Gallery::new(GalleryConfig::default());
        assert_eq!(g.match_feature(&feat(vec![1.0, 0.0], 0), 0), Err(GalleryError::VectorLength { expected: 512, got: 2 }));
    }

    #[test]
    fn centroid_mode_keeps_one_entry_per_id() {
        let mut g = Gallery::new(GalleryConfig { mode: GalleryMode::Centroid, feature_dim: None, ..GalleryConfig::default() });
        g.match_feature(&feat(vec![1.0, 0.1], 0), 0).unwrap();
        g.match_feature(&feat(vec![1.0, -0.1], 1), 1).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g.entries()[0].feature.vector[1]).abs() < 1e-6);
    }
}
