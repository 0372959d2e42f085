use std::fs;
use std::io;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde_json::Value;

use super::analysis::{analyze, AnalysisResult};
use super::gallery::{Gallery, GalleryConfig};
use super::protocol::{Ack, AckStatus, Envelope, Payload};
use super::store::{Store, StoreResult};
use crate::model::{CameraId, Nanos, NANOS_PER_SEC};
use crate::pipeline::{GlobalSink, SinkError};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub accepted: u64,
    pub duplicates: u64,
    pub rejected: u64,
    pub features: u64,
}

impl IngestStats {
    fn count(&mut self, ack: &Ack) {
        match ack.status {
            AckStatus::Ok => self.accepted += 1,
            AckStatus::Duplicate => self.duplicates += 1,
            AckStatus::Rejected => self.rejected += 1,
        }
    }
}

/// One row of the `features` table.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub camera_id: CameraId,
    pub local_id: u64,
    pub capture_time: Nanos,
    pub global_id: u64,
}

/// Gallery plus store: everything the global node keeps.
pub struct GlobalNode {
    store: Store,
    gallery: Gallery,
    stats: IngestStats,
}

impl GlobalNode {
    /// Wraps `store`, reloading gallery entries that are still inside λ₅.
    pub fn new(store: Store, config: GalleryConfig) -> StoreResult<Self> {
        let mut gallery = Gallery::new(config);
        gallery.reserve_ids(store.max_global_id()? + 1);
        let latest: Option<i64> = store.connection().query_row("SELECT MAX(capture_time) FROM features", [], |r| r.get(0))?;
        if let Some(latest) = latest {
            let horizon = (gallery.config().lambda5_s * NANOS_PER_SEC) as u64;
            for (gid, f) in store.recent_features((latest as u64).saturating_sub(horizon))? {
                let t = f.capture_time;
                gallery.restore(gid, f, t);
            }
        }
        Ok(Self { store, gallery, stats: IngestStats::default() })
    }

    pub fn in_memory(config: GalleryConfig) -> StoreResult<Self> {
        Self::new(Store::in_memory()?, config)
    }

    pub fn open(path: impl AsRef<Path>, config: GalleryConfig) -> StoreResult<Self> {
        Self::new(Store::open(path)?, config)
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn gallery(&self) -> &Gallery {
        &self.gallery
    }

    pub fn stats(&self) -> IngestStats {
        self.stats
    }

    fn reject(&mut self, received_at: Nanos, ids: Option<(CameraId, u64)>, reason: String) -> Ack {
        log::warn!("rejected message {ids:?}: {reason}");
        if let Err(e) = self.store.audit(received_at, ids.as_ref(), &reason) {
            log::error!("audit write failed: {e}");
        }
        Ack::rejected(ids, reason)
    }

    /// Validates, stores and (for features) matches one message.
    pub fn ingest(&mut self, env: &Envelope, received_at: Nanos) -> Ack {
        let ack = self.ingest_inner(env, received_at);
        self.stats.count(&ack);
        ack
    }

    fn ingest_inner(&mut self, env: &Envelope, received_at: Nanos) -> Ack {
        let ids = Some((env.camera_id.clone(), env.seq));
        match self.store.has_event(&env.camera_id, env.seq) {
            Ok(true) => return Ack::duplicate(env),
            Ok(false) => {}
            Err(e) => return self.reject(received_at, ids, format!("store: {e}")),
        }
        let payload = match env.decode(self.gallery.config().feature_dim) {
            Ok(p) => p,
            Err(e) => return self.reject(received_at, ids, e.to_string()),
        };
        let outcome = match &payload {
            Payload::Feature(f) => match self.gallery.match_feature(f, f.capture_time) {
                Ok(m) => Some(m),
                Err(e) => return self.reject(received_at, ids, e.to_string()),
            },
            _ => None,
        };
        let write = (|| -> StoreResult<()> {
            let tx = self.store.begin()?;
            let event_id = Store::insert_event(&tx, env, received_at)?;
            if let (Payload::Feature(f), Some(m)) = (&payload, outcome) {
                Store::insert_feature(&tx, event_id, f, m.global_id)?;
            }
            tx.commit()
        })();
        match write {
            Ok(()) => {
                if outcome.is_some() {
                    self.stats.features += 1;
                }
                Ack::ok(env)
            }
            Err(e) => self.reject(received_at, ids, format!("store: {e}")),
        }
    }

    pub fn ingest_line(&mut self, line: &str, received_at: Nanos) -> Ack {
        let ack = match Envelope::parse_line(line) {
            Ok(env) => return self.ingest(&env, received_at),
            Err((ids, e)) => self.reject(received_at, ids, e.to_string()),
        };
        self.stats.count(&ack);
        ack
    }

    /// Ingests every `*.ndjson` (one envelope per line) and `*.json` (one
    /// envelope or an array of them) file in `dir`, in file-name order.
    pub fn ingest_dir(&mut self, dir: impl AsRef<Path>, received_at: Nanos) -> io::Result<IngestStats> {
        let before = self.stats;
        let mut files: Vec<_> = fs::read_dir(dir)?
            .filter_map(Result::ok)
            .map(|e| e.path())
            .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("ndjson" | "json")))
            .collect();
        files.sort();
        for path in files {
            let text = fs::read_to_string(&path)?;
            if path.extension().is_some_and(|e| e == "ndjson") {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    self.ingest_line(line, received_at);
                }
                continue;
            }
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Array(items)) => {
                    for item in items {
                        self.ingest_line(&item.to_string(), received_at);
                    }
                }
                Ok(v) => {
                    self.ingest_line(&v.to_string(), received_at);
                }
                Err(e) => {
                    let ack = self.reject(received_at, None, format!("{}: {e}", path.display()));
                    self.stats.count(&ack);
                }
            }
        }
        let after = self.stats;
        Ok(IngestStats {
            accepted: after.accepted - before.accepted,
            duplicates: after.duplicates - before.duplicates,
            rejected: after.rejected - before.rejected,
            features: after.features - before.features,
        })
    }

    pub fn assignments(&self) -> StoreResult<Vec<Assignment>> {
        let mut stmt =
            self.store.connection().prepare("SELECT camera_id, local_id, capture_time, global_id FROM features ORDER BY event_id")?;
        let rows = stmt.query_map([], |r| {
            Ok(Assignment {
                camera_id: CameraId::new(r.get::<_, String>(0)?),
                local_id: r.get::<_, i64>(1)? as u64,
                capture_time: r.get::<_, i64>(2)? as u64,
                global_id: r.get::<_, i64>(3)? as u64,
            })
        })?;
        rows.collect()
    }

    /// Runs the analyses over `[start, end)` and records the result.
    pub fn analyze(&self, start: Nanos, end: Nanos, bucket_s: f64, created_at: Nanos) -> StoreResult<AnalysisResult> {
        let result = analyze(self.store.connection(), start, end, bucket_s)?;
        let value = serde_json::to_value(&result).expect("analysis serializes");
        self.store.save_analysis(created_at, start, end, &value)?;
        Ok(result)
    }
}

/// An in-process global node shared by several local nodes.
#[derive(Clone)]
pub struct SharedNode(pub Arc<Mutex<GlobalNode>>);

impl SharedNode {
    pub fn new(node: GlobalNode) -> Self {
        Self(Arc::new(Mutex::new(node)))
    }

    pub fn lock(&self) -> std::sync::MutexGuard<'_, GlobalNode> {
        self.0.lock().expect("global node poisoned")
    }
}

impl GlobalSink for SharedNode {
    /// Receipt time is the send time, which keeps deterministic runs reproducible.
    fn deliver(&mut self, envelope: &Envelope) -> Result<(), SinkError> {
        let ack = self.lock().ingest(envelope, envelope.sent_at);
        match ack.status {
            AckStatus::Ok | AckStatus::Duplicate => Ok(()),
            AckStatus::Rejected => Err(SinkError::Rejected { seq: envelope.seq, reason: ack.reason.unwrap_or_default() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global::protocol::MessageKind;
    use crate::model::FeatureRecord;
    use serde_json::json;

    fn node() -> GlobalNode {
        GlobalNode::in_memory(GalleryConfig { feature_dim: Some(3), ..GalleryConfig::default() }).unwrap()
    }

    fn feature(cam: &str, seq: u64, v: [f32; 3], t: Nanos) -> Envelope {
        let f = FeatureRecord::from_raw(v.to_vec(), CameraId::new(cam), seq, t, 0.9).unwrap();
        Envelope::wrap(CameraId::new(cam), seq, &Payload::Feature(f), t)
    }

    #[test]
    fn valid_feature_is_persisted_and_matched() {
        let mut n = node();
        assert_eq!(n.ingest(&feature("a", 1, [1.0, 0.0, 0.0], 0), 1).status, AckStatus::Ok);
        assert_eq!(n.ingest(&feature("b", 1, [1.0, 0.05, 0.0], 5), 6).status, AckStatus::Ok);
        let gids: Vec<u64> = n.assignments().unwrap().iter().map(|a| a.global_id).collect();
        assert_eq!(gids, vec![1, 1]);
        assert_eq!(n.store().count("features").unwrap(), 2);
    }

    #[test]
    fn duplicates_are_not_inserted_twice() {
        let mut n = node();
        let env = feature("a", 1, [1.0, 0.0, 0.0], 0);
        n.ingest(&env, 0);
        assert_eq!(n.ingest(&env, 1).status, AckStatus::Duplicate);
        assert_eq!(n.store().count("events").unwrap(), 1);
        assert_eq!(n.gallery().len(), 1);
    }

    #[test]
    fn blob_is_rejected_and_audited() {
        let mut n = node();
        let line = json!({"camera_id": "a", "seq": 3, "kind": "task_event", "payload": {"thumbnail": [1, 2]}, "sent_at": 0}).to_string();
        assert_eq!(n.ingest_line(&line, 9).status, AckStatus::Rejected);
        assert_eq!(n.store().count("events").unwrap(), 0);
        assert_eq!(n.store().count("audit").unwrap(), 1);
        assert!(n.store().privacy_audit().unwrap().is_ok());
    }

    #[test]
    fn wrong_length_is_rejected() {
        let mut n = node();
        let f = FeatureRecord::from_raw(vec![1.0, 0.0], CameraId::new("a"), 1, 0, 0.9).unwrap();
        let env = Envelope::wrap(CameraId::new("a"), 1, &Payload::Feature(f), 0);
        let ack = n.ingest(&env, 0);
        assert_eq!(ack.status, AckStatus::Rejected);
        assert!(ack.reason.unwrap().contains("length"));
    }

    #[test]
    fn reopen_restores_gallery_and_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.db");
        let cfg = GalleryConfig { feature_dim: Some(3), ..GalleryConfig::default() };
        {
            let mut n = GlobalNode::open(&path, cfg.clone()).unwrap();
            n.ingest(&feature("a", 1, [1.0, 0.0, 0.0], 0), 0);
            n.ingest(&feature("a", 2, [0.0, 1.0, 0.0], 0), 0);
        }
        let mut n = GlobalNode::open(&path, cfg).unwrap();
        assert_eq!(n.gallery().len(), 2);
        n.ingest(&feature("b", 1, [0.0, 0.0, 1.0], 10), 10);
        n.ingest(&feature("b", 2, [0.0, 1.0, 0.0], 10), 10);
        let gids: Vec<u64> = n.assignments().unwrap().iter().map(|a| a.global_id).collect();
        assert_eq!(gids, vec![1, 2, 3, 2]);
    }

    #[test]
    fn file_drop_reads_sorted_files() {
        let dir = tempfile::tempdir().unwrap();
        let hb = |seq: u64| Envelope::new(CameraId::new("a"), seq, MessageKind::Heartbeat, json!({"frames_processed": seq}), 0);
        fs::write(dir.path().join("b.ndjson"), hb(2).to_line() + &hb(3).to_line()).unwrap();
        fs::write(dir.path().join("a.json"), serde_json::to_string(&vec![hb(1), hb(2)]).unwrap()).unwrap();
        fs::write(dir.path().join("c.txt"), "ignored").unwrap();
        let mut n = node();
        let stats = n.ingest_dir(dir.path(), 0).unwrap();
        assert_eq!(stats, IngestStats { accepted: 3, duplicates: 1, rejected: 0, features: 0 });
    }
}
