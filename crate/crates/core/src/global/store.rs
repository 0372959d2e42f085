//! SQLite persistence for the global node. Feature vectors live only inside
//! the event payload; the other tables hold IDs, times and counts.

use std::path::Path;

use rusqlite::{params, Connection, OpenFlags, OptionalExtension};
use serde_json::{json, Map, Value};

use super::privacy::{scan, PrivacyViolation};
use super::protocol::Envelope;
use crate::model::{CameraId, FeatureRecord, Nanos};

pub type StoreResult<T> = Result<T, rusqlite::Error>;

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS events (
    id INTEGER PRIMARY KEY,
    camera_id TEXT NOT NULL,
    seq INTEGER NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL,
    sent_at INTEGER NOT NULL,
    received_at INTEGER NOT NULL,
    UNIQUE (camera_id, seq)
);
CREATE TABLE IF NOT EXISTS features (
    event_id INTEGER PRIMARY KEY REFERENCES events(id),
    camera_id TEXT NOT NULL,
    local_id INTEGER NOT NULL,
    capture_time INTEGER NOT NULL,
    quality REAL NOT NULL,
    global_id INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS features_time ON features (capture_time);
CREATE TABLE IF NOT EXISTS identities (
    global_id INTEGER PRIMARY KEY,
    first_seen INTEGER NOT NULL,
    last_seen INTEGER NOT NULL,
    first_camera TEXT NOT NULL,
    sightings INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS analyses (
    id INTEGER PRIMARY KEY,
    created_at INTEGER NOT NULL,
    range_start INTEGER NOT NULL,
    range_end INTEGER NOT NULL,
    result TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS audit (
    id INTEGER PRIMARY KEY,
    received_at INTEGER NOT NULL,
    camera_id TEXT,
    seq INTEGER,
    reason TEXT NOT NULL
);
";

/// Tables in dump order.
pub const TABLES: [&str; 5] = ["events", "features", "identities", "analyses", "audit"];

fn sql_u64(v: u64) -> i64 {
    i64::try_from(v).unwrap_or(i64::MAX)
}

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: impl AsRef<Path>) -> StoreResult<Self> {
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "journal_mode", "WAL")?;
        conn.pragma_update(None, "synchronous", "NORMAL")?;
        Self::init(conn)
    }

    pub fn in_memory() -> StoreResult<Self> {
        Self::init(Connection::open_in_memory()?)
    }

    /// Read-only connection to an existing database file.
    pub fn open_read_only(path: impl AsRef<Path>) -> StoreResult<Self> {
        let conn = Connection::open_with_flags(path, OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX)?;
        Ok(Self { conn })
    }

    fn init(conn: Connection) -> StoreResult<Self> {
        conn.execute_batch(SCHEMA)?;
        Ok(Self { conn })
    }

    pub fn connection(&self) -> &Connection {
        &self.conn
    }

    pub fn has_event(&self, camera: &CameraId, seq: u64) -> StoreResult<bool> {
        self.conn
            .query_row("SELECT 1 FROM events WHERE camera_id = ?1 AND seq = ?2", params![camera.as_str(), sql_u64(seq)], |_| Ok(()))
            .optional()
            .map(|r| r.is_some())
    }

    pub fn begin(&mut self) -> StoreResult<rusqlite::Transaction<'_>> {
        self.conn.transaction()
    }

    pub fn insert_event(tx: &Connection, env: &Envelope, received_at: Nanos) -> StoreResult<i64> {
        tx.execute(
            "INSERT INTO events (camera_id, seq, kind, payload, sent_at, received_at) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![
                env.camera_id.as_str(),
                sql_u64(env.seq),
                env.kind.as_str(),
                env.payload.to_string(),
                sql_u64(env.sent_at),
                sql_u64(received_at)
            ],
        )?;
        Ok(tx.last_insert_rowid())
    }

    pub fn insert_feature(tx: &Connection, event_id: i64, f: &FeatureRecord, global_id: u64) -> StoreResult<()> {
        tx.execute(
            "INSERT INTO features (event_id, camera_id, local_id, capture_time, quality, global_id) VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![event_id, f.camera_id.as_str(), sql_u64(f.local_id), sql_u64(f.capture_time), f.quality, sql_u64(global_id)],
        )?;
        tx.execute(
            "INSERT INTO identities (global_id, first_seen, last_seen, first_camera, sightings) VALUES (?1, ?2, ?2, ?3, 1)
             ON CONFLICT (global_id) DO UPDATE SET
                first_seen = MIN(first_seen, excluded.first_seen),
                last_seen = MAX(last_seen, excluded.last_seen),
                sightings = sightings + 1",
            params![sql_u64(global_id), sql_u64(f.capture_time), f.camera_id.as_str()],
        )?;
        Ok(())
    }

    pub fn audit(&self, received_at: Nanos, ids: Option<&(CameraId, u64)>, reason: &str) -> StoreResult<()> {
        self.conn.execute(
            "INSERT INTO audit (received_at, camera_id, seq, reason) VALUES (?1, ?2, ?3, ?4)",
            params![sql_u64(received_at), ids.map(|(c, _)| c.as_str().to_owned()), ids.map(|(_, s)| sql_u64(*s)), reason],
        )?;
        Ok(())
    }

    pub fn save_analysis(&self, created_at: Nanos, range_start: Nanos, range_end: Nanos, result: &Value) -> StoreResult<i64> {
        self.conn.execute(
            "INSERT INTO analyses (created_at, range_start, range_end, result) VALUES (?1, ?2, ?3, ?4)",
            params![sql_u64(created_at), sql_u64(range_start), sql_u64(range_end), result.to_string()],
        )?;
        Ok(self.conn.last_insert_rowid())
    }

    pub fn count(&self, table: &str) -> StoreResult<u64> {
        assert!(TABLES.contains(&table), "unknown table {table}");
        self.conn.query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get::<_, i64>(0)).map(|n| n as u64)
    }

    /// Features still inside the matching period at `now`, oldest first.
    pub fn recent_features(&self, since: Nanos) -> StoreResult<Vec<(u64, FeatureRecord)>> {
        let mut stmt = self.conn.prepare(
            "SELECT f.global_id, e.payload FROM features f JOIN events e ON e.id = f.event_id
             WHERE f.capture_time >= ?1 ORDER BY f.capture_time, f.event_id",
        )?;
        let rows = stmt.query_map(params![sql_u64(since)], |r| Ok((r.get::<_, i64>(0)? as u64, r.get::<_, String>(1)?)))?;
        let mut out = Vec::new();
        for row in rows {
            let (gid, payload) = row?;
            match serde_json::from_str::<FeatureRecord>(&payload) {
                Ok(f) => out.push((gid, f)),
                Err(e) => log::warn!("skipping unreadable stored feature: {e}"),
            }
        }
        Ok(out)
    }

    pub fn max_global_id(&self) -> StoreResult<u64> {
        self.conn.query_row("SELECT COALESCE(MAX(global_id), 0) FROM identities", [], |r| r.get::<_, i64>(0)).map(|n| n as u64)
    }

    /// Every row of every table as JSON, for audits and debugging.
    pub fn dump_json(&self) -> StoreResult<Value> {
        let mut out = Map::new();
        for table in TABLES {
            let mut stmt = self.conn.prepare(&format!("SELECT * FROM {table} ORDER BY 1"))?;
            let names: Vec<String> = stmt.column_names().into_iter().map(str::to_owned).collect();
            let rows = stmt.query_map([], |r| {
                let mut obj = Map::new();
                for (i, name) in names.iter().enumerate() {
                    let v = match r.get_ref(i)? {
                        rusqlite::types::ValueRef::Null => Value::Null,
                        rusqlite::types::ValueRef::Integer(n) => json!(n),
                        rusqlite::types::ValueRef::Real(x) => json!(x),
                        rusqlite::types::ValueRef::Text(t) => {
                            let s = String::from_utf8_lossy(t);
                            // payloads are stored JSON; expand them so the dump is one document
                            if name == "payload" || name == "result" {
                                serde_json::from_str(&s).unwrap_or(Value::String(s.into_owned()))
                            } else {
                                Value::String(s.into_owned())
                            }
                        }
                        rusqlite::types::ValueRef::Blob(b) => json!({ "blob_bytes": b.len() }),
                    };
                    obj.insert(name.clone(), v);
                }
                Ok(Value::Object(obj))
            })?;
            out.insert(table.to_owned(), Value::Array(rows.collect::<StoreResult<Vec<_>>>()?));
        }
        Ok(Value::Object(out))
    }

    /// Runs the privacy scan over every dumped row.
    pub fn privacy_audit(&self) -> StoreResult<Result<(), (String, PrivacyViolation)>> {
        let dump = self.dump_json()?;
        for table in TABLES {
            for (i, row) in dump[table].as_array().into_iter().flatten().enumerate() {
                if let Err(v) = scan(row) {
                    return Ok(Err((format!("{table}[{i}]"), v)));
                }
            }
        }
        Ok(Ok(()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::global::protocol::{MessageKind, Payload};

    #[test]
    fn duplicate_seq_is_refused_by_the_schema() {
        let store = Store::in_memory().unwrap();
        let env = Envelope::new(CameraId::new("a"), 1, MessageKind::Heartbeat, json!({}), 0);
        Store::insert_event(store.connection(), &env, 5).unwrap();
        assert!(store.has_event(&CameraId::new("a"), 1).unwrap());
        assert!(Store::insert_event(store.connection(), &env, 6).is_err());
        assert_eq!(store.count("events").unwrap(), 1);
    }

    #[test]
    fn features_read_back_from_payloads() {
        let mut store = Store::in_memory().unwrap();
        let f = FeatureRecord::from_raw(vec![1.0, 2.0], CameraId::new("a"), 3, 100, 0.7).unwrap();
        let env = Envelope::wrap(CameraId::new("a"), 1, &Payload::Feature(f.clone()), 100);
        let tx = store.begin().unwrap();
        let id = Store::insert_event(&tx, &env, 101).unwrap();
        Store::insert_feature(&tx, id, &f, 9).unwrap();
        tx.commit().unwrap();
        assert_eq!(store.recent_features(0).unwrap(), vec![(9, f)]);
        assert!(store.recent_features(101).unwrap().is_empty());
        assert_eq!(store.max_global_id().unwrap(), 9);
        let dump = store.dump_json().unwrap();
        assert_eq!(dump["identities"][0]["sightings"], 1);
        assert!(store.privacy_audit().unwrap().is_ok());
    }
}
