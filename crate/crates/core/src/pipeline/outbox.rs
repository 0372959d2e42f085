use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::global::protocol::{Envelope, MessageKind};
use crate::model::{CameraId, Nanos};

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("link i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("global node rejected message {seq}: {reason}")]
    Rejected { seq: u64, reason: String },
    #[error("link closed")]
    Closed,
}

/// Where a local node's outbound messages end up.
pub trait GlobalSink: Send {
    fn deliver(&mut self, envelope: &Envelope) -> Result<(), SinkError>;
}

/// Discards everything.
#[derive(Debug, Default)]
pub struct NullSink {
    pub delivered: u64,
}

impl GlobalSink for NullSink {
    fn deliver(&mut self, _: &Envelope) -> Result<(), SinkError> {
        self.delivered += 1;
        Ok(())
    }
}

/// Keeps every envelope in a shared list.
#[derive(Debug, Clone, Default)]
pub struct RecordingSink {
    pub messages: Arc<Mutex<Vec<Envelope>>>,
}

impl RecordingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn take(&self) -> Vec<Envelope> {
        std::mem::take(&mut *self.messages.lock().expect("sink poisoned"))
    }
}

impl GlobalSink for RecordingSink {
    fn deliver(&mut self, envelope: &Envelope) -> Result<(), SinkError> {
        self.messages.lock().expect("sink poisoned").push(envelope.clone());
        Ok(())
    }
}

/// A global-node connection that never completes a delivery until
/// released. Used to show the pipeline does not wait on its link.
#[derive(Debug, Clone, Default)]
pub struct StalledSink {
    released: Arc<AtomicBool>,
}

impl StalledSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn release(&self) {
        self.released.store(true, Ordering::SeqCst);
    }
}

impl GlobalSink for StalledSink {
    fn deliver(&mut self, _: &Envelope) -> Result<(), SinkError> {
        while !self.released.load(Ordering::SeqCst) {
            std::thread::sleep(Duration::from_millis(5));
        }
        Err(SinkError::Closed)
    }
}

/// A message waiting for the link; the sequence number is stamped on send.
#[derive(Debug, Clone)]
pub struct Outbound {
    pub kind: MessageKind,
    pub payload: serde_json::Value,
    pub at: Nanos,
}

#[derive(Debug, Default)]
struct OutboxState {
    queue: VecDeque<Outbound>,
    closed: bool,
}

/// Bounded, never-blocking buffer between the pipeline's sinks and the
/// global-node link. When full, the oldest message is dropped.
#[derive(Debug)]
pub struct Outbox {
    capacity: usize,
    state: Mutex<OutboxState>,
    cv: Condvar,
    pushed: AtomicU64,
    dropped: AtomicU64,
}

impl Outbox {
    pub fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            capacity: capacity.max(1),
            state: Mutex::new(OutboxState::default()),
            cv: Condvar::new(),
            pushed: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        })
    }

    pub fn push(&self, msg: Outbound) {
        let mut st = self.state.lock().expect("outbox poisoned");
        if st.queue.len() == self.capacity {
            st.queue.pop_front();
            self.dropped.fetch_add(1, Ordering::SeqCst);
        }
        st.queue.push_back(msg);
        self.pushed.fetch_add(1, Ordering::SeqCst);
        drop(st);
        self.cv.notify_one();
    }

    /// Blocks until a message is available; `None` once closed and drained.
    pub fn pop(&self) -> Option<Outbound> {
        let mut st = self.state.lock().expect("outbox poisoned");
        loop {
            if let Some(m) = st.queue.pop_front() {
                return Some(m);
            }
            if st.closed {
                return None;
            }
            st = self.cv.wait(st).expect("outbox poisoned");
        }
    }

    pub fn close(&self) {
        self.state.lock().expect("outbox poisoned").closed = true;
        self.cv.notify_all();
    }

    pub fn pushed(&self) -> u64 {
        self.pushed.load(Ordering::SeqCst)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("outbox poisoned").queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub delivered: u64,
    pub failed: u64,
}

/// Drains `outbox` into `sink` on its own thread. Sequence numbers start at 1.
pub(crate) fn spawn_link(
    camera_id: CameraId,
    outbox: Arc<Outbox>,
    mut sink: Box<dyn GlobalSink>,
) -> crossbeam_channel::Receiver<LinkStats> {
    let (tx, rx) = crossbeam_channel::bounded(1);
    std::thread::Builder::new()
        .name(format!("{camera_id}-link"))
        .spawn(move || {
            let mut stats = LinkStats::default();
            let mut seq = 0;
            while let Some(m) = outbox.pop() {
                seq += 1;
                let env = Envelope { camera_id: camera_id.clone(), seq, kind: m.kind, payload: m.payload, sent_at: m.at };
                match sink.deliver(&env) {
                    Ok(()) => stats.delivered += 1,
                    Err(e) => {
                        log::warn!("{camera_id}: delivery of message {seq} failed: {e}");
                        stats.failed += 1;
                    }
                }
            }
            let _ = tx.send(stats);
        })
        .expect("spawn link thread");
    rx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(i: u64) -> Outbound {
        Outbound { kind: MessageKind::Heartbeat, payload: serde_json::json!({}), at: i }
    }

    #[test]
    fn overflow_drops_oldest() {
        let ob = Outbox::new(3);
        for i in 0..5 {
            ob.push(msg(i));
        }
        assert_eq!(ob.dropped(), 2);
        ob.close();
        let kept: Vec<u64> = std::iter::from_fn(|| ob.pop()).map(|m| m.at).collect();
        assert_eq!(kept, vec![2, 3, 4]);
    }

    #[test]
    fn link_numbers_messages() {
        let ob = Outbox::new(10);
        let sink = RecordingSink::new();
        let rx = spawn_link(CameraId::new("c"), ob.clone(), Box::new(sink.clone()));
        for i in 0..4 {
            ob.push(msg(i));
        }
        ob.close();
        assert_eq!(rx.recv().unwrap().delivered, 4);
        let seqs: Vec<u64> = sink.take().iter().map(|e| e.seq).collect();
        assert_eq!(seqs, vec![1, 2, 3, 4]);
    }
}
