use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_channel::{bounded, Receiver, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use super::OverflowPolicy;

/// Occupancy and blocking counters of one inter-stage queue.
#[derive(Debug)]
pub struct QueueStats {
    pub name: String,
    pub capacity: usize,
    max_len: AtomicUsize,
    sent: AtomicU64,
    blocked: AtomicU64,
    dropped: AtomicU64,
}

impl QueueStats {
    fn observe(&self, len: usize) {
        self.max_len.fetch_max(len, Ordering::SeqCst);
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            name: self.name.clone(),
            capacity: self.capacity,
            max_len: self.max_len.load(Ordering::SeqCst),
            sent: self.sent.load(Ordering::SeqCst),
            blocked_sends: self.blocked.load(Ordering::SeqCst),
            dropped: self.dropped.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub name: String,
    pub capacity: usize,
    /// Largest occupancy seen after any send or before any receive.
    pub max_len: usize,
    pub sent: u64,
    /// Sends that found the queue full and had to wait.
    pub blocked_sends: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Sent,
    Dropped,
    /// The consumer is gone.
    Disconnected,
}

pub struct QueueSender<T> {
    tx: Sender<T>,
    policy: OverflowPolicy,
    stats: Arc<QueueStats>,
}

pub struct QueueReceiver<T> {
    rx: Receiver<T>,
    stats: Arc<QueueStats>,
}

/// Bounded FIFO of `capacity` messages that records its peak occupancy.
pub fn stage_queue<T>(name: &str, capacity: usize, policy: OverflowPolicy) -> (QueueSender<T>, QueueReceiver<T>, Arc<QueueStats>) {
    let (tx, rx) = bounded(capacity);
    let stats = Arc::new(QueueStats {
        name: name.to_string(),
        capacity,
        max_len: AtomicUsize::new(0),
        sent: AtomicU64::new(0),
        blocked: AtomicU64::new(0),
        dropped: AtomicU64::new(0),
    });
    (QueueSender { tx, policy, stats: stats.clone() }, QueueReceiver { rx, stats: stats.clone() }, stats)
}

impl<T> QueueSender<T> {
    pub fn send(&self, msg: T) -> SendOutcome {
        let outcome = match self.tx.try_send(msg) {
            Ok(()) => SendOutcome::Sent,
            Err(TrySendError::Disconnected(_)) => return SendOutcome::Disconnected,
            Err(TrySendError::Full(msg)) => match self.policy {
                OverflowPolicy::DropNewest => {
                    self.stats.dropped.fetch_add(1, Ordering::SeqCst);
                    return SendOutcome::Dropped;
                }
                OverflowPolicy::Block => {
                    self.stats.blocked.fetch_add(1, Ordering::SeqCst);
                    match self.tx.send(msg) {
                        Ok(()) => SendOutcome::Sent,
                        Err(_) => return SendOutcome::Disconnected,
                    }
                }
            },
        };
        self.stats.sent.fetch_add(1, Ordering::SeqCst);
        self.stats.observe(self.tx.len());
        outcome
    }
}

impl<T> QueueReceiver<T> {
    /// Next message, or `None` once the producer is gone and the queue is empty.
    pub fn recv(&self) -> Option<T> {
        self.stats.observe(self.rx.len());
        self.rx.recv().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blocks_at_capacity_and_keeps_order() {
        let (tx, rx, stats) = stage_queue::<u32>("q", 2, OverflowPolicy::Block);
        let producer = std::thread::spawn(move || {
            for i in 0..50 {
                assert_eq!(tx.send(i), SendOutcome::Sent);
            }
        });
        std::thread::sleep(std::time::Duration::from_millis(20));
        let got: Vec<u32> = std::iter::from_fn(|| rx.recv()).collect();
        producer.join().unwrap();
        assert_eq!(got, (0..50).collect::<Vec<_>>());
        let s = stats.snapshot();
        assert!(s.max_len <= 2);
        assert!(s.blocked_sends >= 1);
        assert_eq!(s.sent, 50);
    }

    #[test]
    fn drop_newest_discards_when_full() {
        let (tx, rx, stats) = stage_queue::<u32>("q", 1, OverflowPolicy::DropNewest);
        assert_eq!(tx.send(1), SendOutcome::Sent);
        assert_eq!(tx.send(2), SendOutcome::Dropped);
        drop(tx);
        assert_eq!(rx.recv(), Some(1));
        assert_eq!(rx.recv(), None);
        assert_eq!(stats.snapshot().dropped, 1);
    }
}
