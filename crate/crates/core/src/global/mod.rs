//! The global node: gallery matching across cameras, a relational store of
//! everything received, and statistical analyses over it.

pub mod analysis;
mod client;
pub mod gallery;
mod node;
pub mod privacy;
pub mod protocol;
mod server;
pub mod store;

pub use analysis::{analyze, AnalysisResult, DEFAULT_BUCKET_S};
pub use client::TcpSink;
pub use gallery::{Gallery, GalleryConfig, GalleryEntry, GalleryError, GalleryMode, MatchOutcome};
pub use node::{Assignment, GlobalNode, IngestStats, SharedNode};
pub use privacy::{scan, PrivacyViolation};
pub use protocol::{Ack, AckStatus, Envelope, Heartbeat, MessageKind, ObjectSummary, Payload, ProtocolError};
pub use server::{serve, wall_clock_ns, ServerHandle};
pub use store::Store;
