//! Multi-camera surveillance pipeline: per-camera local nodes that detect,
//! track, estimate poses and pick re-identification crops in bounded,
//! batched stages, and a global node that links identities across cameras
//! without ever receiving an image.

pub mod backend;
pub mod bench;
pub mod crops;
pub mod global;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod tasks;
pub mod tracker;
