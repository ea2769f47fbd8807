//! Tracking-by-segmentation control plane.
//!
//! A segmentation backend propagates one mask and one logits score per
//! tracked object each frame; this crate decides when objects are added,
//! reconditioned, purged from memory after occlusion, and removed, and
//! evaluates the resulting boxes against ground truth.

pub mod assignment;
pub mod bridge;
pub mod engine;
pub mod error;
pub mod interaction;
pub mod io;
pub mod mask;
pub mod metrics;
pub mod synthetic;
pub mod trajectory;

pub use error::{Error, Result};
