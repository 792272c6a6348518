//! Instrumented decoder-only transformer inference plus an interpretability
//! toolkit: per-head vocabulary-space projection (logit lens), lexical task
//! head and retrieval head detection, activation caching/averaging/patching,
//! steered generation, and the analyses built on top of them.

pub mod analysis;
pub mod detect;
pub mod error;
pub mod exp;
pub mod lens;
pub mod model;
pub mod patch;
pub mod report;
pub mod synth;
pub mod task;
pub mod workers;

pub use error::{Error, Result};
