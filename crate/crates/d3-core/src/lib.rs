//! Desk-scale dual-branch discrepancy detector.
//!
//! A frozen toy backbone embeds an image twice (original and structurally
//! disrupted), a small trainable head scores the pair, and a synthetic
//! generator-fingerprint benchmark provides train/eval data. Everything is
//! deterministic given the seeds in the relevant config structs.

pub mod backbone;
pub mod head;
pub mod imagekit;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod synthbench;
