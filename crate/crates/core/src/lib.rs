//! Bounded-confidence opinion dynamics in continuous time.
//!
//! * [`model`]: sorted states, interaction graphs, Laplacians.
//! * [`discrete`]: event-driven simulator for finitely many agents.
//! * [`analysis`]: clusters, stability threshold, conservation audits.
//! * [`continuum`]: the continuum-of-agents model and its Picard solver.
//! * [`bridge`]: embeddings between the two and the Monte-Carlo harness.

pub mod analysis;
pub mod bridge;
pub mod continuum;
pub mod discrete;
pub mod error;
pub mod model;

pub use error::{Error, Result};
