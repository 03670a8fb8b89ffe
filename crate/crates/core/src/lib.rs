//! Interactive attribute-guided search.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`] and [`sampling`]: labelled items, the text file format, synthetic
//!   generation, triplet and query/target pair sampling.
//! - [`embedding`]: the conditional masked embedding model (per-attribute simplex
//!   masks over a shared general embedding) with its triplet loss and trainer.
//! - [`gallery`]: precomputed per-attribute embeddings of a searchable item set.
//! - [`selection`]: nearest-neighbour and feedback-constraint candidate selectors.
//! - [`eer`]: Platt-calibrated expected error reduction re-ranking.
//! - [`dqn`]: the learned Q-network re-ranker.
//! - [`session`] and [`bench`]: the search loop, the simulated user and the
//!   strategy benchmark.

pub mod bench;
pub mod checkpoint;
pub mod dataset;
pub mod dqn;
pub mod eer;
pub mod embedding;
mod error;
pub mod gallery;
pub mod optim;
pub mod sampling;
pub mod selection;
pub mod session;

pub use error::{Error, Result};
