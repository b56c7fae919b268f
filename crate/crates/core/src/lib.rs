//! Sequence classification of social interactions from per-frame semantic
//! attribute vectors.
//!
//! The pipeline runs from raw attribute blocks to a trained recurrent
//! classifier:
//!
//! * [`features`] quantizes and PCA-compresses each attribute, assembles the
//!   459-wide frame vector and augments training sequences with noise along
//!   the principal axes.
//! * [`splits`] draws grouped (user, day) train/validation splits and keeps
//!   the ones whose label distributions agree best under KL divergence.
//! * [`model`] is an LSTM classifier in single-task, multi-task independent
//!   and multi-task top-down topologies, with exact backpropagation through
//!   time.
//! * [`training`] holds Adam with step decay, the full-batch training loop,
//!   metrics and the benchmark grid.
//! * [`taxonomy`] is the fixed five-domain / nine-relation label hierarchy.

pub mod dataset;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod splits;
pub mod synth;
pub mod taxonomy;
pub mod training;

#[cfg(feature = "cli")]
pub mod cli;

pub use error::{Error, Result};
pub use taxonomy::{Domain, Relation};

/// Version string embedded in every artifact this crate writes.
pub const TOOLKIT_VERSION: &str = concat!("socrel ", env!("CARGO_PKG_VERSION"));
