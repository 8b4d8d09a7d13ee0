//! Neuron-permutation alignment and linear mode connectivity toolkit.
//!
//! Two networks of the same architecture are aligned layer by layer by
//! solving exact linear assignment problems between neuron weight vectors
//! (or activations), then compared along the straight line between their
//! parameters. The same assignment solver computes exact Wasserstein
//! distances between empirical measures, which drives the rate experiments.

pub mod assignment;
pub mod data;
pub mod error;
pub mod experiments;
pub mod interpolation;
pub mod matching;
pub mod network;
pub mod numerics;
pub mod par;

pub use error::{CheckpointError, Error, Result};
