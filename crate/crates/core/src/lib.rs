//! Surface defect detection on deflectometry fringe patches.
//!
//! Each patch row is smoothed by a penalized cubic regression spline with a
//! GCV-chosen smoothing parameter; the effective degrees of freedom of the
//! row smooths, scaled by their maximum, form the feature vector. Feature
//! vectors are classified by an NN-ball probabilistic nearest-neighbour rule
//! that yields proper posterior probabilities, which in turn drive the
//! probability-based evaluation metrics.

pub mod classifier;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod splinefit;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
