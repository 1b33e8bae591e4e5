//! End-to-end attack-detection pipeline built around generator-based
//! anomaly features: an autoregressive pixel-density model, a PCA anomaly
//! feature space, a one-class detector, a minimax-margin discriminative
//! classifier, probabilistic score fusion, and an evaluation harness that
//! scores detectors by their weakest attack species.

pub mod baselines;
pub mod blob;
pub mod classifier;
pub mod dataset;
pub mod density;
pub mod error;
pub mod eval;
pub mod extract;
pub mod features;
pub mod fusion;
pub mod game;
pub mod oneclass;
pub mod optim;
pub mod pipeline;
pub mod rng;

pub use error::{Error, Result};
