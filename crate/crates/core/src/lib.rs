//! Active-learning engine for ranked similarity judgments.
//!
//! The crate collects 8-rank-2 similarity judgments (from people or from a
//! simulated oracle), fits variational Bayesian embeddings of the judged
//! stimuli, picks the next trials by expected information gain, and scores
//! external feature representations against the collected judgments.

pub mod active;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod quality;
pub mod seed;
pub mod service;
pub mod stats;
pub mod store;

pub use error::{Error, Result};
pub use inference::{Ensemble, FitConfig};
pub use model::{EmbeddingPosterior, Observation, OutcomeIndex, StimulusId, Trial};
