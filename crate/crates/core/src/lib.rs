//! Explainable text-complexity prediction.
//!
//! The crate covers the whole pipeline from parallel complex/simple sentence
//! pairs to evaluated token highlights:
//!
//! * [`corpus`] loads aligned pairs, tokenizes them and derives complexity
//!   labels plus reference highlight masks.
//! * [`features`] turns tokens into sparse n-gram and lexical feature vectors.
//! * [`classify`] trains Naive Bayes and logistic regression predictors.
//! * [`explain`] produces highlight masks (random, lexicon, top features,
//!   perturbation surrogate, linear Shapley).
//! * [`metrics`] scores masks (tokenwise P/R/F1, edit distance, TER) and
//!   computes correlation coefficients.
//! * [`pipeline`] and [`report`] run everything end to end and serialize the
//!   results.

pub mod classify;
pub mod corpus;
pub mod error;
pub mod explain;
pub mod features;
pub mod metrics;
pub mod pipeline;
pub mod report;

pub use error::{Error, Result};
