//! Explainable logistic attribution for scholar social-media indicators.
//!
//! The crate covers the whole analysis: ingesting scholar records, deriving
//! activity indicators and a mobility label, descriptive statistics and
//! multicollinearity checks, maximum-likelihood logistic regression with
//! full inference, subset and stepwise model selection, evaluation, SHAP
//! attribution with LOWESS trends, and Girvan–Newman community detection on
//! collaboration networks.

pub mod attribution;
pub mod error;
pub mod evaluate;
pub mod indicators;
pub mod ingest;
pub mod logit;
pub mod model_select;
pub mod network;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
