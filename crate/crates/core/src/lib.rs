//! Differential-evolution tuning of SVM classifiers over word-embedding
//! features for linkable knowledge-unit prediction.

pub mod dataforge;
pub mod despace;
pub mod embedkit;
pub mod error;
pub mod metrics;
pub mod runner;
pub mod statlab;
pub mod svmcore;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
