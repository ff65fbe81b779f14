//! Train/test contamination auditing for parallel corpora.

pub mod baselines;
pub mod contamination;
pub mod corpus;
pub mod error;
pub mod metrics;
pub mod ngram;
pub mod report;
pub mod splitter;
pub mod textnorm;

pub use error::{Error, Result};
