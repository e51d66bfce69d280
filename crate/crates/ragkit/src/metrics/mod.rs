//! Evaluation metrics for the retrieval and generation stages.

pub mod generation;
pub mod retrieval;
