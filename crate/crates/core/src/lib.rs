//! Budget-constrained multi-agent construction of question-specific
//! knowledge-graph contexts, with constrained multi-agent PPO training.

pub mod agents;
pub mod cli;
pub mod episode;
pub mod error;
pub mod harness;
pub mod kg;
pub mod lcmappo;
pub mod neural;
pub mod scoring;
pub mod text;

pub use error::{Error, Result};
