//! Tasks, the evidence-coverage reader oracle, the episode runner and
//! evaluation.

mod eval;
mod metaqa;
mod runner;
mod synthetic;

pub use eval::{evaluate, run_all, EvalReport, Reference};
pub use metaqa::{load_metaqa, load_questions, parse_question_line, LoadStats};
pub use runner::{run_episode, Ablation, EpisodeOutcome, RunOptions, StepRecord};
pub use synthetic::{generate_tasks, shortest_directed_distance, SyntheticTaskConfig};

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::episode::Snippet;
use crate::kg::{KnowledgeGraph, TripleId};

/// A question with the evidence that answers it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAExample {
    pub question: String,
    pub anchors: Vec<String>,
    /// Each path starts at an anchor; its last triple ends at an answer.
    pub gold_paths: Vec<Vec<TripleId>>,
    pub answers: Vec<String>,
}

/// A graph with train and eval questions over it.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub graph: Arc<KnowledgeGraph>,
    pub train: Vec<QAExample>,
    pub eval: Vec<QAExample>,
}

/// 1 iff some gold path lies entirely inside the provenance closure of `S`.
pub fn reader_oracle(selected: &[Snippet], example: &QAExample) -> u8 {
    let closure: BTreeSet<TripleId> = selected.iter().flat_map(|s| s.provenance.iter().copied()).collect();
    let hit = example
        .gold_paths
        .iter()
        .any(|p| !p.is_empty() && p.iter().all(|t| closure.contains(t)));
    hit as u8
}

/// Independent per-item seed derived from a base seed (SplitMix64 finaliser).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
