//! The three decision procedures. Each builds a masked candidate list
//! (stop is always the last option), hands it to a [`Policy`], and applies
//! the chosen action with its cost charged at source.

mod architect;
mod curator;
mod navigator;
mod policy;

pub use architect::{architect_apply, architect_candidates, architect_decision, edit_candidate, EditCandidate};
pub(crate) use architect::edit_cost;
pub use curator::{
    curator_apply, curator_candidates, curator_decision, textualize_path, textualize_triple, CuratorCandidate,
};
pub use navigator::{
    begin_navigation_round, navigator_apply, navigator_candidates, navigator_decision, navigator_observe,
    HopCandidate, NavOutcome,
};
pub use policy::{masked_softmax, pick, Choice, Policy, UniformPolicy};

use serde::{Deserialize, Serialize};

use crate::episode::{EpisodeState, Resource};
use crate::kg::{KnowledgeGraph, TripleId};
use crate::scoring::POOLED_DIM;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Architect,
    Navigator,
    Curator,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Architect, AgentKind::Navigator, AgentKind::Curator];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Architect => "architect",
            AgentKind::Navigator => "navigator",
            AgentKind::Curator => "curator",
        }
    }
}

/// Actor-side candidate feature widths.
pub const ARCHITECT_CAND_DIM: usize = 11;
pub const NAVIGATOR_CAND_DIM: usize = 8;
pub const CURATOR_CAND_DIM: usize = 4;

/// Width of the per-agent action encoding fed to the critic: eleven
/// agent-specific slots, then `is_stop`, `is_noop`.
pub const ACTION_DIM: usize = 13;

/// Global summary width.
pub const GLOBAL_DIM: usize = 21 + POOLED_DIM;

/// Navigator observation width.
pub const NAV_OBS_DIM: usize = 3 * POOLED_DIM + 1 + 6 + 1;

/// Cost-scale normalisers for global features in price mode.
const PRICE_MODE_SCALES: [f64; 3] = [8.0, 16.0, 64.0];

pub fn cand_dim(agent: AgentKind) -> usize {
    match agent {
        AgentKind::Architect => ARCHITECT_CAND_DIM,
        AgentKind::Navigator => NAVIGATOR_CAND_DIM,
        AgentKind::Curator => CURATOR_CAND_DIM,
    }
}

pub fn obs_dim(agent: AgentKind) -> usize {
    match agent {
        AgentKind::Navigator => NAV_OBS_DIM,
        _ => GLOBAL_DIM,
    }
}

pub type ActionFeatures = [f64; ACTION_DIM];

pub fn stop_action_features() -> ActionFeatures {
    let mut a = [0.0; ACTION_DIM];
    a[ACTION_DIM - 2] = 1.0;
    a
}

pub fn noop_action_features() -> ActionFeatures {
    let mut a = [0.0; ACTION_DIM];
    a[ACTION_DIM - 1] = 1.0;
    a
}

fn action_features(slots: &[f64]) -> ActionFeatures {
    let mut a = [0.0; ACTION_DIM];
    a[..slots.len()].copy_from_slice(slots);
    a
}

/// One decision point: observation, per-candidate features, mask, and the
/// critic encoding of every option. Index `n_candidates()` is stop.
#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub agent: AgentKind,
    pub obs: Vec<f64>,
    /// Row-major `n × cand_dim(agent)`.
    pub cand_feats: Vec<f64>,
    /// Parameter-free logit offsets (curator redundancy penalty).
    pub logit_offsets: Vec<f64>,
    /// `n + 1` entries; the last is stop and is never masked.
    pub mask: Vec<bool>,
    pub action_feats: Vec<ActionFeatures>,
    /// Triples each candidate touches (edit target, hop edge, snippet
    /// provenance).
    pub provenance: Vec<Vec<TripleId>>,
}

impl Decision {
    pub fn n_candidates(&self) -> usize {
        self.logit_offsets.len()
    }

    pub fn stop_index(&self) -> usize {
        self.n_candidates()
    }

    pub fn candidate(&self, i: usize) -> &[f64] {
        let d = cand_dim(self.agent);
        &self.cand_feats[i * d..(i + 1) * d]
    }

    pub fn feasible_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Only stop is available.
    pub fn is_forced_stop(&self) -> bool {
        self.feasible_count() == 1
    }
}

/// Compact summary of `(G_t, F_t, pool, b_t)` shared by the critic and by the
/// architect and curator observations.
pub fn global_features(state: &EpisodeState, acting: AgentKind) -> Vec<f64> {
    let mut v = Vec::with_capacity(GLOBAL_DIM);
    let ln = |x: usize| (1.0 + x as f64).ln() / 4.0;
    v.push(ln(state.nodes.len()));
    v.push(ln(state.edges.len()));
    v.push(ln(state.frontier.len()));
    v.push(state.nav.paths.len() as f64 / state.config.max_paths.max(1) as f64);
    v.push(state.selected.len() as f64 / 8.0);
    for r in Resource::ALL {
        let used = state.counters.get(r) as f64;
        v.push(match &state.caps {
            Some(b) => (used / b.get(r).max(1.0)).min(2.0),
            None => (used / PRICE_MODE_SCALES[r.index()]).min(2.0),
        });
    }
    v.extend_from_slice(&state.prices.as_array());
    v.extend(state.stopped.iter().map(|&s| if s { 1.0 } else { 0.0 }));
    v.push(state.round as f64 / state.config.max_rounds as f64);
    let covered = state.covered_triples();
    v.push(if state.edges.is_empty() {
        0.0
    } else {
        state.edges.iter().filter(|e| covered.contains(e)).count() as f64 / state.edges.len() as f64
    });
    v.push(state.nav.path.len() as f64 / state.config.horizon as f64);
    v.push(if state.is_cap_mode() { 1.0 } else { 0.0 });
    for a in AgentKind::ALL {
        v.push(if a == acting { 1.0 } else { 0.0 });
    }
    v.extend_from_slice(&state.scorer.embedding().pooled());
    debug_assert_eq!(v.len(), GLOBAL_DIM);
    v
}

/// Builds the decision for `agent` in the current state.
pub fn decision_for(
    agent: AgentKind,
    state: &EpisodeState,
    g: &KnowledgeGraph,
    policy: &dyn Policy,
    greedy: bool,
) -> Decision {
    match agent {
        AgentKind::Architect => architect_decision(state, g, &policy.fusion_weights(), greedy).1,
        AgentKind::Navigator => navigator_decision(state, g).1,
        AgentKind::Curator => curator_decision(state, g).1,
    }
}
