//! Path navigator: typed hops inside `G_t` with explicit backtracking and a
//! termination head (the stop option).

use super::{action_features, stop_action_features, AgentKind, Decision, NAVIGATOR_CAND_DIM, NAV_OBS_DIM};
use crate::episode::{AgentId, CostDelta, EpisodeState, EventKind, Hop, Payload, Resource, TripleRef};
use crate::error::{Error, Result};
use crate::kg::{EdgeDir, EntityId, KnowledgeGraph, TripleId};
use crate::scoring::{degree_prior, pool, POOLED_DIM};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HopCandidate {
    Hop { triple: TripleId, from: EntityId, to: EntityId, direction: EdgeDir, score: f64 },
    /// Undo the last hop of `p_t`.
    Backtrack { triple: TripleId, from: EntityId, to: EntityId },
}

impl HopCandidate {
    pub fn triple(&self) -> TripleId {
        match *self {
            HopCandidate::Hop { triple, .. } | HopCandidate::Backtrack { triple, .. } => triple,
        }
    }

    pub fn target(&self) -> EntityId {
        match *self {
            HopCandidate::Hop { to, .. } | HopCandidate::Backtrack { to, .. } => to,
        }
    }
}

/// What a navigator action did to the segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NavOutcome {
    Moved,
    Backtracked,
    /// Segment over; the navigator acts again next round.
    SegmentEnd,
    /// Navigator finished for the episode.
    Stopped,
}

fn traversal_cost() -> CostDelta {
    CostDelta::of(Resource::Lat, 1)
}

/// Starts a round's segment from the frontier node most similar to the
/// question (ties to the lower id) among nodes with an incident edge in
/// `G_t`; falls back to the first anchor.
pub fn begin_navigation_round(state: &mut EpisodeState, g: &KnowledgeGraph) {
    state.nav.segment_steps = 0;
    if !state.nav.path.is_empty() {
        return;
    }
    let mut best: Option<(f64, EntityId)> = None;
    for &v in &state.frontier {
        if !g.neighbors_unchecked(v).iter().any(|n| state.edges.contains(&n.triple)) {
            continue;
        }
        let s = state.scorer.entity_sim(v);
        if best.map_or(true, |(b, _)| s > b) {
            best = Some((s, v));
        }
    }
    state.nav.current = best.map(|(_, v)| v).or_else(|| state.anchors.first().copied());
}

/// Hops from the current node along `G_t` edges to nodes not yet on `p_t`
/// (at most `k_max`, by relation plus target similarity), then backtrack if
/// `p_t` is non-empty. Empty when `|p_t| = H` or the navigator stopped.
pub fn navigator_candidates(state: &EpisodeState, g: &KnowledgeGraph) -> Vec<HopCandidate> {
    let nav = &state.nav;
    let Some(v) = nav.current else { return Vec::new() };
    if state.stopped[AgentKind::Navigator.index()] || nav.path.len() >= state.config.horizon {
        return Vec::new();
    }
    let on_path = |e: EntityId| nav.path.first().is_some_and(|h| h.from == e) || nav.path.iter().any(|h| h.to == e);
    let mut hops: Vec<HopCandidate> = g
        .neighbors_unchecked(v)
        .iter()
        .filter(|n| state.edges.contains(&n.triple) && n.entity != v && !on_path(n.entity))
        .map(|n| HopCandidate::Hop {
            triple: n.triple,
            from: v,
            to: n.entity,
            direction: n.direction,
            score: state.scorer.relation_sim(n.relation) + state.scorer.entity_sim(n.entity),
        })
        .collect();
    let score = |c: &HopCandidate| match c {
        HopCandidate::Hop { score, .. } => *score,
        HopCandidate::Backtrack { .. } => 0.0,
    };
    hops.sort_by(|a, b| score(b).total_cmp(&score(a)).then(a.triple().cmp(&b.triple())));
    hops.truncate(state.config.k_max);
    if let Some(last) = nav.path.last() {
        hops.push(HopCandidate::Backtrack { triple: last.triple, from: last.to, to: last.from });
    }
    hops
}

fn candidate_features(state: &EpisodeState, g: &KnowledgeGraph, c: &HopCandidate) -> [f64; NAVIGATOR_CAND_DIM] {
    let t = g.triple(c.triple()).expect("valid triple");
    let target = c.target();
    let (is_out, is_in, is_back, len_after) = match c {
        HopCandidate::Hop { direction, .. } => (
            (*direction == EdgeDir::Out) as u8 as f64,
            (*direction == EdgeDir::In) as u8 as f64,
            0.0,
            state.nav.path.len() + 1,
        ),
        HopCandidate::Backtrack { .. } => (0.0, 0.0, 1.0, state.nav.path.len().saturating_sub(1)),
    };
    [
        state.scorer.relation_sim(t.relation),
        state.scorer.entity_sim(target),
        degree_prior(g.degree(target)),
        is_out,
        is_in,
        is_back,
        state.is_anchor(target) as u8 as f64,
        len_after as f64 / state.config.horizon as f64,
    ]
}

/// `(q, v_t, summary(p_t), |p_t|/H, b_t, |A_t|/K_max)` with every embedding
/// pooled to 16 dims.
pub fn navigator_observe(state: &EpisodeState, g: &KnowledgeGraph) -> Vec<f64> {
    navigator_observe_with(state, g, navigator_candidates(state, g).len())
}

fn navigator_observe_with(state: &EpisodeState, g: &KnowledgeGraph, n_candidates: usize) -> Vec<f64> {
    let mut v = Vec::with_capacity(NAV_OBS_DIM);
    v.extend_from_slice(&state.scorer.embedding().pooled());
    match state.nav.current {
        Some(c) => v.extend_from_slice(&g.entity_embedding(c).pooled()),
        None => v.extend_from_slice(&[0.0; POOLED_DIM]),
    }
    if state.nav.path.is_empty() {
        v.extend_from_slice(&[0.0; POOLED_DIM]);
    } else {
        let mut mean = vec![0.0; g.relation_embedding(crate::kg::RelationId(0)).as_slice().len()];
        for h in &state.nav.path {
            let r = g.triple(h.triple).expect("valid triple").relation;
            for (m, x) in mean.iter_mut().zip(g.relation_embedding(r).as_slice()) {
                *m += x;
            }
        }
        let n = state.nav.path.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        v.extend_from_slice(&pool(&mean));
    }
    v.push(state.nav.path.len() as f64 / state.config.horizon as f64);
    v.extend_from_slice(&state.budget_vector());
    v.push(n_candidates as f64 / state.config.k_max as f64);
    debug_assert_eq!(v.len(), NAV_OBS_DIM);
    v
}

/// In cap mode every traversal is masked once no step budget remains.
pub fn navigator_decision(state: &EpisodeState, g: &KnowledgeGraph) -> (Vec<HopCandidate>, Decision) {
    let cands = navigator_candidates(state, g);
    let affordable = state.can_afford_delta(traversal_cost());
    let mut mask = vec![affordable; cands.len()];
    mask.push(true);
    let mut cand_feats = Vec::with_capacity(cands.len() * NAVIGATOR_CAND_DIM);
    let mut action_feats = Vec::with_capacity(cands.len() + 1);
    for c in &cands {
        let f = candidate_features(state, g, c);
        cand_feats.extend_from_slice(&f);
        action_feats.push(action_features(&f));
    }
    action_feats.push(stop_action_features());
    let decision = Decision {
        agent: AgentKind::Navigator,
        obs: navigator_observe_with(state, g, cands.len()),
        cand_feats,
        logit_offsets: vec![0.0; cands.len()],
        mask,
        action_feats,
        provenance: cands.iter().map(|c| vec![c.triple()]).collect(),
    };
    (cands, decision)
}

/// Moves `p_t` into `Π` (if non-empty and new), logs the stop, and either
/// ends the segment or stops the navigator for good.
fn finish_segment(state: &mut EpisodeState, g: &KnowledgeGraph, reason: &str, stop_for_good: bool) -> NavOutcome {
    let path = std::mem::take(&mut state.nav.path);
    let recorded = (!path.is_empty()).then(|| path.iter().map(|h| TripleRef::new(g, h.triple)).collect());
    if !path.is_empty() && state.nav.paths.len() < state.config.max_paths && !state.nav.paths.contains(&path) {
        state.nav.paths.push(path);
    }
    let out_of_steps = state.is_cap_mode() && !state.can_afford_delta(traversal_cost());
    let done = stop_for_good || out_of_steps || state.nav.paths.len() >= state.config.max_paths;
    if done {
        state.stopped[AgentKind::Navigator.index()] = true;
    }
    state.push_event(
        AgentId::Navigator,
        EventKind::Stop,
        Payload::Stop { reason: reason.to_string(), path: recorded },
        CostDelta::default(),
    );
    if done {
        NavOutcome::Stopped
    } else {
        NavOutcome::SegmentEnd
    }
}

/// Applies a traversal (`Some`) or the termination head (`None`). Stopping
/// on an empty path ends navigation for the episode; stopping on a
/// non-empty path finalises it and resumes next round. Reaching `|p_t| = H`
/// or spending `H` actions in the segment also finalises.
pub fn navigator_apply(state: &mut EpisodeState, g: &KnowledgeGraph, choice: Option<&HopCandidate>) -> Result<NavOutcome> {
    let Some(c) = choice else {
        let empty = state.nav.path.is_empty();
        return Ok(finish_segment(state, g, "stop", empty));
    };
    let current = state.nav.current.ok_or_else(|| Error::InvalidAction("navigator has no current node".into()))?;
    let t = g.triple(c.triple()).ok_or_else(|| Error::InvalidTriple(c.triple().to_string()))?;
    if !state.edges.contains(&c.triple()) {
        return Err(Error::InvalidAction(format!("triple {} is not in the subgraph", c.triple())));
    }
    let cost = traversal_cost();
    let outcome = match *c {
        HopCandidate::Hop { triple, from, to, direction, .. } => {
            let consistent = from == current
                && match direction {
                    EdgeDir::Out => t.subject == from && t.object == to,
                    EdgeDir::In => t.object == from && t.subject == to,
                };
            if !consistent {
                return Err(Error::InvalidAction(format!("{to} is not a neighbor of {current} via triple {triple}")));
            }
            if state.nav.path.len() >= state.config.horizon {
                return Err(Error::InvalidAction("path already at the horizon".into()));
            }
            state.charge_delta(cost)?;
            state.nav.path.push(Hop { from, to, triple, direction });
            state.nav.current = Some(to);
            state.push_event(
                AgentId::Navigator,
                EventKind::Hop,
                Payload::Hop { triple: TripleRef::new(g, triple), from, to, direction },
                cost,
            );
            NavOutcome::Moved
        }
        HopCandidate::Backtrack { triple, from, to } => {
            let last = state.nav.path.last().ok_or_else(|| Error::InvalidAction("backtrack on empty path".into()))?;
            if last.triple != triple || last.to != from || last.from != to || from != current {
                return Err(Error::InvalidAction("backtrack does not undo the last hop".into()));
            }
            state.charge_delta(cost)?;
            state.nav.path.pop();
            state.nav.current = Some(to);
            state.push_event(
                AgentId::Navigator,
                EventKind::Backtrack,
                Payload::Backtrack { triple: TripleRef::new(g, triple), from, to },
                cost,
            );
            NavOutcome::Backtracked
        }
    };
    state.nav.segment_steps += 1;
    if state.nav.path.len() >= state.config.horizon {
        return Ok(finish_segment(state, g, "horizon", false));
    }
    if state.nav.segment_steps >= state.config.horizon {
        return Ok(finish_segment(state, g, "segment limit", false));
    }
    if state.is_cap_mode() && !state.can_afford_delta(cost) {
        return Ok(finish_segment(state, g, "step budget", true));
    }
    Ok(outcome)
}
