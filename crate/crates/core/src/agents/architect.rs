//! Subgraph architect: reversible add/delete edits on frontier edges under
//! the gain–price rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{action_features, global_features, stop_action_features, AgentKind, Decision, ARCHITECT_CAND_DIM};
use crate::episode::{AgentId, CostDelta, EditOp, EpisodeState, EventKind, Payload, Resource, TripleRef};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, TripleId};
use crate::scoring::{fused_score, EdgeFeatures, FusionWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct EditCandidate {
    pub op: EditOp,
    pub triple: TripleId,
    pub features: EdgeFeatures,
    /// Fused score `s(e | q, G_t)`.
    pub score: f64,
    /// `s − λ_edge · c_edge(a, e)` with unit edit cost.
    pub shaped_gain: f64,
    pub touches_anchor: bool,
    /// An add that brings a new node into `V_t`.
    pub grows_nodes: bool,
    /// Directed hop distance from an anchor to the subject within `G_t`.
    pub subject_depth: Option<usize>,
    /// The relation is the one the question names at `subject_depth`.
    pub next_hop_match: bool,
}

impl EditCandidate {
    pub fn actor_features(&self) -> [f64; ARCHITECT_CAND_DIM] {
        let f = self.features.to_array();
        [
            f[0],
            f[1],
            f[2],
            f[3],
            if self.op == EditOp::Delete { 1.0 } else { 0.0 },
            if self.touches_anchor { 1.0 } else { 0.0 },
            if self.grows_nodes { 1.0 } else { 0.0 },
            self.shaped_gain,
            if self.subject_depth.is_some() { 1.0 } else { 0.0 },
            self.subject_depth.map_or(0.0, |d| d as f64 / DEPTH_SCALE),
            if self.next_hop_match { 1.0 } else { 0.0 },
        ]
    }
}

const DEPTH_SCALE: f64 = 4.0;

/// Directed BFS depths from the anchors over the edges of `G_t`.
pub(crate) fn forward_depths(state: &EpisodeState, g: &KnowledgeGraph) -> BTreeMap<EntityId, usize> {
    let mut out: BTreeMap<EntityId, Vec<EntityId>> = BTreeMap::new();
    for &id in &state.edges {
        if let Some(t) = g.triple(id) {
            out.entry(t.subject).or_default().push(t.object);
        }
    }
    let mut depth: BTreeMap<EntityId, usize> = state.anchors.iter().map(|&a| (a, 0)).collect();
    let mut queue: VecDeque<EntityId> = state.anchors.iter().copied().collect();
    while let Some(u) = queue.pop_front() {
        let d = depth[&u];
        for &v in out.get(&u).map_or(&[][..], Vec::as_slice) {
            if !depth.contains_key(&v) {
                depth.insert(v, d + 1);
                queue.push_back(v);
            }
        }
    }
    depth
}

pub(crate) fn edit_cost(state: &EpisodeState) -> CostDelta {
    let mut c = CostDelta::of(Resource::Edge, 1);
    if state.config.lat_counts_all_actions {
        c.lat = 1;
    }
    c
}

/// Scores an arbitrary edit of `id` in the current state.
pub fn edit_candidate(
    state: &EpisodeState,
    g: &KnowledgeGraph,
    weights: &FusionWeights,
    op: EditOp,
    id: TripleId,
) -> Result<EditCandidate> {
    edit_candidate_at(state, g, weights, &forward_depths(state, g), op, id)
}

fn edit_candidate_at(
    state: &EpisodeState,
    g: &KnowledgeGraph,
    weights: &FusionWeights,
    depths: &BTreeMap<EntityId, usize>,
    op: EditOp,
    id: TripleId,
) -> Result<EditCandidate> {
    let t = g.triple(id).ok_or_else(|| Error::InvalidTriple(id.to_string()))?;
    let features = state.scorer.features(t, g);
    let score = fused_score(&features, weights);
    let subject_depth = depths.get(&t.subject).copied();
    Ok(EditCandidate {
        subject_depth,
        next_hop_match: subject_depth.is_some() && state.scorer.relation_rank(t.relation) == subject_depth,
        op,
        triple: id,
        features,
        score,
        shaped_gain: score - state.prices.lambda_edge,
        touches_anchor: state.is_anchor(t.subject) || state.is_anchor(t.object),
        grows_nodes: op == EditOp::Add && !(state.nodes.contains(&t.subject) && state.nodes.contains(&t.object)),
    })
}

/// Up to `k_max` adds (highest fused score among frontier-adjacent edges not
/// yet in `G_t`) followed by up to `k_max / 2` deletes (lowest-scored current
/// edges not backing curated evidence). Stop is implicit.
pub fn architect_candidates(state: &EpisodeState, g: &KnowledgeGraph, weights: &FusionWeights) -> Vec<EditCandidate> {
    if state.stopped[AgentKind::Architect.index()] {
        return Vec::new();
    }
    let depths = forward_depths(state, g);
    let make = |op: EditOp, id: TripleId| {
        edit_candidate_at(state, g, weights, &depths, op, id).expect("triple from graph index")
    };

    let mut pending: BTreeSet<TripleId> = BTreeSet::new();
    for &f in &state.frontier {
        for nb in g.neighbors_unchecked(f) {
            if !state.edges.contains(&nb.triple) {
                pending.insert(nb.triple);
            }
        }
    }
    let mut adds: Vec<EditCandidate> = pending.into_iter().map(|id| make(EditOp::Add, id)).collect();
    adds.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.triple.cmp(&b.triple)));
    adds.truncate(state.config.k_max);

    let covered = state.covered_triples();
    let mut deletes: Vec<EditCandidate> = state
        .edges
        .iter()
        .filter(|id| !covered.contains(id))
        .map(|&id| make(EditOp::Delete, id))
        .collect();
    deletes.sort_by(|a, b| a.score.total_cmp(&b.score).then(a.triple.cmp(&b.triple)));
    deletes.truncate(state.config.k_max / 2);

    adds.extend(deletes);
    adds
}

/// Candidates plus the decision handed to the policy. In cap mode edits are
/// masked once the edge budget cannot cover one more; in greedy mode edits
/// without positive shaped gain are masked as well.
pub fn architect_decision(
    state: &EpisodeState,
    g: &KnowledgeGraph,
    weights: &FusionWeights,
    greedy: bool,
) -> (Vec<EditCandidate>, Decision) {
    let cands = architect_candidates(state, g, weights);
    let affordable = state.can_afford_delta(edit_cost(state));
    let mut mask: Vec<bool> = cands
        .iter()
        .map(|c| affordable && (!greedy || c.shaped_gain > 0.0))
        .collect();
    mask.push(true);
    let mut cand_feats = Vec::with_capacity(cands.len() * ARCHITECT_CAND_DIM);
    let mut action_feats = Vec::with_capacity(cands.len() + 1);
    for c in &cands {
        let f = c.actor_features();
        cand_feats.extend_from_slice(&f);
        action_feats.push(action_features(&f));
    }
    action_feats.push(stop_action_features());
    let decision = Decision {
        agent: AgentKind::Architect,
        obs: global_features(state, AgentKind::Architect),
        cand_feats,
        logit_offsets: vec![0.0; cands.len()],
        mask,
        action_feats,
        provenance: cands.iter().map(|c| vec![c.triple]).collect(),
    };
    (cands, decision)
}

/// Applies an edit (`Some`) or stop (`None`). Returns whether an edit was
/// accepted. Greedy mode turns an edit without positive shaped gain into a
/// stop.
pub fn architect_apply(
    state: &mut EpisodeState,
    g: &KnowledgeGraph,
    choice: Option<&EditCandidate>,
    greedy: bool,
) -> Result<bool> {
    let stop = |state: &mut EpisodeState, reason: &str| {
        state.stopped[AgentKind::Architect.index()] = true;
        state.push_event(
            AgentId::Architect,
            EventKind::Stop,
            Payload::Stop { reason: reason.to_string(), path: None },
            CostDelta::default(),
        );
    };
    let Some(c) = choice else {
        stop(state, "stop");
        return Ok(false);
    };
    if greedy && c.shaped_gain <= 0.0 {
        stop(state, "no positive shaped gain");
        return Ok(false);
    }
    match c.op {
        EditOp::Add if state.edges.contains(&c.triple) => {
            return Err(Error::InvalidAction(format!("triple {} already in subgraph", c.triple)));
        }
        EditOp::Delete if !state.edges.contains(&c.triple) => {
            return Err(Error::InvalidAction(format!("triple {} not in subgraph", c.triple)));
        }
        EditOp::Delete if state.covered_triples().contains(&c.triple) => {
            return Err(Error::InvalidAction(format!("triple {} backs curated evidence", c.triple)));
        }
        _ => {}
    }
    if g.triple(c.triple).is_none() {
        return Err(Error::InvalidTriple(c.triple.to_string()));
    }
    let cost = edit_cost(state);
    state.charge_delta(cost)?;
    match c.op {
        EditOp::Add => state.insert_edge(g, c.triple),
        EditOp::Delete => state.remove_edge(g, c.triple),
    }
    state.push_event(
        AgentId::Architect,
        EventKind::Edit,
        Payload::Edit { op: c.op, triple: TripleRef::new(g, c.triple), shaped_gain: c.shaped_gain },
        cost,
    );
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::case_graph;
    use super::*;
    use crate::episode::{Budgets, EpisodeConfig, Mode, Prices};
    use crate::kg::{load_triples, Triple};
    use crate::scoring::edge_features;

    fn case_state(g: &KnowledgeGraph, mode: Mode) -> EpisodeState {
        EpisodeState::new(g, "Who co-starred with Brian Backer?", mode, EpisodeConfig::default(), 7).unwrap()
    }

    fn generous() -> Mode {
        Mode::Cap(Budgets::new(8.0, 8.0, 512.0).unwrap())
    }

    fn add_of(cands: &[EditCandidate], g: &KnowledgeGraph, s: &str, r: &str, o: &str) -> EditCandidate {
        let t = Triple {
            subject: g.entity_id(s).unwrap(),
            relation: g.relation_id(r).unwrap(),
            object: g.entity_id(o).unwrap(),
        };
        let id = g.triple_id(t).unwrap();
        cands.iter().find(|c| c.triple == id && c.op == EditOp::Add).unwrap().clone()
    }

    #[test]
    fn case_study_add_sequence() {
        let g = case_graph();
        let mut s = case_state(&g, generous());
        let w = FusionWeights::default();
        let c = architect_candidates(&s, &g, &w);
        let first = add_of(&c, &g, "Moving Violations", "starred_actors", "Brian Backer");
        architect_apply(&mut s, &g, Some(&first), false).unwrap();
        let c = architect_candidates(&s, &g, &w);
        let tilly = add_of(&c, &g, "Moving Violations", "starred_actors", "Jennifer Tilly");
        architect_apply(&mut s, &g, Some(&tilly), false).unwrap();
        assert!(s.edges.contains(&tilly.triple));
        assert!(s.frontier.contains(&g.entity_id("Jennifer Tilly").unwrap()));
        assert_eq!(s.counters.c_edge, 2);
    }

    #[test]
    fn add_then_delete_restores_subgraph() {
        let g = case_graph();
        let mut s = case_state(&g, generous());
        let (nodes0, edges0, frontier0) = (s.nodes.clone(), s.edges.clone(), s.frontier.clone());
        let w = FusionWeights::default();
        let c = architect_candidates(&s, &g, &w);
        let add = c[0].clone();
        architect_apply(&mut s, &g, Some(&add), false).unwrap();
        let del = architect_candidates(&s, &g, &w)
            .into_iter()
            .find(|c| c.op == EditOp::Delete && c.triple == add.triple)
            .unwrap();
        architect_apply(&mut s, &g, Some(&del), false).unwrap();
        assert_eq!(s.edges, edges0);
        assert_eq!(s.nodes, nodes0);
        assert_eq!(s.frontier, frontier0);
        assert_eq!(s.counters.c_edge, 2);
    }

    #[test]
    fn stop_only_sets_flag() {
        let g = case_graph();
        let mut s = case_state(&g, generous());
        let (edges, counters) = (s.edges.clone(), s.counters);
        architect_apply(&mut s, &g, None, false).unwrap();
        assert!(s.stopped[0]);
        assert_eq!(s.edges, edges);
        assert_eq!(s.counters, counters);
        assert!(architect_candidates(&s, &g, &FusionWeights::default()).is_empty());
    }

    #[test]
    fn zero_edge_budget_masks_everything_but_stop() {
        let g = case_graph();
        let s = case_state(&g, Mode::Cap(Budgets::new(0.0, 4.0, 64.0).unwrap()));
        let (cands, d) = architect_decision(&s, &g, &FusionWeights::default(), false);
        assert!(!cands.is_empty());
        assert!(d.is_forced_stop());
        assert!(d.mask[d.stop_index()]);
    }

    #[test]
    fn no_frontier_adjacency_means_stop_only() {
        let g = load_triples("Alpha|r|Beta\nGamma|r|Delta").unwrap();
        let mut s = EpisodeState::new(&g, "alpha", generous(), EpisodeConfig::default(), 1).unwrap();
        let w = FusionWeights::default();
        let c = architect_candidates(&s, &g, &w);
        architect_apply(&mut s, &g, Some(&c[0]), false).unwrap();
        let (cands, d) = architect_decision(&s, &g, &w, false);
        // Only the delete of the lone edge remains.
        assert!(cands.iter().all(|c| c.op == EditOp::Delete));
        assert_eq!(d.n_candidates(), 1);
    }

    #[test]
    fn high_edge_price_makes_greedy_stop() {
        let g = case_graph();
        let s = case_state(&g, Mode::Price(Prices::new(5.0, 0.0, 0.0).unwrap()));
        let w = FusionWeights::default();
        let (cands, d) = architect_decision(&s, &g, &w, true);
        assert!(cands.iter().all(|c| c.shaped_gain < 0.0));
        assert!(d.is_forced_stop());
        let mut s2 = s.clone();
        assert!(!architect_apply(&mut s2, &g, Some(&cands[0]), true).unwrap());
        assert!(s2.stopped[0]);
    }

    #[test]
    fn ranking_matches_exhaustive_fused_scores() {
        let g = case_graph();
        let mut s = case_state(&g, generous());
        let w = FusionWeights([0.4, 0.3, 0.2, 0.1]);
        // Grow the subgraph a little so the frontier has several nodes.
        let c = architect_candidates(&s, &g, &w);
        architect_apply(&mut s, &g, Some(&c[0]), false).unwrap();

        let q = s.scorer.embedding().clone();
        let mut oracle: Vec<(f64, TripleId)> = Vec::new();
        for (i, t) in g.triples().iter().enumerate() {
            let id = TripleId(i as u32);
            let adjacent = s.frontier.contains(&t.subject) || s.frontier.contains(&t.object);
            if adjacent && !s.edges.contains(&id) {
                let f = edge_features(&q, *t, &g).unwrap();
                oracle.push((fused_score(&f, &w), id));
            }
        }
        oracle.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let got: Vec<TripleId> = architect_candidates(&s, &g, &w)
            .iter()
            .filter(|c| c.op == EditOp::Add)
            .map(|c| c.triple)
            .collect();
        let want: Vec<TripleId> = oracle.iter().map(|x| x.1).collect();
        assert_eq!(got, want);
    }

    #[test]
    fn applying_an_overflowing_edit_is_an_error() {
        let g = case_graph();
        let mut s = case_state(&g, Mode::Cap(Budgets::new(0.0, 4.0, 64.0).unwrap()));
        let c = architect_candidates(&s, &g, &FusionWeights::default());
        assert!(matches!(
            architect_apply(&mut s, &g, Some(&c[0]), false),
            Err(Error::BudgetOverflow { .. })
        ));
    }
}
