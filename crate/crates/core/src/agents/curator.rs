//! Context curator: redundancy-aware selection of textualised triples and
//! paths under the token budget.

use super::{action_features, stop_action_features, AgentKind, Decision, CURATOR_CAND_DIM, GLOBAL_DIM};
use crate::episode::{AgentId, CostDelta, EpisodeState, EventKind, Hop, Payload, Resource, Snippet, SnippetId, TripleRef};
use crate::error::{Error, Result};
use crate::kg::{KnowledgeGraph, TripleId};
use crate::scoring::{embed_str, sim01, Embedding};
use crate::text::whitespace_count;

/// A pool entry with its redundancy against the current selection.
#[derive(Clone, Debug, PartialEq)]
pub struct CuratorCandidate {
    pub snippet: Snippet,
    /// `max_{s ∈ S} sim01(text(c), text(s))`, 0 when `S` is empty.
    pub redundancy: f64,
    /// `base_score − μ · redundancy`.
    pub marginal: f64,
    pub features: [f64; CURATOR_CAND_DIM],
}

fn triple_text(g: &KnowledgeGraph, id: TripleId) -> Result<String> {
    let t = g.triple(id).ok_or_else(|| Error::InvalidTriple(id.to_string()))?;
    Ok(format!("{} --- {}: {}", g.entity_name(t.subject), g.relation_name(t.relation), g.entity_name(t.object)))
}

/// `"<subject> --- <relation>: <object>"`. The base score is left at 0.
pub fn textualize_triple(g: &KnowledgeGraph, id: TripleId) -> Result<Snippet> {
    let text = triple_text(g, id)?;
    Ok(Snippet { id: SnippetId::Triple(id), tok: whitespace_count(&text) as u64, text, provenance: vec![id], base_score: 0.0 })
}

/// Hop snippets joined by `" ; "`, each in stored triple orientation.
pub fn textualize_path(g: &KnowledgeGraph, path: &[Hop], index: u32) -> Result<Snippet> {
    if path.is_empty() {
        return Err(Error::InvalidAction("cannot textualize an empty path".into()));
    }
    let parts = path.iter().map(|h| triple_text(g, h.triple)).collect::<Result<Vec<_>>>()?;
    let text = parts.join(" ; ");
    Ok(Snippet {
        id: SnippetId::Path(index),
        tok: whitespace_count(&text) as u64,
        text,
        provenance: path.iter().map(|h| h.triple).collect(),
        base_score: 0.0,
    })
}

fn token_scale(state: &EpisodeState) -> f64 {
    match &state.caps {
        Some(b) => b.beta_tok.max(1.0),
        None => state.config.price_tok_scale,
    }
}

fn lat_cost(state: &EpisodeState) -> CostDelta {
    let mut c = CostDelta::default();
    if state.config.lat_counts_all_actions {
        c.lat = 1;
    }
    c
}

/// Every unselected triple in `G_t` and every completed path whose triples
/// are all still in `G_t`, in that order. `base_score` is the
/// parameter-free relevance `sim01(q, text)`.
fn pool(state: &EpisodeState, g: &KnowledgeGraph) -> Vec<Snippet> {
    let taken: Vec<&SnippetId> = state.selected.iter().map(|s| &s.id).collect();
    let q = state.scorer.embedding();
    let mut out = Vec::new();
    for &id in &state.edges {
        if taken.contains(&&SnippetId::Triple(id)) {
            continue;
        }
        if let Ok(mut s) = textualize_triple(g, id) {
            s.base_score = sim01(q, &embed_str(&s.text));
            out.push(s);
        }
    }
    for (i, p) in state.nav.paths.iter().enumerate() {
        let id = SnippetId::Path(i as u32);
        if taken.contains(&&id) || !p.iter().all(|h| state.edges.contains(&h.triple)) {
            continue;
        }
        if let Ok(mut s) = textualize_path(g, p, i as u32) {
            s.base_score = sim01(q, &embed_str(&s.text));
            out.push(s);
        }
    }
    out
}

/// The pool scored by marginal relevance. Empty once the curator stopped.
pub fn curator_candidates(state: &EpisodeState, g: &KnowledgeGraph) -> Vec<CuratorCandidate> {
    if state.stopped[AgentKind::Curator.index()] {
        return Vec::new();
    }
    let mu = state.config.redundancy_weight;
    let chosen: Vec<Embedding> = state.selected.iter().map(|s| embed_str(&s.text)).collect();
    let covered = state.covered_triples();
    let scale = token_scale(state);
    pool(state, g)
        .into_iter()
        .map(|snippet| {
            let e = embed_str(&snippet.text);
            let redundancy = chosen.iter().map(|c| sim01(&e, c)).fold(0.0, f64::max);
            let overlap = snippet.provenance.iter().filter(|t| covered.contains(t)).count() as f64
                / snippet.provenance.len() as f64;
            let features = [snippet.base_score, snippet.tok as f64 / scale, state.prices.lambda_tok, overlap];
            CuratorCandidate { marginal: snippet.base_score - mu * redundancy, redundancy, features, snippet }
        })
        .collect()
}

/// In cap mode snippets longer than the remaining token budget are masked.
/// The redundancy penalty enters the policy as a fixed logit offset.
pub fn curator_decision(state: &EpisodeState, g: &KnowledgeGraph) -> (Vec<CuratorCandidate>, Decision) {
    let cands = curator_candidates(state, g);
    let extra = lat_cost(state);
    let mu = state.config.redundancy_weight;
    let mut mask: Vec<bool> = cands
        .iter()
        .map(|c| state.can_afford_delta(extra.plus(CostDelta::of(Resource::Tok, c.snippet.tok))))
        .collect();
    mask.push(true);
    let mut cand_feats = Vec::with_capacity(cands.len() * CURATOR_CAND_DIM);
    let mut action_feats = Vec::with_capacity(cands.len() + 1);
    for c in &cands {
        cand_feats.extend_from_slice(&c.features);
        let mut slots = c.features.to_vec();
        slots.push(c.redundancy);
        action_feats.push(action_features(&slots));
    }
    action_feats.push(stop_action_features());
    let decision = Decision {
        agent: AgentKind::Curator,
        obs: super::global_features(state, AgentKind::Curator),
        cand_feats,
        logit_offsets: cands.iter().map(|c| -mu * c.redundancy).collect(),
        mask,
        action_feats,
        provenance: cands.iter().map(|c| c.snippet.provenance.clone()).collect(),
    };
    debug_assert_eq!(decision.obs.len(), GLOBAL_DIM);
    (cands, decision)
}

/// Selects a snippet (`Some`) or stops (`None`). Returns whether a snippet
/// was added.
pub fn curator_apply(state: &mut EpisodeState, g: &KnowledgeGraph, choice: Option<&CuratorCandidate>) -> Result<bool> {
    let Some(c) = choice else {
        state.stopped[AgentKind::Curator.index()] = true;
        state.push_event(
            AgentId::Curator,
            EventKind::Stop,
            Payload::Stop { reason: "stop".into(), path: None },
            CostDelta::default(),
        );
        return Ok(false);
    };
    let s = &c.snippet;
    if state.selected.iter().any(|x| x.id == s.id) {
        return Err(Error::InvalidAction(format!("snippet {} already selected", s.id)));
    }
    if s.provenance.is_empty() {
        return Err(Error::InvalidAction(format!("snippet {} has no provenance", s.id)));
    }
    if let Some(t) = s.provenance.iter().find(|t| !state.edges.contains(t)) {
        return Err(Error::InvalidAction(format!("snippet {} cites triple {t} outside the subgraph", s.id)));
    }
    if s.tok != whitespace_count(&s.text) as u64 {
        return Err(Error::InvalidAction(format!("snippet {} token count is stale", s.id)));
    }
    let cost = lat_cost(state).plus(CostDelta::of(Resource::Tok, s.tok));
    state.charge_delta(cost)?;
    let provenance = s.provenance.iter().map(|&t| TripleRef::new(g, t)).collect();
    state.push_event(
        AgentId::Curator,
        EventKind::Curate,
        Payload::Curate { snippet: s.id.to_string(), text: s.text.clone(), tok: s.tok, provenance },
        cost,
    );
    state.selected.push(s.clone());
    Ok(true)
}
