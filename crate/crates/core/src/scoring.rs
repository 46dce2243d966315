//! Hashed lexical embeddings and the four edge features fused into the
//! architect's edge score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{Direction, EntityId, KnowledgeGraph, RelationId, Triple};
use crate::text::tokenize;

/// Embedding width.
pub const EMBED_DIM: usize = 128;
/// Width after folding an embedding for observation vectors.
pub const POOLED_DIM: usize = 16;
/// Neighbours consulted for the neighbourhood cue.
pub const NEIGHBOR_CAP: usize = 8;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const SIGN_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn fnv1a(offset: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(offset, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// L2-normalised signed feature-hashing vector (or all zeros).
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding(Box<[f64]>);

impl Embedding {
    pub fn zeros() -> Self {
        Embedding(vec![0.0; EMBED_DIM].into_boxed_slice())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&x| x == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    /// Mean of the eight 16-wide folds.
    pub fn pooled(&self) -> [f64; POOLED_DIM] {
        pool(&self.0)
    }
}

/// Folds a `EMBED_DIM` vector into `POOLED_DIM` by averaging consecutive folds.
pub fn pool(v: &[f64]) -> [f64; POOLED_DIM] {
    let folds = v.len() / POOLED_DIM;
    let mut out = [0.0; POOLED_DIM];
    for f in 0..folds {
        for (j, o) in out.iter_mut().enumerate() {
            *o += v[f * POOLED_DIM + j];
        }
    }
    if folds > 0 {
        for o in &mut out {
            *o /= folds as f64;
        }
    }
    out
}

/// Embeds a token sequence. Tokens are re-normalised (case-folded, split on
/// non-alphanumerics) so raw words and pre-tokenised input agree.
pub fn embed_text<S: AsRef<str>>(tokens: &[S]) -> Embedding {
    let mut v = vec![0.0; EMBED_DIM];
    for raw in tokens {
        for tok in tokenize(raw.as_ref()) {
            let bytes = tok.as_bytes();
            let bucket = (fnv1a(FNV_OFFSET, bytes) % EMBED_DIM as u64) as usize;
            let sign = if fnv1a(FNV_OFFSET ^ SIGN_SALT, bytes) >> 63 == 0 {
                1.0
            } else {
                -1.0
            };
            v[bucket] += sign;
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in &mut v {
            *x /= norm;
        }
    }
    Embedding(v.into_boxed_slice())
}

/// Embeds free text.
pub fn embed_str(text: &str) -> Embedding {
    embed_text(&[text])
}

/// Cosine similarity mapped to `[0, 1]`; 0.5 when either side is zero.
pub fn sim01(a: &Embedding, b: &Embedding) -> f64 {
    if a.is_zero() || b.is_zero() {
        return 0.5;
    }
    let cos = a.dot(b) / (a.norm() * b.norm());
    ((1.0 + cos) / 2.0).clamp(0.0, 1.0)
}

/// The four per-edge features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeFeatures {
    pub phi_ent: f64,
    pub phi_rel: f64,
    pub phi_nbr: f64,
    pub phi_deg: f64,
}

impl EdgeFeatures {
    pub fn to_array(self) -> [f64; 4] {
        [self.phi_ent, self.phi_rel, self.phi_nbr, self.phi_deg]
    }
}

/// Fusion weights `w1..w4`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights(pub [f64; 4]);

impl Default for FusionWeights {
    fn default() -> Self {
        FusionWeights([0.25; 4])
    }
}

pub fn fused_score(features: &EdgeFeatures, weights: &FusionWeights) -> f64 {
    features
        .to_array()
        .iter()
        .zip(weights.0.iter())
        .map(|(f, w)| f * w)
        .sum()
}

/// `1 / (1 + ln(1 + degree))`.
pub fn degree_prior(degree: usize) -> f64 {
    1.0 / (1.0 + (1.0 + degree as f64).ln())
}

/// Mean similarity between the question and the names of up to
/// `NEIGHBOR_CAP` neighbours of `v` (in sorted neighbour order); 0 if none.
pub fn neighborhood_cue(question: &Embedding, g: &KnowledgeGraph, v: EntityId) -> Result<f64> {
    let neighbors = g.neighbors(v, Direction::Both)?;
    let take = neighbors.len().min(NEIGHBOR_CAP);
    if take == 0 {
        return Ok(0.0);
    }
    let total: f64 = neighbors[..take]
        .iter()
        .map(|n| sim01(question, g.entity_embedding(n.entity)))
        .sum();
    Ok(total / take as f64)
}

/// Features of edge `(u, r, v)` for a question embedding. Evaluates every
/// similarity directly; [`QuestionScorer`] is the cached equivalent.
pub fn edge_features(question: &Embedding, triple: Triple, g: &KnowledgeGraph) -> Result<EdgeFeatures> {
    if g.triple_id(triple).is_none() {
        return Err(Error::InvalidTriple(format!("{triple:?} is not in the graph")));
    }
    let phi_ent = sim01(question, g.entity_embedding(triple.subject))
        .max(sim01(question, g.entity_embedding(triple.object)));
    let phi_rel = sim01(question, g.relation_embedding(triple.relation));
    let phi_nbr = neighborhood_cue(question, g, triple.object)?;
    let phi_deg = degree_prior(g.degree(triple.object));
    Ok(EdgeFeatures { phi_ent, phi_rel, phi_nbr, phi_deg })
}

/// Question-conditioned similarity tables over a whole graph, so repeated
/// feature evaluation inside an episode costs a lookup.
#[derive(Clone, Debug)]
pub struct QuestionScorer {
    embedding: Embedding,
    entity_sim: Vec<f64>,
    relation_sim: Vec<f64>,
    /// Order in which each relation's name first appears verbatim in the
    /// question (`None` when it does not appear).
    relation_rank: Vec<Option<usize>>,
}

impl QuestionScorer {
    pub fn new(question: &[String], g: &KnowledgeGraph) -> Self {
        let embedding = embed_text(question);
        let entity_sim = (0..g.entity_count())
            .map(|i| sim01(&embedding, g.entity_embedding(EntityId(i as u32))))
            .collect();
        let relation_sim = (0..g.relation_count())
            .map(|i| sim01(&embedding, g.relation_embedding(RelationId(i as u32))))
            .collect();
        let mut mentions: Vec<(usize, usize)> = (0..g.relation_count())
            .filter_map(|i| {
                let name = tokenize(g.relation_name(RelationId(i as u32)));
                first_occurrence(question, &name).map(|pos| (pos, i))
            })
            .collect();
        mentions.sort_unstable();
        let mut relation_rank = vec![None; g.relation_count()];
        for (rank, &(_, i)) in mentions.iter().enumerate() {
            relation_rank[i] = Some(rank);
        }
        QuestionScorer { embedding, entity_sim, relation_sim, relation_rank }
    }

    /// Position of relation `r` among the relations the question names.
    pub fn relation_rank(&self, r: RelationId) -> Option<usize> {
        self.relation_rank[r.index()]
    }

    pub fn embedding(&self) -> &Embedding {
        &self.embedding
    }

    pub fn entity_sim(&self, e: EntityId) -> f64 {
        self.entity_sim[e.index()]
    }

    pub fn relation_sim(&self, r: RelationId) -> f64 {
        self.relation_sim[r.index()]
    }

    /// Same values as [`edge_features`], without re-validating the triple.
    pub fn features(&self, triple: Triple, g: &KnowledgeGraph) -> EdgeFeatures {
        let phi_ent = self.entity_sim(triple.subject).max(self.entity_sim(triple.object));
        let phi_rel = self.relation_sim(triple.relation);
        let nbrs = g.neighbors_unchecked(triple.object);
        let take = nbrs.len().min(NEIGHBOR_CAP);
        let phi_nbr = if take == 0 {
            0.0
        } else {
            nbrs.iter().take(take).map(|n| self.entity_sim(n.entity)).sum::<f64>() / take as f64
        };
        let phi_deg = degree_prior(g.degree(triple.object));
        EdgeFeatures { phi_ent, phi_rel, phi_nbr, phi_deg }
    }
}

fn first_occurrence(haystack: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    haystack.windows(needle.len()).position(|w| w == needle)
}
