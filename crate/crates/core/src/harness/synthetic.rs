use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, QAExample};
use crate::error::{Error, Result};
use crate::kg::{EntityId, GraphBuilder, KnowledgeGraph, TripleId};

const RELATION_NAMES: [&str; 24] = [
    "directed_by",
    "starred_actors",
    "written_by",
    "has_genre",
    "release_year",
    "born_in",
    "located_in",
    "member_of",
    "spouse_of",
    "founded_by",
    "produced_by",
    "capital_of",
    "part_of",
    "employed_by",
    "studied_at",
    "influenced_by",
    "won_award",
    "plays_for",
    "composed_by",
    "edited_by",
    "owned_by",
    "sibling_of",
    "child_of",
    "parent_of",
];

const TEMPLATES: usize = 2;
const MAX_GOLD_PATHS: usize = 64;

/// Shape of a generated multi-hop task family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub entities: usize,
    pub relations: usize,
    pub hops: usize,
    pub train: usize,
    pub eval: usize,
    /// Random extra triples per gold triple.
    pub distractor_multiplier: f64,
    /// Answers branching off the last intermediate node.
    pub branching: usize,
    pub template: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        SyntheticTaskConfig {
            entities: 200,
            relations: 12,
            hops: 2,
            train: 1000,
            eval: 200,
            distractor_multiplier: 0.25,
            branching: 1,
            template: 0,
            seed: 0,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.hops) {
            return Err(Error::Config(format!("hops must be 1, 2 or 3, got {}", self.hops)));
        }
        if self.relations == 0 || self.relations > RELATION_NAMES.len() {
            return Err(Error::Config(format!("relations must be in 1..={}", RELATION_NAMES.len())));
        }
        if !(self.distractor_multiplier.is_finite() && self.distractor_multiplier >= 0.0) {
            return Err(Error::Config("distractor_multiplier must be nonnegative".into()));
        }
        if self.branching == 0 {
            return Err(Error::Config("branching must be positive".into()));
        }
        if self.template >= TEMPLATES {
            return Err(Error::Config(format!("template must be below {TEMPLATES}")));
        }
        if self.entities < self.hops + self.branching + 1 {
            return Err(Error::Infeasible(format!(
                "{} entities cannot hold a {}-hop chain with {} answers",
                self.entities, self.hops, self.branching
            )));
        }
        Ok(())
    }
}

/// Unique pronounceable single-token names.
fn entity_names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    const C: &[u8] = b"bdfgklmnprstvz";
    const V: &[u8] = b"aeiou";
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut s = String::new();
        for i in 0..3 {
            let c = C[rng.gen_range(0..C.len())] as char;
            s.push(if i == 0 { c.to_ascii_uppercase() } else { c });
            s.push(V[rng.gen_range(0..V.len())] as char);
        }
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn question_text(template: usize, anchor: &str, rels: &[&str]) -> String {
    match template {
        0 => format!("which entity via {} from [{anchor}]", rels.join(" then ")),
        _ => format!("starting at [{anchor}] follow {}", rels.join(" then ")),
    }
}

type RawTriple = (usize, usize, usize);

/// Bound on placement attempts per question and per distractor.
const MAX_ATTEMPTS: usize = 64;
const REFILL_PASSES: usize = 16;

#[derive(Clone)]
struct Spec {
    anchor: usize,
    relations: Vec<usize>,
    answers: Vec<usize>,
}

/// Triple store under construction with forward and reverse adjacency.
struct Draft {
    triples: Vec<RawTriple>,
    index: HashSet<RawTriple>,
    out: Vec<Vec<(usize, usize, usize)>>,
    inc: Vec<Vec<usize>>,
}

impl Draft {
    fn new(n: usize) -> Self {
        Draft { triples: Vec::new(), index: HashSet::new(), out: vec![Vec::new(); n], inc: vec![Vec::new(); n] }
    }

    fn push(&mut self, t: RawTriple) {
        let i = self.triples.len();
        self.index.insert(t);
        self.triples.push(t);
        self.out[t.0].push((t.1, t.2, i));
        self.inc[t.2].push(t.0);
    }

    /// Undoes pushes down to `len` triples (pushes are stack-ordered).
    fn truncate(&mut self, len: usize) {
        while self.triples.len() > len {
            let t = self.triples.pop().expect("nonempty");
            self.index.remove(&t);
            self.out[t.0].pop();
            self.inc[t.2].pop();
        }
    }

    /// Breadth-first distances up to `max_depth`, forward or reverse.
    fn depths(&self, from: usize, max_depth: usize, forward: bool) -> HashMap<usize, usize> {
        let mut dist = HashMap::from([(from, 0)]);
        let mut q = VecDeque::from([from]);
        while let Some(u) = q.pop_front() {
            let d = dist[&u];
            if d == max_depth {
                continue;
            }
            let next: Vec<usize> =
                if forward { self.out[u].iter().map(|&(_, v, _)| v).collect() } else { self.inc[u].clone() };
            for v in next {
                dist.entry(v).or_insert_with(|| {
                    q.push_back(v);
                    d + 1
                });
            }
        }
        dist
    }

    /// Whether adding `u → v` would give some accepted question an answer
    /// closer than `hops` to its anchor.
    fn creates_shortcut(&self, u: usize, v: usize, hops: usize, by_anchor: &HashMap<usize, Vec<usize>>, specs: &[Spec]) -> bool {
        let back = self.depths(u, hops - 1, false);
        let fwd = self.depths(v, hops - 1, true);
        back.iter().any(|(a, &da)| {
            by_anchor.get(a).is_some_and(|qs| {
                qs.iter().any(|&q| specs[q].answers.iter().any(|x| fwd.get(x).is_some_and(|&df| da + 1 + df < hops)))
            })
        })
    }

    /// Answers reachable by following `relations` in order, with the paths.
    fn chain(&self, anchor: usize, relations: &[usize]) -> (Vec<Vec<usize>>, Vec<usize>) {
        let mut paths = chain_paths(&self.out, anchor, relations);
        paths.sort();
        let mut answers: Vec<usize> = paths.iter().map(|p| self.triples[*p.last().expect("h ≥ 1")].2).collect();
        answers.sort_unstable();
        answers.dedup();
        (paths, answers)
    }

    /// Every answer sits at directed distance exactly `hops`.
    fn audit(&self, anchor: usize, answers: &[usize], hops: usize) -> bool {
        let d = self.depths(anchor, hops, true);
        !answers.is_empty() && answers.iter().all(|a| d.get(a) == Some(&hops))
    }
}

/// Every directed path from `anchor` following `relations` in order, as
/// triple indices.
fn chain_paths(out: &[Vec<(usize, usize, usize)>], anchor: usize, relations: &[usize]) -> Vec<Vec<usize>> {
    let mut paths: Vec<(usize, Vec<usize>)> = vec![(anchor, Vec::new())];
    for &r in relations {
        let mut next = Vec::new();
        for (node, path) in &paths {
            for &(rel, obj, t) in &out[*node] {
                if rel == r {
                    let mut p = path.clone();
                    p.push(t);
                    next.push((obj, p));
                }
            }
        }
        paths = next;
    }
    paths.into_iter().map(|(_, p)| p).collect()
}

/// Length of the shortest directed path from `from` to `to`, searching up to
/// `max_depth` hops.
pub fn shortest_directed_distance(g: &KnowledgeGraph, from: EntityId, to: EntityId, max_depth: usize) -> Option<usize> {
    let mut dist = HashMap::from([(from, 0usize)]);
    let mut q = VecDeque::from([from]);
    while let Some(u) = q.pop_front() {
        if u == to {
            return Some(dist[&u]);
        }
        let d = dist[&u];
        if d == max_depth {
            continue;
        }
        for n in g.out_neighbors(u) {
            if !dist.contains_key(&n.entity) {
                dist.insert(n.entity, d + 1);
                q.push_back(n.entity);
            }
        }
    }
    None
}

struct Generator<'a> {
    cfg: &'a SyntheticTaskConfig,
    rng: ChaCha8Rng,
    draft: Draft,
    specs: Vec<Spec>,
    by_anchor: HashMap<usize, Vec<usize>>,
}

impl Generator<'_> {
    fn try_add(&mut self, t: RawTriple) -> bool {
        if t.0 == t.2 || self.draft.index.contains(&t) {
            return false;
        }
        if self.draft.creates_shortcut(t.0, t.2, self.cfg.hops, &self.by_anchor, &self.specs) {
            return false;
        }
        self.draft.push(t);
        true
    }

    /// Places one fresh chain and its question, rolling back on failure.
    fn place_question(&mut self) -> bool {
        let cfg = self.cfg;
        let mark = self.draft.triples.len();
        let anchor = self.rng.gen_range(0..cfg.entities);
        let relations: Vec<usize> = (0..cfg.hops).map(|_| self.rng.gen_range(0..cfg.relations)).collect();
        let mut on_chain = vec![anchor];
        let mut current = anchor;
        for (h, &r) in relations.iter().enumerate() {
            let width = if h + 1 == cfg.hops { cfg.branching } else { 1 };
            let mut picked = Vec::new();
            for _ in 0..MAX_ATTEMPTS {
                if picked.len() == width {
                    break;
                }
                let v = self.rng.gen_range(0..cfg.entities);
                if !on_chain.contains(&v) && !picked.contains(&v) && self.try_add((current, r, v)) {
                    picked.push(v);
                }
            }
            if picked.len() < width {
                self.draft.truncate(mark);
                return false;
            }
            on_chain.extend_from_slice(&picked);
            current = picked[0];
        }
        let (_, answers) = self.draft.chain(anchor, &relations);
        if !self.draft.audit(anchor, &answers, cfg.hops) {
            self.draft.truncate(mark);
            return false;
        }
        self.by_anchor.entry(anchor).or_default().push(self.specs.len());
        self.specs.push(Spec { anchor, relations, answers });
        true
    }

    fn place_distractors(&mut self, n: usize) {
        let cfg = self.cfg;
        let mut added = 0;
        for _ in 0..n.saturating_mul(MAX_ATTEMPTS) {
            if added == n {
                break;
            }
            let t = (
                self.rng.gen_range(0..cfg.entities),
                self.rng.gen_range(0..cfg.relations),
                self.rng.gen_range(0..cfg.entities),
            );
            added += self.try_add(t) as usize;
        }
    }

    fn fill(&mut self, need: usize) {
        for _ in 0..need.saturating_mul(MAX_ATTEMPTS) {
            if self.specs.len() >= need {
                break;
            }
            self.place_question();
        }
    }

    /// Recomputes each question's chain closure (later edges may extend it)
    /// and keeps those still passing the audit.
    fn finalize(&mut self) -> Vec<(Spec, Vec<Vec<usize>>)> {
        let mut kept = Vec::new();
        for spec in &self.specs {
            let (mut paths, answers) = self.draft.chain(spec.anchor, &spec.relations);
            if self.draft.audit(spec.anchor, &answers, self.cfg.hops) {
                paths.truncate(MAX_GOLD_PATHS);
                kept.push((Spec { answers, ..spec.clone() }, paths));
            }
        }
        kept
    }
}

/// Builds a shared graph of fresh gold relation chains plus random
/// distractor triples. Each question names its anchor and relation
/// sequence; its gold paths are all directed paths following that sequence.
/// Edges are only added when they leave every placed answer at directed
/// distance exactly `hops` from its anchor.
pub fn generate_tasks(cfg: &SyntheticTaskConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let names = entity_names(cfg.entities, &mut rng);
    let need = cfg.train + cfg.eval;
    let mut gen = Generator { cfg, rng, draft: Draft::new(cfg.entities), specs: Vec::new(), by_anchor: HashMap::new() };
    gen.fill(need);
    let gold = gen.draft.triples.len();
    gen.place_distractors((cfg.distractor_multiplier * gold as f64).round() as usize);
    let mut accepted = gen.finalize();
    // A later edge can extend a chain closure to a shortcut answer; drop
    // those questions and place replacements until the set is stable.
    for _ in 0..REFILL_PASSES {
        if accepted.len() >= need {
            break;
        }
        gen.specs = accepted.iter().map(|(s, _)| s.clone()).collect();
        gen.by_anchor.clear();
        for (i, s) in gen.specs.iter().enumerate() {
            gen.by_anchor.entry(s.anchor).or_default().push(i);
        }
        gen.fill(need);
        accepted = gen.finalize();
    }
    if accepted.len() < need {
        return Err(Error::Infeasible(format!(
            "could only place {} of {need} shortcut-free questions",
            accepted.len()
        )));
    }
    accepted.truncate(need);
    let Generator { mut rng, draft, .. } = gen;

    let mut b = GraphBuilder::new();
    for n in &names {
        b.add_entity(n)?;
    }
    let mut ids = Vec::with_capacity(draft.triples.len());
    for &(s, r, o) in &draft.triples {
        ids.push(b.add_triple(&names[s], RELATION_NAMES[r], &names[o])?);
    }
    let graph = Arc::new(b.build()?);
    let mut examples: Vec<QAExample> = accepted
        .into_iter()
        .map(|(spec, paths)| {
            let rels: Vec<&str> = spec.relations.iter().map(|&r| RELATION_NAMES[r]).collect();
            QAExample {
                question: question_text(cfg.template, &names[spec.anchor], &rels),
                anchors: vec![names[spec.anchor].clone()],
                gold_paths: paths.into_iter().map(|p| p.into_iter().map(|t| ids[t]).collect::<Vec<TripleId>>()).collect(),
                answers: spec.answers.into_iter().map(|a| names[a].clone()).collect(),
            }
        })
        .collect();
    examples.shuffle(&mut rng);
    let eval = examples.split_off(cfg.train);
    Ok(Dataset { graph, train: examples, eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::textualize_triple;
    use crate::harness::reader_oracle;

    fn small(hops: usize, distractors: f64) -> SyntheticTaskConfig {
        SyntheticTaskConfig { entities: 60, relations: 6, hops, train: 40, eval: 10, distractor_multiplier: distractors, seed: 3, ..Default::default() }
    }

    #[test]
    fn one_hop_without_distractors_is_exactly_gold() {
        let d = generate_tasks(&small(1, 0.0)).unwrap();
        let gold: HashSet<TripleId> = d.train.iter().chain(&d.eval).flat_map(|e| e.gold_paths.iter().flatten().copied()).collect();
        // Every triple is some chain's edge; chains of dropped questions stay
        // in the graph, so the gold set is a subset.
        assert!(gold.len() <= d.graph.triple_count());
        let all: Vec<_> = (0..d.graph.triple_count()).map(|i| textualize_triple(&d.graph, TripleId(i as u32)).unwrap()).collect();
        for ex in d.train.iter().chain(&d.eval) {
            assert_eq!(reader_oracle(&all, ex), 1);
        }
    }

    #[test]
    fn deterministic_for_a_seed() {
        let a = generate_tasks(&small(2, 0.25)).unwrap();
        let b = generate_tasks(&small(2, 0.25)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.graph.triples(), b.graph.triples());
    }

    #[test]
    fn no_shortcut_to_any_answer() {
        for hops in [2, 3] {
            let d = generate_tasks(&small(hops, 0.25)).unwrap();
            let g = &d.graph;
            for ex in d.train.iter().chain(&d.eval) {
                let a = g.entity_id(&ex.anchors[0]).unwrap();
                for ans in &ex.answers {
                    let v = g.entity_id(ans).unwrap();
                    assert_eq!(shortest_directed_distance(g, a, v, hops), Some(hops), "{}", ex.question);
                }
                for p in &ex.gold_paths {
                    assert_eq!(p.len(), hops);
                    assert_eq!(g.triple(p[0]).unwrap().subject, a);
                    for w in p.windows(2) {
                        assert_eq!(g.triple(w[0]).unwrap().object, g.triple(w[1]).unwrap().subject);
                    }
                }
            }
        }
    }

    #[test]
    fn question_anchors_resolve() {
        let d = generate_tasks(&small(2, 0.25)).unwrap();
        for ex in &d.train {
            let toks = crate::text::tokenize(&ex.question);
            let anchors = d.graph.match_anchors(&toks).unwrap();
            assert_eq!(anchors, vec![d.graph.entity_id(&ex.anchors[0]).unwrap()]);
        }
    }

    #[test]
    fn too_few_entities_is_infeasible() {
        let cfg = SyntheticTaskConfig { entities: 2, ..small(2, 0.0) };
        assert!(matches!(generate_tasks(&cfg), Err(Error::Infeasible(_))));
    }

    #[test]
    fn default_family_generates() {
        let d = generate_tasks(&SyntheticTaskConfig::default()).unwrap();
        assert_eq!(d.train.len(), 1000);
        assert_eq!(d.eval.len(), 200);
        assert_eq!(d.graph.entity_count(), 200);
    }
}
