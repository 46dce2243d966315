//! Immutable typed triple store with adjacency and alias indexes.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{embed_str, embed_text, sim01, Embedding};
use crate::text::{fold, tokenize};

macro_rules! dense_id {
    ($name:ident) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub u32);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(EntityId);
dense_id!(RelationId);
dense_id!(TripleId);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub subject: EntityId,
    pub relation: RelationId,
    pub object: EntityId,
}

/// Which adjacency to read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
    Both,
}

/// Orientation of a single traversal relative to the node it leaves from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeDir {
    Out,
    In,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub relation: RelationId,
    pub entity: EntityId,
    pub direction: EdgeDir,
    pub triple: TripleId,
}

/// Incremental construction; the finished graph never changes.
#[derive(Default)]
pub struct GraphBuilder {
    entity_names: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_lookup: HashMap<Triple, TripleId>,
    aliases: Vec<(String, EntityId)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id for `name`, creating the entity on first sight.
    pub fn add_entity(&mut self, name: &str) -> Result<EntityId> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::InvalidTriple("empty entity name".into()));
        }
        let key = fold(name);
        if let Some(&id) = self.entity_lookup.get(&key) {
            return Ok(id);
        }
        let id = EntityId(self.entity_names.len() as u32);
        self.entity_names.push(name.to_string());
        self.entity_lookup.insert(key, id);
        Ok(id)
    }

    fn add_relation(&mut self, name: &str) -> Result<RelationId> {
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::InvalidTriple("empty relation name".into()));
        }
        let key = fold(name);
        if let Some(&id) = self.relation_lookup.get(&key) {
            return Ok(id);
        }
        let id = RelationId(self.relation_names.len() as u32);
        self.relation_names.push(name.to_string());
        self.relation_lookup.insert(key, id);
        Ok(id)
    }

    /// Inserts a triple by surface names; duplicates return the existing id.
    pub fn add_triple(&mut self, subject: &str, relation: &str, object: &str) -> Result<TripleId> {
        let triple = Triple {
            subject: self.add_entity(subject)?,
            relation: self.add_relation(relation)?,
            object: self.add_entity(object)?,
        };
        Ok(self.insert(triple))
    }

    fn insert(&mut self, triple: Triple) -> TripleId {
        if let Some(&id) = self.triple_lookup.get(&triple) {
            return id;
        }
        let id = TripleId(self.triples.len() as u32);
        self.triples.push(triple);
        self.triple_lookup.insert(triple, id);
        id
    }

    /// Registers `alias` as another surface form of an existing entity.
    pub fn add_alias(&mut self, alias: &str, canonical: &str) -> Result<()> {
        let id = *self
            .entity_lookup
            .get(&fold(canonical))
            .ok_or_else(|| Error::InvalidTriple(format!("alias target '{canonical}' is unknown")))?;
        if alias.trim().is_empty() {
            return Err(Error::InvalidTriple("empty alias".into()));
        }
        self.aliases.push((alias.trim().to_string(), id));
        Ok(())
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn build(self) -> Result<KnowledgeGraph> {
        if self.triples.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let n = self.entity_names.len();
        let mut out_adj: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        let mut in_adj: Vec<Vec<Neighbor>> = vec![Vec::new(); n];
        for (i, t) in self.triples.iter().enumerate() {
            let tid = TripleId(i as u32);
            out_adj[t.subject.index()].push(Neighbor {
                relation: t.relation,
                entity: t.object,
                direction: EdgeDir::Out,
                triple: tid,
            });
            in_adj[t.object.index()].push(Neighbor {
                relation: t.relation,
                entity: t.subject,
                direction: EdgeDir::In,
                triple: tid,
            });
        }
        let key = |nb: &Neighbor| (nb.relation, nb.entity, nb.triple);
        for list in out_adj.iter_mut().chain(in_adj.iter_mut()) {
            list.sort_by_key(key);
        }
        let both_adj = out_adj
            .iter()
            .zip(in_adj.iter())
            .map(|(o, i)| o.iter().chain(i.iter()).copied().collect())
            .collect();

        let mut surface: HashMap<Vec<String>, EntityId> = HashMap::new();
        for (i, name) in self.entity_names.iter().enumerate() {
            let toks = tokenize(name);
            if !toks.is_empty() {
                surface.entry(toks).or_insert(EntityId(i as u32));
            }
        }
        let mut alias_lookup = HashMap::new();
        for (alias, id) in &self.aliases {
            let toks = tokenize(alias);
            if !toks.is_empty() {
                surface.entry(toks).or_insert(*id);
            }
            alias_lookup.insert(fold(alias), *id);
        }
        let max_surface_len = surface.keys().map(Vec::len).max().unwrap_or(0);

        let entity_emb = self.entity_names.iter().map(|s| embed_str(s)).collect();
        let relation_emb = self.relation_names.iter().map(|s| embed_str(s)).collect();

        Ok(KnowledgeGraph {
            entity_names: self.entity_names,
            entity_lookup: self.entity_lookup,
            alias_lookup,
            relation_names: self.relation_names,
            relation_lookup: self.relation_lookup,
            triples: self.triples,
            triple_lookup: self.triple_lookup,
            out_adj,
            in_adj,
            both_adj,
            surface,
            max_surface_len,
            entity_emb,
            relation_emb,
        })
    }
}

/// `K = (V, R, E)` plus indexes. Immutable after [`GraphBuilder::build`], so it
/// can be shared across episode workers.
#[derive(Debug)]
pub struct KnowledgeGraph {
    entity_names: Vec<String>,
    entity_lookup: HashMap<String, EntityId>,
    alias_lookup: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_lookup: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    triple_lookup: HashMap<Triple, TripleId>,
    out_adj: Vec<Vec<Neighbor>>,
    in_adj: Vec<Vec<Neighbor>>,
    both_adj: Vec<Vec<Neighbor>>,
    surface: HashMap<Vec<String>, EntityId>,
    max_surface_len: usize,
    entity_emb: Vec<Embedding>,
    relation_emb: Vec<Embedding>,
}

fn split_line(line: &str, lineno: usize) -> Result<[&str; 3]> {
    let fields: Vec<&str> = line.split('|').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected 3 '|'-separated fields, found {}", fields.len()),
        });
    }
    if fields.iter().any(|f| f.is_empty()) {
        return Err(Error::Parse { line: lineno, msg: "empty field".into() });
    }
    Ok([fields[0], fields[1], fields[2]])
}

/// Reads `subject|relation|object` lines into a builder.
pub fn read_triples(builder: &mut GraphBuilder, source: &str) -> Result<()> {
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let [s, r, o] = split_line(line, i + 1)?;
        builder.add_triple(s, r, o)?;
    }
    Ok(())
}

/// Reads `alias|IS_ALIAS_OF|canonical` lines.
pub fn read_aliases(builder: &mut GraphBuilder, source: &str) -> Result<()> {
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let [alias, rel, canonical] = split_line(line, i + 1)?;
        if rel != "IS_ALIAS_OF" {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected IS_ALIAS_OF, found '{rel}'"),
            });
        }
        builder.add_alias(alias, canonical).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
    }
    Ok(())
}

/// Parses a kb file body. Blank lines are skipped; any other line must have
/// exactly three `|` fields.
pub fn load_triples(source: &str) -> Result<KnowledgeGraph> {
    let mut b = GraphBuilder::new();
    read_triples(&mut b, source)?;
    b.build()
}

impl KnowledgeGraph {
    pub fn entity_count(&self) -> usize {
        self.entity_names.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relation_names.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.entity_names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.index()]
    }

    /// Case-folded name or alias lookup.
    pub fn entity_id(&self, name: &str) -> Option<EntityId> {
        let key = fold(name);
        self.entity_lookup
            .get(&key)
            .or_else(|| self.alias_lookup.get(&key))
            .copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_lookup.get(&fold(name)).copied()
    }

    pub fn triple(&self, id: TripleId) -> Option<Triple> {
        self.triples.get(id.index()).copied()
    }

    pub fn triple_id(&self, t: Triple) -> Option<TripleId> {
        self.triple_lookup.get(&t).copied()
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn is_valid_entity(&self, id: EntityId) -> bool {
        id.index() < self.entity_names.len()
    }

    pub fn entity_embedding(&self, id: EntityId) -> &Embedding {
        &self.entity_emb[id.index()]
    }

    pub fn relation_embedding(&self, id: RelationId) -> &Embedding {
        &self.relation_emb[id.index()]
    }

    /// Out-degree plus in-degree over distinct triples.
    pub fn degree(&self, v: EntityId) -> usize {
        self.out_adj[v.index()].len() + self.in_adj[v.index()].len()
    }

    /// Neighbours sorted by relation id then neighbour id; `Both` is out then in.
    pub fn neighbors(&self, v: EntityId, direction: Direction) -> Result<Vec<Neighbor>> {
        if !self.is_valid_entity(v) {
            return Err(Error::InvalidEntity(v.0));
        }
        Ok(match direction {
            Direction::Out => self.out_adj[v.index()].clone(),
            Direction::In => self.in_adj[v.index()].clone(),
            Direction::Both => self.both_adj[v.index()].clone(),
        })
    }

    /// Borrowed out-then-in adjacency for a known-valid id.
    pub fn neighbors_unchecked(&self, v: EntityId) -> &[Neighbor] {
        &self.both_adj[v.index()]
    }

    pub fn out_neighbors(&self, v: EntityId) -> &[Neighbor] {
        &self.out_adj[v.index()]
    }

    /// Entities mentioned in the (normalised) question tokens, longest
    /// mention first, without overlaps or duplicates. Falls back to the single
    /// most similar entity when nothing matches.
    pub fn match_anchors(&self, question: &[String]) -> Result<Vec<EntityId>> {
        let tokens: Vec<String> = question.iter().flat_map(|t| tokenize(t)).collect();
        if tokens.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let mut covered = vec![false; tokens.len()];
        let mut found = Vec::new();
        for len in (1..=self.max_surface_len.min(tokens.len())).rev() {
            for start in 0..=tokens.len() - len {
                if covered[start..start + len].iter().any(|&c| c) {
                    continue;
                }
                if let Some(&id) = self.surface.get(&tokens[start..start + len]) {
                    covered[start..start + len].iter_mut().for_each(|c| *c = true);
                    if !found.contains(&id) {
                        found.push(id);
                    }
                }
            }
        }
        if found.is_empty() {
            let q = embed_text(&tokens);
            let best = self.most_similar_entity(&q);
            found.push(best);
        }
        Ok(found)
    }

    /// Exhaustive similarity scan; ties break to the lowest id.
    pub fn most_similar_entity(&self, q: &Embedding) -> EntityId {
        let mut best = (f64::NEG_INFINITY, EntityId(0));
        for (i, e) in self.entity_emb.iter().enumerate() {
            let s = sim01(q, e);
            if s > best.0 {
                best = (s, EntityId(i as u32));
            }
        }
        best.1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CASE_KB: &str = "Moving Violations|starred_actors|Brian Backer
Moving Violations|starred_actors|Jennifer Tilly
Moving Violations|starred_actors|John Murray
Moving Violations|directed_by|Neal Israel
";

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn loads_and_counts() {
        let g = load_triples("a|r|b\nb|r|c\nc|s|a\n").unwrap();
        assert_eq!(g.triple_count(), 3);
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.relation_count(), 2);
    }

    #[test]
    fn case_study_line_links_entities() {
        let g = load_triples("Moving Violations|starred_actors|Jennifer Tilly").unwrap();
        let t = g.triple(TripleId(0)).unwrap();
        assert_eq!(g.entity_name(t.subject), "Moving Violations");
        assert_eq!(g.relation_name(t.relation), "starred_actors");
        assert_eq!(g.entity_name(t.object), "Jennifer Tilly");
    }

    #[test]
    fn duplicate_lines_collapse() {
        let g = load_triples("a|r|b\na|r|b\n A | r | b ").unwrap();
        assert_eq!(g.triple_count(), 1);
    }

    #[test]
    fn names_trim_and_fold() {
        let g = load_triples("  Brian Backer |r| x\nbrian backer|r|y").unwrap();
        assert_eq!(g.entity_count(), 3);
        assert_eq!(g.entity_name(EntityId(0)), "Brian Backer");
        assert_eq!(g.entity_id("BRIAN BACKER"), Some(EntityId(0)));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        match load_triples("a|r|b\n\nbad line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert!(matches!(load_triples("a|r|b|c"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_triples("a||b"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(load_triples(""), Err(Error::EmptyGraph)));
        assert!(matches!(load_triples("\n  \n"), Err(Error::EmptyGraph)));
    }

    #[test]
    fn neighbors_sorted_and_directional() {
        let g = load_triples("x|r2|a\nx|r1|b\ny|r1|x").unwrap();
        let x = g.entity_id("x").unwrap();
        let out = g.neighbors(x, Direction::Out).unwrap();
        assert_eq!(out.len(), 2);
        // relation ids: r2=0, r1=1.
        assert_eq!(out[0].entity, g.entity_id("a").unwrap());
        assert_eq!(out[1].entity, g.entity_id("b").unwrap());
        let both = g.neighbors(x, Direction::Both).unwrap();
        assert_eq!(both.len(), 3);
        assert_eq!(both[2].direction, EdgeDir::In);
        assert!(g.neighbors(EntityId(99), Direction::Out).is_err());
    }

    #[test]
    fn isolated_node_has_no_neighbors() {
        let mut b = GraphBuilder::new();
        b.add_triple("a", "r", "b").unwrap();
        let z = b.add_entity("z").unwrap();
        let g = b.build().unwrap();
        assert!(g.neighbors(z, Direction::Both).unwrap().is_empty());
    }

    #[test]
    fn star_center_sees_every_spoke() {
        let k = 7;
        let kb: String = (0..k)
            .map(|i| if i % 2 == 0 { format!("hub|r|s{i}\n") } else { format!("s{i}|q|hub\n") })
            .collect();
        let g = load_triples(&kb).unwrap();
        let hub = g.entity_id("hub").unwrap();
        let brute = g
            .triples()
            .iter()
            .filter(|t| t.subject == hub || t.object == hub)
            .count();
        assert_eq!(g.neighbors(hub, Direction::Both).unwrap().len(), brute);
        assert_eq!(brute, k);
    }

    #[test]
    fn anchors_case_study() {
        let g = load_triples(CASE_KB).unwrap();
        let a = g.match_anchors(&toks("Who co-starred with Brian Backer?")).unwrap();
        assert_eq!(a, vec![g.entity_id("Brian Backer").unwrap()]);
        let a = g.match_anchors(&toks("who co-starred with brian backer")).unwrap();
        assert_eq!(a, vec![g.entity_id("Brian Backer").unwrap()]);
    }

    #[test]
    fn longest_mention_wins() {
        let g = load_triples("Brian|r|x\nBrian Backer|r|y\nx|r|y").unwrap();
        let a = g.match_anchors(&toks("films of brian backer and x")).unwrap();
        assert_eq!(a, vec![g.entity_id("Brian Backer").unwrap(), g.entity_id("x").unwrap()]);
    }

    #[test]
    fn aliases_anchor_to_canonical() {
        let mut b = GraphBuilder::new();
        read_triples(&mut b, CASE_KB).unwrap();
        read_aliases(&mut b, "B. Backer|IS_ALIAS_OF|Brian Backer").unwrap();
        let g = b.build().unwrap();
        let id = g.entity_id("Brian Backer").unwrap();
        assert_eq!(g.match_anchors(&toks("movies with b backer")).unwrap(), vec![id]);
        assert_eq!(g.entity_id("b. backer"), Some(id));

        let mut b = GraphBuilder::new();
        read_triples(&mut b, CASE_KB).unwrap();
        assert!(read_aliases(&mut b, "x|IS_ALIAS_OF|nobody").is_err());
        assert!(read_aliases(&mut b, "x|alias|Brian Backer").is_err());
    }

    #[test]
    fn fallback_is_argmax_similarity() {
        let g = load_triples(CASE_KB).unwrap();
        let q = toks("something about tilly jennifers"); // no exact mention
        let a = g.match_anchors(&q).unwrap();
        assert_eq!(a.len(), 1);
        let qe = embed_text(&q);
        let best = (0..g.entity_count())
            .map(|i| EntityId(i as u32))
            .max_by(|x, y| {
                sim01(&qe, g.entity_embedding(*x))
                    .partial_cmp(&sim01(&qe, g.entity_embedding(*y)))
                    .unwrap()
                    .then(y.cmp(x))
            })
            .unwrap();
        assert_eq!(a[0], best);
        assert_eq!(a[0], g.entity_id("Jennifer Tilly").unwrap());
    }

    #[test]
    fn empty_question_is_error() {
        let g = load_triples(CASE_KB).unwrap();
        assert!(matches!(g.match_anchors(&[]), Err(Error::EmptyQuestion)));
    }

    fn arb_kb() -> impl Strategy<Value = Vec<(u8, u8, u8)>> {
        proptest::collection::vec((0u8..12, 0u8..4, 0u8..12), 1..40)
    }

    proptest! {
        #[test]
        fn adjacency_consistent(lines in arb_kb()) {
            let kb: String = lines.iter().map(|(s, r, o)| format!("e{s}|r{r}|e{o}\n")).collect();
            let g = load_triples(&kb).unwrap();
            let distinct: std::collections::HashSet<_> = lines.iter().collect();
            prop_assert_eq!(g.triple_count(), distinct.len());
            for (i, t) in g.triples().iter().enumerate() {
                let tid = TripleId(i as u32);
                prop_assert!(g.out_neighbors(t.subject).iter().any(|n| n.entity == t.object && n.triple == tid));
                prop_assert!(g.neighbors(t.object, Direction::In).unwrap().iter().any(|n| n.entity == t.subject && n.triple == tid));
            }
            for v in 0..g.entity_count() {
                let v = EntityId(v as u32);
                let brute_out = g.triples().iter().filter(|t| t.subject == v).count();
                let brute_in = g.triples().iter().filter(|t| t.object == v).count();
                prop_assert_eq!(g.degree(v), brute_out + brute_in);
                let a = g.neighbors(v, Direction::Both).unwrap();
                let b = g.neighbors(v, Direction::Both).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn anchors_nonempty_and_unique(lines in arb_kb(), q in "[a-z0-9 ]{1,30}") {
            let kb: String = lines.iter().map(|(s, r, o)| format!("e{s}|r{r}|e{o}\n")).collect();
            let g = load_triples(&kb).unwrap();
            let mut tokens = toks(&q);
            tokens.push("e3".into());
            tokens.push("e3".into());
            let a = g.match_anchors(&tokens).unwrap();
            prop_assert!(!a.is_empty());
            let set: std::collections::HashSet<_> = a.iter().collect();
            prop_assert_eq!(set.len(), a.len());
        }
    }
}
