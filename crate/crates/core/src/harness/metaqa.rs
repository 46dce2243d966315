use std::collections::HashSet;

use log::warn;

use super::QAExample;
use crate::error::Result;
use crate::kg::{load_triples, EntityId, KnowledgeGraph, TripleId};

const MAX_GOLD_PATHS: usize = 64;
/// Bound on search expansions per question so hub entities stay tractable.
const MAX_EXPANSIONS: usize = 1_000_000;

/// Line accounting for a questions file: `kept + dropped = total`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub total: usize,
    pub kept: usize,
    pub dropped: usize,
    /// Of the dropped: no tab, no bracketed anchor, or no answers.
    pub malformed: usize,
    /// Of the dropped: anchor not in the graph.
    pub unknown_anchor: usize,
    /// Of the dropped: no answer within `hop` steps.
    pub unreachable: usize,
}

/// Splits `"question with [anchor]\tans1|ans2"` into
/// `(question, anchor, answers)`.
pub fn parse_question_line(line: &str) -> Option<(String, String, Vec<String>)> {
    let (q, a) = line.split_once('\t')?;
    let open = q.find('[')?;
    let close = open + q[open..].find(']')?;
    let anchor = q[open + 1..close].trim();
    if anchor.is_empty() {
        return None;
    }
    let answers: Vec<String> = a.split('|').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
    if answers.is_empty() {
        return None;
    }
    Some((q.trim().to_string(), anchor.to_string(), answers))
}

/// Simple paths (no repeated entity) of length `1..=hop` from `anchor` to
/// any target, traversing edges in either direction; shortest first.
fn gold_paths(g: &KnowledgeGraph, anchor: EntityId, targets: &HashSet<EntityId>, hop: usize) -> Vec<Vec<TripleId>> {
    let mut found = Vec::new();
    let mut budget = MAX_EXPANSIONS;
    for depth in 1..=hop {
        let mut stack_nodes = vec![anchor];
        let mut path = Vec::new();
        dfs(g, anchor, depth, targets, &mut stack_nodes, &mut path, &mut found, &mut budget);
        if found.len() >= MAX_GOLD_PATHS || budget == 0 {
            break;
        }
    }
    found.truncate(MAX_GOLD_PATHS);
    found
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    g: &KnowledgeGraph,
    v: EntityId,
    remaining: usize,
    targets: &HashSet<EntityId>,
    nodes: &mut Vec<EntityId>,
    path: &mut Vec<TripleId>,
    found: &mut Vec<Vec<TripleId>>,
    budget: &mut usize,
) {
    for n in g.neighbors_unchecked(v) {
        if *budget == 0 || found.len() >= MAX_GOLD_PATHS {
            return;
        }
        *budget -= 1;
        if nodes.contains(&n.entity) {
            continue;
        }
        path.push(n.triple);
        if remaining == 1 {
            if targets.contains(&n.entity) {
                found.push(path.clone());
            }
        } else {
            nodes.push(n.entity);
            dfs(g, n.entity, remaining - 1, targets, nodes, path, found, budget);
            nodes.pop();
        }
        path.pop();
    }
}

/// Parses a questions file against an existing graph. Malformed lines,
/// unknown anchors and unreachable answers are dropped and counted.
pub fn load_questions(g: &KnowledgeGraph, source: &str, hop: usize) -> (Vec<QAExample>, LoadStats) {
    let mut stats = LoadStats::default();
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        stats.total += 1;
        let Some((question, anchor, answers)) = parse_question_line(line) else {
            warn!("questions line {}: malformed", i + 1);
            stats.malformed += 1;
            stats.dropped += 1;
            continue;
        };
        let Some(a) = g.entity_id(&anchor) else {
            stats.unknown_anchor += 1;
            stats.dropped += 1;
            continue;
        };
        let targets: HashSet<EntityId> = answers.iter().filter_map(|x| g.entity_id(x)).collect();
        let paths = if targets.is_empty() { Vec::new() } else { gold_paths(g, a, &targets, hop) };
        if paths.is_empty() {
            stats.unreachable += 1;
            stats.dropped += 1;
            continue;
        }
        stats.kept += 1;
        out.push(QAExample { question, anchors: vec![g.entity_name(a).to_string()], gold_paths: paths, answers });
    }
    (out, stats)
}

/// Loads a `subject|relation|object` KB and a questions file.
pub fn load_metaqa(kb: &str, questions: &str, hop: usize) -> Result<(KnowledgeGraph, Vec<QAExample>, LoadStats)> {
    let g = load_triples(kb)?;
    let (examples, stats) = load_questions(&g, questions, hop);
    Ok((g, examples, stats))
}
