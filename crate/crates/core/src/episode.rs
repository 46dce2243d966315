//! Per-query episode state: evolving subgraph, frontier, navigator path,
//! curated evidence, cost counters, and the replayable trace.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{EdgeDir, EntityId, KnowledgeGraph, TripleId};
use crate::scoring::QuestionScorer;
use crate::text::tokenize;

/// The three priced resources.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    Edge,
    Lat,
    Tok,
}

impl Resource {
    pub const ALL: [Resource; 3] = [Resource::Edge, Resource::Lat, Resource::Tok];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resource::Edge => "edge",
            Resource::Lat => "lat",
            Resource::Tok => "tok",
        })
    }
}

/// Per-episode caps. Real-valued so expected-cost targets such as half a
/// reference mean can be expressed; counters are compared against them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    pub beta_edge: f64,
    pub beta_lat: f64,
    pub beta_tok: f64,
}

impl Budgets {
    pub fn new(beta_edge: f64, beta_lat: f64, beta_tok: f64) -> Result<Self> {
        let b = Budgets { beta_edge, beta_lat, beta_tok };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("budgets must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.beta_edge, self.beta_lat, self.beta_tok]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Budgets { beta_edge: a[0], beta_lat: a[1], beta_tok: a[2] }
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.as_array()[r.index()]
    }
}

/// Per-unit resource prices.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prices {
    pub lambda_edge: f64,
    pub lambda_lat: f64,
    pub lambda_tok: f64,
}

impl Prices {
    pub fn new(lambda_edge: f64, lambda_lat: f64, lambda_tok: f64) -> Result<Self> {
        let p = Prices { lambda_edge, lambda_lat, lambda_tok };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("prices must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.lambda_edge, self.lambda_lat, self.lambda_tok]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Prices { lambda_edge: a[0], lambda_lat: a[1], lambda_tok: a[2] }
    }

    pub fn get(&self, r: Resource) -> f64 {
        self.as_array()[r.index()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostCounters {
    pub c_edge: u64,
    pub c_lat: u64,
    pub c_tok: u64,
}

impl CostCounters {
    pub fn as_array(&self) -> [u64; 3] {
        [self.c_edge, self.c_lat, self.c_tok]
    }

    pub fn get(&self, r: Resource) -> u64 {
        self.as_array()[r.index()]
    }

    fn add(&mut self, r: Resource, amount: u64) {
        match r {
            Resource::Edge => self.c_edge += amount,
            Resource::Lat => self.c_lat += amount,
            Resource::Tok => self.c_tok += amount,
        }
    }

    fn add_delta(&mut self, d: CostDelta) {
        self.c_edge += d.edge;
        self.c_lat += d.lat;
        self.c_tok += d.tok;
    }

    /// True when every counter is within its cap.
    pub fn within(&self, b: &Budgets) -> bool {
        Resource::ALL.iter().all(|&r| self.get(r) as f64 <= b.get(r))
    }
}

/// How budgets are enforced for an episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Mode {
    /// Hard caps enforced by action masking.
    Cap(Budgets),
    /// Fixed per-unit prices in the shaped objective; no masking.
    Price(Prices),
}

/// Structural knobs of an episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    /// Candidate cap for architect adds and navigator hops.
    pub k_max: usize,
    /// Architect decisions per round.
    pub edits_per_round: usize,
    /// Curator decisions per round.
    pub selections_per_round: usize,
    /// Navigator horizon `H`.
    pub horizon: usize,
    /// Cap on completed paths.
    pub max_paths: usize,
    pub max_rounds: u32,
    /// Redundancy weight in the curator's marginal score.
    pub redundancy_weight: f64,
    /// When set, architect and curator actions also charge one latency unit.
    pub lat_counts_all_actions: bool,
    /// Token normaliser used in price mode where no cap exists.
    pub price_tok_scale: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            k_max: 16,
            edits_per_round: 2,
            selections_per_round: 2,
            horizon: 4,
            max_paths: 4,
            max_rounds: 4,
            redundancy_weight: 0.5,
            lat_counts_all_actions: false,
            price_tok_scale: 256.0,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max == 0 || self.horizon == 0 || self.max_rounds == 0 {
            return Err(Error::Config("k_max, horizon and max_rounds must be positive".into()));
        }
        if !self.redundancy_weight.is_finite() || self.price_tok_scale <= 0.0 {
            return Err(Error::Config("invalid redundancy weight or token scale".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    System,
    Architect,
    Navigator,
    Curator,
}

/// One traversal step of the navigator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub from: EntityId,
    pub to: EntityId,
    pub triple: TripleId,
    pub direction: EdgeDir,
}

/// Identity of a textualised unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnippetId {
    Triple(TripleId),
    /// Index into the completed-path list.
    Path(u32),
}

impl fmt::Display for SnippetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnippetId::Triple(t) => write!(f, "t{t}"),
            SnippetId::Path(p) => write!(f, "p{p}"),
        }
    }
}

/// A textualised triple or path with its provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: SnippetId,
    pub text: String,
    pub tok: u64,
    pub provenance: Vec<TripleId>,
    pub base_score: f64,
}

/// Per-resource cost attached to a trace event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CostDelta {
    pub edge: u64,
    pub lat: u64,
    pub tok: u64,
}

impl CostDelta {
    pub fn of(r: Resource, amount: u64) -> Self {
        let mut d = CostDelta::default();
        match r {
            Resource::Edge => d.edge = amount,
            Resource::Lat => d.lat = amount,
            Resource::Tok => d.tok = amount,
        }
        d
    }

    pub fn as_array(&self) -> [u64; 3] {
        [self.edge, self.lat, self.tok]
    }

    pub fn plus(mut self, other: CostDelta) -> Self {
        self.edge += other.edge;
        self.lat += other.lat;
        self.tok += other.tok;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Init,
    Edit,
    Hop,
    Backtrack,
    Curate,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    Add,
    Delete,
}

/// A triple recorded by id and by surface names, so traces render without
/// the graph and audit against it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRef {
    pub id: TripleId,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl TripleRef {
    pub fn new(g: &KnowledgeGraph, id: TripleId) -> Self {
        let t = g.triple(id).expect("triple id from this graph");
        TripleRef {
            id,
            subject: g.entity_name(t.subject).to_string(),
            relation: g.relation_name(t.relation).to_string(),
            object: g.entity_name(t.object).to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamedEntity {
    pub id: EntityId,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    Init {
        anchors: Vec<NamedEntity>,
    },
    Edit {
        op: EditOp,
        triple: TripleRef,
        shaped_gain: f64,
    },
    Hop {
        triple: TripleRef,
        from: EntityId,
        to: EntityId,
        direction: EdgeDir,
    },
    Backtrack {
        triple: TripleRef,
        from: EntityId,
        to: EntityId,
    },
    Curate {
        snippet: String,
        text: String,
        tok: u64,
        provenance: Vec<TripleRef>,
    },
    Stop {
        reason: String,
        /// Path finalised by a navigator stop, if any.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<Vec<TripleRef>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub kind: EventKind,
    pub agent: AgentId,
    pub round: u32,
    pub payload: Payload,
    pub cost: CostDelta,
}

/// Final values recorded by the live episode, checked on replay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub counters: CostCounters,
    pub subgraph: Vec<TripleId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub em: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub question: String,
    pub mode: Mode,
    pub events: Vec<TraceEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<TraceSummary>,
}

impl EpisodeTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Number of events other than the initial one.
    pub fn action_count(&self) -> usize {
        self.events.iter().filter(|e| e.kind != EventKind::Init).count()
    }
}

/// Navigator bookkeeping.
#[derive(Clone, Debug, Default)]
pub struct NavState {
    pub current: Option<EntityId>,
    pub path: Vec<Hop>,
    pub paths: Vec<Vec<Hop>>,
    /// Traversal actions taken in the current round's segment.
    pub segment_steps: usize,
}

/// `s_t = (q, G_t, F_t, pool, b_t)` plus counters, stop flags and trace.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub question_text: String,
    pub question: Vec<String>,
    pub scorer: QuestionScorer,
    pub anchors: Vec<EntityId>,
    pub edges: BTreeSet<TripleId>,
    pub nodes: BTreeSet<EntityId>,
    pub frontier: BTreeSet<EntityId>,
    pub nav: NavState,
    pub selected: Vec<Snippet>,
    pub round: u32,
    pub counters: CostCounters,
    /// Present in cap mode.
    pub caps: Option<Budgets>,
    /// Prices in effect: fixed in price mode, current duals in cap mode.
    pub prices: Prices,
    /// Architect, navigator, curator.
    pub stopped: [bool; 3],
    pub config: EpisodeConfig,
    pub trace: EpisodeTrace,
    pub seed: u64,
}

impl EpisodeState {
    /// `G_0` holds the anchors and no edges; `F_0` is the anchor set.
    pub fn new(
        g: &KnowledgeGraph,
        question: &str,
        mode: Mode,
        config: EpisodeConfig,
        seed: u64,
    ) -> Result<Self> {
        if g.entity_count() == 0 {
            return Err(Error::EmptyGraph);
        }
        let tokens = tokenize(question);
        if tokens.is_empty() {
            return Err(Error::EmptyQuestion);
        }
        let (caps, prices) = match mode {
            Mode::Cap(b) => {
                b.validate()?;
                (Some(b), Prices::default())
            }
            Mode::Price(p) => {
                p.validate()?;
                (None, p)
            }
        };
        let anchors = g.match_anchors(&tokens)?;
        let scorer = QuestionScorer::new(&tokens, g);
        let init = TraceEvent {
            kind: EventKind::Init,
            agent: AgentId::System,
            round: 0,
            payload: Payload::Init {
                anchors: anchors
                    .iter()
                    .map(|&id| NamedEntity { id, name: g.entity_name(id).to_string() })
                    .collect(),
            },
            cost: CostDelta::default(),
        };
        Ok(EpisodeState {
            question_text: question.to_string(),
            question: tokens,
            scorer,
            nodes: anchors.iter().copied().collect(),
            frontier: anchors.iter().copied().collect(),
            nav: NavState { current: anchors.first().copied(), ..NavState::default() },
            anchors,
            edges: BTreeSet::new(),
            selected: Vec::new(),
            round: 0,
            counters: CostCounters::default(),
            caps,
            prices,
            stopped: [false; 3],
            config,
            trace: EpisodeTrace { question: question.to_string(), mode, events: vec![init], summary: None },
            seed,
        })
    }

    /// Replaces the prices in effect (cap-mode training feeds current duals).
    pub fn set_prices(&mut self, prices: Prices) -> Result<()> {
        prices.validate()?;
        self.prices = prices;
        Ok(())
    }

    pub fn is_cap_mode(&self) -> bool {
        self.caps.is_some()
    }

    /// Remaining budget in cap mode (infinite in price mode).
    pub fn remaining(&self, r: Resource) -> f64 {
        match &self.caps {
            Some(b) => b.get(r) - self.counters.get(r) as f64,
            None => f64::INFINITY,
        }
    }

    /// Whether charging `amount` of `r` stays within the cap.
    pub fn can_afford(&self, r: Resource, amount: u64) -> bool {
        self.remaining(r) >= amount as f64
    }

    /// Affordability of a whole cost vector.
    pub fn can_afford_delta(&self, d: CostDelta) -> bool {
        Resource::ALL
            .iter()
            .all(|&r| d.as_array()[r.index()] == 0 || self.can_afford(r, d.as_array()[r.index()]))
    }

    /// `b_t`: remaining fractions `(β−c)/max(β,1)` (1.0 in price mode)
    /// followed by the prices in effect.
    pub fn budget_vector(&self) -> [f64; 6] {
        let mut out = [1.0; 6];
        if let Some(b) = &self.caps {
            for r in Resource::ALL {
                let beta = b.get(r);
                out[r.index()] = ((beta - self.counters.get(r) as f64) / beta.max(1.0)).clamp(0.0, 1.0);
            }
        }
        let p = self.prices.as_array();
        out[3..].copy_from_slice(&p);
        out
    }

    /// Adds `amount` to a counter. In cap mode overflowing is an error: callers
    /// mask infeasible actions beforehand, so an overflow means a masking bug.
    pub fn charge(&mut self, r: Resource, amount: u64) -> Result<()> {
        if amount == 0 {
            return Err(Error::ZeroCharge);
        }
        if let Some(b) = &self.caps {
            let used = self.counters.get(r);
            if used as f64 + amount as f64 > b.get(r) {
                return Err(Error::BudgetOverflow { resource: r, used, amount, cap: b.get(r) });
            }
        }
        self.counters.add(r, amount);
        Ok(())
    }

    /// Charges every nonzero component of `d`, all-or-nothing.
    pub fn charge_delta(&mut self, d: CostDelta) -> Result<()> {
        for r in Resource::ALL {
            let amount = d.as_array()[r.index()];
            if amount > 0 && !self.can_afford(r, amount) {
                let cap = self.caps.map(|b| b.get(r)).unwrap_or(f64::INFINITY);
                return Err(Error::BudgetOverflow { resource: r, used: self.counters.get(r), amount, cap });
            }
        }
        for r in Resource::ALL {
            let amount = d.as_array()[r.index()];
            if amount > 0 {
                self.charge(r, amount)?;
            }
        }
        Ok(())
    }

    /// Some cap is used up (cap mode only).
    pub fn budget_exhausted(&self) -> bool {
        match &self.caps {
            Some(_) => Resource::ALL.iter().any(|&r| self.remaining(r) <= 0.0),
            None => false,
        }
    }

    pub fn all_stopped(&self) -> bool {
        self.stopped.iter().all(|&s| s)
    }

    /// Every cap is used up (cap mode only).
    pub fn all_budgets_exhausted(&self) -> bool {
        match &self.caps {
            Some(_) => Resource::ALL.iter().all(|&r| self.remaining(r) <= 0.0),
            None => false,
        }
    }

    /// Checked at round boundaries: every agent stopped, every cap used up,
    /// or the round limit reached. An agent whose own cap is spent is masked
    /// to stop-only, so it stops on its next turn.
    pub fn is_terminal(&self) -> bool {
        self.all_stopped() || self.all_budgets_exhausted() || self.round >= self.config.max_rounds
    }

    pub fn push_event(&mut self, agent: AgentId, kind: EventKind, payload: Payload, cost: CostDelta) {
        self.trace.events.push(TraceEvent { kind, agent, round: self.round, payload, cost });
    }

    pub fn is_anchor(&self, e: EntityId) -> bool {
        self.anchors.contains(&e)
    }

    /// Triples referenced by the curated set.
    pub fn covered_triples(&self) -> BTreeSet<TripleId> {
        self.selected.iter().flat_map(|s| s.provenance.iter().copied()).collect()
    }

    /// Inserts an edge, growing `V_t` and `F_t`.
    pub(crate) fn insert_edge(&mut self, g: &KnowledgeGraph, id: TripleId) {
        let t = g.triple(id).expect("valid triple");
        self.edges.insert(id);
        for v in [t.subject, t.object] {
            self.nodes.insert(v);
            self.frontier.insert(v);
        }
    }

    /// Removes an edge and prunes endpoints left isolated (anchors stay).
    pub(crate) fn remove_edge(&mut self, g: &KnowledgeGraph, id: TripleId) {
        self.edges.remove(&id);
        let t = g.triple(id).expect("valid triple");
        prune_isolated(g, &self.edges, &mut self.nodes, Some(&mut self.frontier), &self.anchors, t);
    }

    /// Records the final summary on the trace.
    pub fn finalize_trace(&mut self, em: Option<u8>) {
        self.trace.summary = Some(TraceSummary {
            counters: self.counters,
            subgraph: self.edges.iter().copied().collect(),
            em,
        });
    }
}

fn prune_isolated(
    g: &KnowledgeGraph,
    edges: &BTreeSet<TripleId>,
    nodes: &mut BTreeSet<EntityId>,
    frontier: Option<&mut BTreeSet<EntityId>>,
    anchors: &[EntityId],
    removed: crate::kg::Triple,
) {
    let mut pruned = Vec::new();
    for v in [removed.subject, removed.object] {
        if anchors.contains(&v) {
            continue;
        }
        let still_used = g.neighbors_unchecked(v).iter().any(|n| edges.contains(&n.triple));
        if !still_used {
            nodes.remove(&v);
            pruned.push(v);
        }
    }
    if let Some(f) = frontier {
        for v in pruned {
            f.remove(&v);
        }
    }
}

/// Counters and subgraph reconstructed from a trace.
#[derive(Clone, Debug, PartialEq)]
pub struct Replay {
    pub counters: CostCounters,
    pub edges: BTreeSet<TripleId>,
    pub nodes: BTreeSet<EntityId>,
}

fn resolve(g: &KnowledgeGraph, t: &TripleRef, index: usize) -> Result<TripleId> {
    let audit = |msg: String| Error::Audit { index, msg };
    let triple = g
        .triple(t.id)
        .ok_or_else(|| audit(format!("unknown triple id {}", t.id)))?;
    if g.entity_name(triple.subject) != t.subject
        || g.relation_name(triple.relation) != t.relation
        || g.entity_name(triple.object) != t.object
    {
        return Err(audit(format!("triple {} does not match its recorded names", t.id)));
    }
    Ok(t.id)
}

/// Rebuilds counters and `G_T` from the trace alone and checks every event
/// for referential integrity: edits name real triples, hops and curated
/// provenance lie in the subgraph at that point, and the recorded summary
/// (if any) matches exactly.
pub fn replay_trace(g: &KnowledgeGraph, trace: &EpisodeTrace) -> Result<Replay> {
    let first = trace.events.first().ok_or(Error::Audit { index: 0, msg: "empty trace".into() })?;
    let anchors: Vec<EntityId> = match (&first.kind, &first.payload) {
        (EventKind::Init, Payload::Init { anchors }) => anchors.iter().map(|a| a.id).collect(),
        _ => return Err(Error::Audit { index: 0, msg: "trace must begin with init".into() }),
    };
    for &a in &anchors {
        if !g.is_valid_entity(a) {
            return Err(Error::Audit { index: 0, msg: format!("unknown anchor {a}") });
        }
    }
    let mut counters = CostCounters::default();
    let mut edges = BTreeSet::new();
    let mut nodes: BTreeSet<EntityId> = anchors.iter().copied().collect();
    let mut curated: Vec<(usize, Vec<TripleId>)> = Vec::new();

    for (index, ev) in trace.events.iter().enumerate().skip(1) {
        let audit = |msg: String| Error::Audit { index, msg };
        match (&ev.kind, &ev.payload) {
            (EventKind::Init, _) => return Err(audit("repeated init".into())),
            (EventKind::Edit, Payload::Edit { op, triple, .. }) => {
                let id = resolve(g, triple, index)?;
                if ev.cost.edge != 1 {
                    return Err(audit(format!("edit must cost one edge unit, recorded {}", ev.cost.edge)));
                }
                let t = g.triple(id).unwrap();
                match op {
                    EditOp::Add => {
                        if !edges.insert(id) {
                            return Err(audit(format!("add of present triple {id}")));
                        }
                        nodes.insert(t.subject);
                        nodes.insert(t.object);
                    }
                    EditOp::Delete => {
                        if !edges.remove(&id) {
                            return Err(audit(format!("delete of absent triple {id}")));
                        }
                        prune_isolated(g, &edges, &mut nodes, None, &anchors, t);
                    }
                }
            }
            (EventKind::Hop, Payload::Hop { triple, .. }) | (EventKind::Backtrack, Payload::Backtrack { triple, .. }) => {
                let id = resolve(g, triple, index)?;
                if !edges.contains(&id) {
                    return Err(audit(format!("traversal over triple {id} outside the subgraph")));
                }
                if ev.cost.lat != 1 {
                    return Err(audit(format!("traversal must cost one step, recorded {}", ev.cost.lat)));
                }
            }
            (EventKind::Curate, Payload::Curate { tok, provenance, text, .. }) => {
                if provenance.is_empty() {
                    return Err(audit("snippet without provenance".into()));
                }
                let mut ids = Vec::new();
                for p in provenance {
                    let id = resolve(g, p, index)?;
                    if !edges.contains(&id) {
                        return Err(audit(format!("curated provenance {id} not in the subgraph")));
                    }
                    ids.push(id);
                }
                if *tok != crate::text::whitespace_count(text) as u64 || ev.cost.tok != *tok {
                    return Err(audit("token count does not match snippet text".into()));
                }
                curated.push((index, ids));
            }
            (EventKind::Stop, Payload::Stop { .. }) => {}
            _ => return Err(audit(format!("payload does not match event kind {:?}", ev.kind))),
        }
        counters.add_delta(ev.cost);
    }

    for (index, ids) in &curated {
        if let Some(missing) = ids.iter().find(|id| !edges.contains(id)) {
            return Err(Error::Audit {
                index: *index,
                msg: format!("curated provenance {missing} missing from the final subgraph"),
            });
        }
    }

    if let Some(summary) = &trace.summary {
        let end = trace.events.len();
        if summary.counters != counters {
            return Err(Error::Audit {
                index: end,
                msg: format!("counters {:?} differ from recorded {:?}", counters, summary.counters),
            });
        }
        let recorded: BTreeSet<TripleId> = summary.subgraph.iter().copied().collect();
        if recorded != edges {
            return Err(Error::Audit { index: end, msg: "subgraph differs from recorded summary".into() });
        }
    }
    Ok(Replay { counters, edges, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::load_triples;

    const CASE_KB: &str = "Moving Violations|starred_actors|Brian Backer
Moving Violations|starred_actors|Jennifer Tilly
Moving Violations|starred_actors|John Murray
";

    fn cap(e: f64, l: f64, t: f64) -> Mode {
        Mode::Cap(Budgets::new(e, l, t).unwrap())
    }

    #[test]
    fn fresh_episode_has_full_budget_fractions() {
        let g = load_triples(CASE_KB).unwrap();
        let s = EpisodeState::new(&g, "Who co-starred with Brian Backer?", cap(4.0, 4.0, 64.0), EpisodeConfig::default(), 1).unwrap();
        assert_eq!(&s.budget_vector()[..3], &[1.0, 1.0, 1.0]);
        assert_eq!(s.counters, CostCounters::default());
        assert_eq!(s.trace.events.len(), 1);
        assert!(s.edges.is_empty());
        let bb = g.entity_id("Brian Backer").unwrap();
        assert_eq!(s.frontier.iter().copied().collect::<Vec<_>>(), vec![bb]);
        assert_eq!(s.nodes, s.frontier);
    }

    #[test]
    fn empty_question_rejected() {
        let g = load_triples(CASE_KB).unwrap();
        assert!(EpisodeState::new(&g, " ? ", cap(1.0, 1.0, 1.0), EpisodeConfig::default(), 1).is_err());
    }

    #[test]
    fn charge_accumulates_tokens() {
        let g = load_triples(CASE_KB).unwrap();
        let mut s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 4.0, 512.0), EpisodeConfig::default(), 1).unwrap();
        s.charge(Resource::Tok, 30).unwrap();
        s.charge(Resource::Tok, 6).unwrap();
        assert_eq!(s.counters.c_tok, 36);
        assert!((s.budget_vector()[2] - (512.0 - 36.0) / 512.0).abs() < 1e-12);
    }

    #[test]
    fn zero_charge_rejected() {
        let g = load_triples(CASE_KB).unwrap();
        let mut s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 4.0, 512.0), EpisodeConfig::default(), 1).unwrap();
        assert!(matches!(s.charge(Resource::Edge, 0), Err(Error::ZeroCharge)));
    }

    #[test]
    fn cap_overflow_is_hard_error() {
        let g = load_triples(CASE_KB).unwrap();
        let mut s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 2.0, 512.0), EpisodeConfig::default(), 1).unwrap();
        s.charge(Resource::Lat, 2).unwrap();
        assert!(matches!(s.charge(Resource::Lat, 1), Err(Error::BudgetOverflow { .. })));
        assert_eq!(s.counters.c_lat, 2);
        assert!(s.budget_exhausted());
    }

    #[test]
    fn price_mode_reports_unit_fractions_and_prices() {
        let g = load_triples(CASE_KB).unwrap();
        let p = Prices::new(0.1, 0.2, 0.3).unwrap();
        let mut s = EpisodeState::new(&g, "Brian Backer", Mode::Price(p), EpisodeConfig::default(), 1).unwrap();
        s.charge(Resource::Tok, 1000).unwrap();
        assert_eq!(s.budget_vector(), [1.0, 1.0, 1.0, 0.1, 0.2, 0.3]);
        assert!(!s.budget_exhausted());
    }

    #[test]
    fn negative_budgets_rejected() {
        assert!(Budgets::new(-1.0, 0.0, 0.0).is_err());
        assert!(Prices::new(0.0, f64::NAN, 0.0).is_err());
    }

    #[test]
    fn replay_of_init_only_trace() {
        let g = load_triples(CASE_KB).unwrap();
        let s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 4.0, 64.0), EpisodeConfig::default(), 1).unwrap();
        let r = replay_trace(&g, &s.trace).unwrap();
        assert_eq!(r.counters, CostCounters::default());
        assert!(r.edges.is_empty());
        assert_eq!(r.nodes, s.nodes);
    }

    #[test]
    fn replay_rejects_missing_init_and_forged_curation() {
        let g = load_triples(CASE_KB).unwrap();
        let mut s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 4.0, 64.0), EpisodeConfig::default(), 1).unwrap();
        let forged = TraceEvent {
            kind: EventKind::Curate,
            agent: AgentId::Curator,
            round: 0,
            payload: Payload::Curate {
                snippet: "t1".into(),
                text: "Moving Violations --- starred_actors: Jennifer Tilly".into(),
                tok: 6,
                provenance: vec![TripleRef::new(&g, TripleId(1))],
            },
            cost: CostDelta::of(Resource::Tok, 6),
        };
        s.trace.events.push(forged);
        match replay_trace(&g, &s.trace) {
            Err(Error::Audit { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected audit failure, got {other:?}"),
        }
        let mut t = s.trace.clone();
        t.events.remove(0);
        assert!(matches!(replay_trace(&g, &t), Err(Error::Audit { index: 0, .. })));
    }

    #[test]
    fn trace_json_uses_stable_field_names() {
        let g = load_triples(CASE_KB).unwrap();
        let s = EpisodeState::new(&g, "Brian Backer", cap(4.0, 4.0, 64.0), EpisodeConfig::default(), 1).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.trace.to_json().unwrap()).unwrap();
        let ev = &v["events"][0];
        for k in ["kind", "agent", "round", "payload", "cost"] {
            assert!(ev.get(k).is_some(), "missing {k}");
        }
        for k in ["edge", "lat", "tok"] {
            assert!(ev["cost"].get(k).is_some());
        }
        let back = EpisodeTrace::from_json(&s.trace.to_json().unwrap()).unwrap();
        assert_eq!(back, s.trace);
    }
}
