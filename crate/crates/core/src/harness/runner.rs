use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{reader_oracle, QAExample};
use crate::agents::{
    architect_apply, architect_decision, begin_navigation_round, curator_apply, curator_decision, edit_candidate, edit_cost,
    global_features, navigator_apply, navigator_decision, AgentKind, Decision, HopCandidate, NavOutcome, Policy,
};
use crate::episode::{CostCounters, EditOp, EpisodeConfig, EpisodeState, EpisodeTrace, Mode, Prices, Resource, Snippet};
use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, TripleId};

/// Replaces one learned agent with a fixed heuristic.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// Architect adds the whole `static_hops` neighbourhood of the anchors
    /// (as far as the edge budget allows) and stops.
    StaticArchitect,
    /// Navigator always takes the best-scored hop and never backtracks.
    GreedyNavigator,
    /// Curator takes the highest-relevance affordable snippet and never
    /// stops voluntarily.
    TopKCurator,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    /// Argmax decisions instead of sampling.
    pub greedy: bool,
    /// Keep a [`StepRecord`] per policy decision.
    pub record: bool,
    pub ablation: Ablation,
    /// Prices shown to the agents in cap mode (the current duals).
    pub cap_prices: Option<Prices>,
    pub static_hops: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { greedy: false, record: false, ablation: Ablation::None, cap_prices: None, static_hops: 2 }
    }
}

/// One policy decision and its consequences.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub decision: Decision,
    /// Index into the decision's options (stop is `n_candidates()`).
    pub action: usize,
    pub log_prob: f64,
    /// Critic input with the acting agent flagged.
    pub global: Vec<f64>,
    /// Cost charged by this action, per resource.
    pub cost: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct EpisodeOutcome {
    pub trace: EpisodeTrace,
    pub em: u8,
    pub counters: CostCounters,
    pub steps: Vec<StepRecord>,
    pub selected: Vec<Snippet>,
}

impl EpisodeOutcome {
    pub fn cost(&self, r: Resource) -> f64 {
        self.counters.get(r) as f64
    }
}

struct Runner<'a> {
    g: &'a KnowledgeGraph,
    policy: &'a dyn Policy,
    opts: RunOptions,
    rng: ChaCha8Rng,
    state: EpisodeState,
    steps: Vec<StepRecord>,
}

enum Pick {
    /// No candidates at all: the agent sits the turn out.
    Skip,
    /// Only stop is feasible; applied without consulting the policy.
    ForcedStop,
    Option(usize),
}

impl Runner<'_> {
    /// Queries the policy unless the outcome is already determined, and
    /// records the decision when asked to.
    fn choose(&mut self, decision: Decision) -> Result<Pick> {
        if decision.n_candidates() == 0 {
            return Ok(Pick::Skip);
        }
        if decision.is_forced_stop() {
            return Ok(Pick::ForcedStop);
        }
        let choice = self.policy.choose(&decision, self.opts.greedy, &mut self.rng)?;
        if !decision.mask.get(choice.index).copied().unwrap_or(false) {
            return Err(Error::InvalidAction(format!("policy chose masked option {}", choice.index)));
        }
        let index = choice.index;
        if self.opts.record {
            let global = global_features(&self.state, decision.agent);
            self.steps.push(StepRecord { decision, action: index, log_prob: choice.log_prob, global, cost: [0.0; 3] });
        }
        Ok(Pick::Option(index))
    }

    /// Attributes the counter delta since `before` to the last record.
    fn settle(&mut self, before: CostCounters, recorded: bool) {
        if !recorded {
            return;
        }
        let now = self.state.counters.as_array();
        let was = before.as_array();
        if let Some(s) = self.steps.last_mut() {
            for i in 0..3 {
                s.cost[i] = (now[i] - was[i]) as f64;
            }
        }
    }

    fn architect_turn(&mut self) -> Result<()> {
        if self.opts.ablation == Ablation::StaticArchitect {
            return self.static_architect();
        }
        let weights = self.policy.fusion_weights();
        for _ in 0..self.state.config.edits_per_round {
            if self.state.stopped[AgentKind::Architect.index()] {
                break;
            }
            let (cands, decision) = architect_decision(&self.state, self.g, &weights, self.opts.greedy);
            let before = self.state.counters;
            match self.choose(decision)? {
                Pick::Skip => break,
                Pick::ForcedStop => {
                    architect_apply(&mut self.state, self.g, None, self.opts.greedy)?;
                }
                Pick::Option(i) => {
                    architect_apply(&mut self.state, self.g, cands.get(i), self.opts.greedy)?;
                    self.settle(before, self.opts.record);
                }
            }
        }
        Ok(())
    }

    /// Breadth-first neighbourhood of the anchors, added in BFS order.
    fn static_architect(&mut self) -> Result<()> {
        if self.state.stopped[AgentKind::Architect.index()] {
            return Ok(());
        }
        let weights = self.policy.fusion_weights();
        let mut seen: BTreeSet<EntityId> = self.state.anchors.iter().copied().collect();
        let mut layer: Vec<EntityId> = self.state.anchors.clone();
        let mut order: Vec<TripleId> = Vec::new();
        let mut queued: BTreeSet<TripleId> = BTreeSet::new();
        for _ in 0..self.opts.static_hops {
            let mut next = Vec::new();
            for &v in &layer {
                for n in self.g.neighbors_unchecked(v) {
                    if queued.insert(n.triple) {
                        order.push(n.triple);
                    }
                    if seen.insert(n.entity) {
                        next.push(n.entity);
                    }
                }
            }
            layer = next;
        }
        for t in order {
            if self.state.edges.contains(&t) {
                continue;
            }
            let c = edit_candidate(&self.state, self.g, &weights, EditOp::Add, t)?;
            if !self.state.can_afford_delta(edit_cost(&self.state)) {
                break;
            }
            architect_apply(&mut self.state, self.g, Some(&c), false)?;
        }
        architect_apply(&mut self.state, self.g, None, false)?;
        Ok(())
    }

    fn navigator_turn(&mut self) -> Result<()> {
        if self.state.stopped[AgentKind::Navigator.index()] {
            return Ok(());
        }
        begin_navigation_round(&mut self.state, self.g);
        // Each action advances the segment, so this loop is bounded by `H`
        // steps plus the closing stop.
        loop {
            let (cands, decision) = navigator_decision(&self.state, self.g);
            if cands.is_empty() {
                return Ok(());
            }
            let before = self.state.counters;
            let outcome = if self.opts.ablation == Ablation::GreedyNavigator {
                let best = cands
                    .iter()
                    .enumerate()
                    .find(|(i, c)| matches!(c, HopCandidate::Hop { .. }) && decision.mask[*i])
                    .map(|(_, c)| *c);
                navigator_apply(&mut self.state, self.g, best.as_ref())?
            } else {
                match self.choose(decision)? {
                    Pick::Skip => return Ok(()),
                    Pick::ForcedStop => navigator_apply(&mut self.state, self.g, None)?,
                    Pick::Option(i) => {
                        let o = navigator_apply(&mut self.state, self.g, cands.get(i))?;
                        self.settle(before, self.opts.record);
                        o
                    }
                }
            };
            if matches!(outcome, NavOutcome::SegmentEnd | NavOutcome::Stopped) {
                return Ok(());
            }
        }
    }

    fn curator_turn(&mut self) -> Result<()> {
        for _ in 0..self.state.config.selections_per_round {
            if self.state.stopped[AgentKind::Curator.index()] {
                break;
            }
            let (cands, decision) = curator_decision(&self.state, self.g);
            let before = self.state.counters;
            if self.opts.ablation == Ablation::TopKCurator {
                let best = cands
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| decision.mask[*i])
                    .max_by(|(ia, a), (ib, b)| {
                        a.snippet.base_score.total_cmp(&b.snippet.base_score).then(ib.cmp(ia))
                    })
                    .map(|(_, c)| c);
                match best {
                    Some(c) => {
                        curator_apply(&mut self.state, self.g, Some(c))?;
                    }
                    None if cands.is_empty() => break,
                    None => {
                        curator_apply(&mut self.state, self.g, None)?;
                    }
                }
                continue;
            }
            match self.choose(decision)? {
                Pick::Skip => break,
                Pick::ForcedStop => {
                    curator_apply(&mut self.state, self.g, None)?;
                }
                Pick::Option(i) => {
                    curator_apply(&mut self.state, self.g, cands.get(i))?;
                    self.settle(before, self.opts.record);
                }
            }
        }
        Ok(())
    }
}

/// Plays one episode: each round the architect edits, the navigator walks
/// one segment, then the curator selects, until every agent stopped, every
/// cap is spent, or the round limit is reached. The reader oracle scores the
/// final selection.
pub fn run_episode(
    g: &KnowledgeGraph,
    example: &QAExample,
    policy: &dyn Policy,
    mode: Mode,
    config: EpisodeConfig,
    seed: u64,
    opts: RunOptions,
) -> Result<EpisodeOutcome> {
    config.validate()?;
    let mut state = EpisodeState::new(g, &example.question, mode, config, seed)?;
    if let (Some(p), true) = (opts.cap_prices, state.is_cap_mode()) {
        state.set_prices(p)?;
    }
    let mut r = Runner { g, policy, opts, rng: ChaCha8Rng::seed_from_u64(seed), state, steps: Vec::new() };
    while !r.state.is_terminal() {
        r.architect_turn()?;
        r.navigator_turn()?;
        r.curator_turn()?;
        r.state.round += 1;
    }
    let em = reader_oracle(&r.state.selected, example);
    r.state.finalize_trace(Some(em));
    Ok(EpisodeOutcome {
        em,
        counters: r.state.counters,
        trace: r.state.trace,
        steps: r.steps,
        selected: r.state.selected,
    })
}

#[cfg(test)]
mod tests {
    use rand::RngCore;

    use super::*;
    use crate::agents::{Choice, UniformPolicy};
    use crate::episode::{replay_trace, Budgets};
    use crate::kg::{load_triples, Triple};

    const KB: &str = "Moving Violations|starred_actors|Brian Backer
Moving Violations|starred_actors|Jennifer Tilly
Moving Violations|starred_actors|John Murray
Moving Violations|directed_by|Neal Israel
Moving Violations|release_year|1985
Neal Israel|directed|Bachelor Party
Bachelor Party|starred_actors|Tom Hanks
";

    fn tid(g: &KnowledgeGraph, s: &str, r: &str, o: &str) -> TripleId {
        g.triple_id(Triple {
            subject: g.entity_id(s).unwrap(),
            relation: g.relation_id(r).unwrap(),
            object: g.entity_id(o).unwrap(),
        })
        .unwrap()
    }

    fn co_star(g: &KnowledgeGraph) -> QAExample {
        let bb = tid(g, "Moving Violations", "starred_actors", "Brian Backer");
        QAExample {
            question: "Who co-starred with Brian Backer?".into(),
            anchors: vec!["Brian Backer".into()],
            gold_paths: vec![vec![bb, tid(g, "Moving Violations", "starred_actors", "Jennifer Tilly")]],
            answers: vec!["Jennifer Tilly".into()],
        }
    }

    /// Takes gold-touching options and stops otherwise; the navigator always
    /// stops.
    struct Scripted {
        gold: Vec<TripleId>,
    }

    impl Policy for Scripted {
        fn choose(&self, d: &Decision, _greedy: bool, _rng: &mut dyn RngCore) -> Result<Choice> {
            let index = match d.agent {
                AgentKind::Navigator => d.stop_index(),
                _ => (0..d.n_candidates())
                    .find(|&i| d.mask[i] && d.provenance[i].len() == 1 && self.gold.contains(&d.provenance[i][0]))
                    .unwrap_or(d.stop_index()),
            };
            Ok(Choice { index, log_prob: 0.0, logits: vec![0.0; d.mask.len()] })
        }
    }

    fn cap(edge: f64, lat: f64, tok: f64) -> Mode {
        Mode::Cap(Budgets::new(edge, lat, tok).unwrap())
    }

    #[test]
    fn scripted_policy_reaches_exact_match_at_oracle_cost() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let policy = Scripted { gold: ex.gold_paths[0].clone() };
        let out = run_episode(&g, &ex, &policy, cap(10.0, 10.0, 100.0), EpisodeConfig::default(), 1, RunOptions::default())
            .unwrap();
        assert_eq!(out.em, 1);
        // Two six-token triple snippets.
        assert_eq!(out.counters.get(Resource::Tok), 12);
        assert_eq!(out.counters.get(Resource::Edge), 2);
        assert_eq!(out.counters.get(Resource::Lat), 0);
        let replay = replay_trace(&g, &out.trace).unwrap();
        assert_eq!(replay.counters, out.counters);
    }

    #[test]
    fn same_seed_same_episode() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let opts = RunOptions { record: true, ..RunOptions::default() };
        let a = run_episode(&g, &ex, &UniformPolicy, cap(6.0, 6.0, 40.0), EpisodeConfig::default(), 9, opts).unwrap();
        let b = run_episode(&g, &ex, &UniformPolicy, cap(6.0, 6.0, 40.0), EpisodeConfig::default(), 9, opts).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.steps.len(), b.steps.len());
    }

    #[test]
    fn zero_budgets_do_nothing() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let opts = RunOptions { record: true, ..RunOptions::default() };
        let out = run_episode(&g, &ex, &UniformPolicy, cap(0.0, 0.0, 0.0), EpisodeConfig::default(), 3, opts).unwrap();
        assert_eq!(out.counters, CostCounters::default());
        assert_eq!(out.em, 0);
        assert!(out.steps.is_empty());
    }

    #[test]
    fn random_episodes_respect_caps_and_replay() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        for seed in 0..200 {
            let b = Budgets::new((seed % 4) as f64, (seed % 5) as f64, (seed % 17) as f64).unwrap();
            let opts = RunOptions { record: true, ..RunOptions::default() };
            let out = run_episode(&g, &ex, &UniformPolicy, Mode::Cap(b), EpisodeConfig::default(), seed, opts).unwrap();
            assert!(out.counters.within(&b), "seed {seed}: {:?} vs {:?}", out.counters, b);
            let total: [f64; 3] = out.steps.iter().fold([0.0; 3], |mut acc, s| {
                for i in 0..3 {
                    acc[i] += s.cost[i];
                }
                acc
            });
            let c = out.counters.as_array();
            assert_eq!(total, [c[0] as f64, c[1] as f64, c[2] as f64]);
            assert_eq!(replay_trace(&g, &out.trace).unwrap().counters, out.counters);
        }
    }

    #[test]
    fn recorded_choices_are_feasible() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let opts = RunOptions { record: true, ..RunOptions::default() };
        let out = run_episode(&g, &ex, &UniformPolicy, cap(8.0, 8.0, 60.0), EpisodeConfig::default(), 5, opts).unwrap();
        assert!(!out.steps.is_empty());
        for s in &out.steps {
            assert!(s.decision.mask[s.action]);
            assert!(s.decision.feasible_count() >= 2);
        }
    }

    #[test]
    fn static_architect_adds_the_neighbourhood() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let opts = RunOptions { ablation: Ablation::StaticArchitect, static_hops: 2, ..RunOptions::default() };
        let out = run_episode(&g, &ex, &UniformPolicy, cap(50.0, 10.0, 10.0), EpisodeConfig::default(), 2, opts).unwrap();
        // Brian Backer -> Moving Violations -> its five incident triples.
        assert_eq!(out.counters.get(Resource::Edge), 5);
        let tight = run_episode(&g, &ex, &UniformPolicy, cap(2.0, 10.0, 10.0), EpisodeConfig::default(), 2, opts).unwrap();
        assert_eq!(tight.counters.get(Resource::Edge), 2);
    }

    #[test]
    fn heuristic_ablations_run_and_respect_caps() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        for ab in [Ablation::GreedyNavigator, Ablation::TopKCurator] {
            let b = Budgets::new(4.0, 3.0, 20.0).unwrap();
            let opts = RunOptions { ablation: ab, ..RunOptions::default() };
            let out = run_episode(&g, &ex, &UniformPolicy, Mode::Cap(b), EpisodeConfig::default(), 4, opts).unwrap();
            assert!(out.counters.within(&b));
        }
    }

    #[test]
    fn price_mode_runs_to_round_limit_or_stop() {
        let g = load_triples(KB).unwrap();
        let ex = co_star(&g);
        let mode = Mode::Price(Prices::new(0.1, 0.1, 0.01).unwrap());
        let out = run_episode(&g, &ex, &UniformPolicy, mode, EpisodeConfig::default(), 8, RunOptions::default()).unwrap();
        assert!(out.trace.summary.is_some());
    }
}
