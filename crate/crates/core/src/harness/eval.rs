use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, run_episode, EpisodeOutcome, QAExample, RunOptions};
use crate::agents::Policy;
use crate::episode::{Budgets, EpisodeConfig, Mode};
use crate::error::Result;
use crate::kg::KnowledgeGraph;

/// Mean edge and latency cost of a reference system, used to normalise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub edge: f64,
    pub lat: f64,
}

/// Aggregate accuracy and cost over a set of episodes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub em: f64,
    /// Mean `[edge, lat, tok]`.
    pub mean_cost: [f64; 3],
    /// Fraction of episodes within every budget; 1 when no budgets apply.
    pub feasibility: f64,
    /// Mean `max(0, C − β) / max(β, 1)` per resource.
    pub violation: [f64; 3],
}

/// `a / b` with `0 / 0 = 1`.
fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        if a == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        a / b
    }
}

impl EvalReport {
    /// Aggregates `(em, [edge, lat, tok])` pairs against optional budgets.
    pub fn from_costs(rows: &[(u8, [u64; 3])], budgets: Option<&Budgets>) -> Self {
        let n = rows.len().max(1) as f64;
        let mut em = 0.0;
        let mut mean_cost = [0.0; 3];
        let mut feasible = 0usize;
        let mut violation = [0.0; 3];
        for (e, c) in rows {
            em += *e as f64;
            let mut ok = true;
            for i in 0..3 {
                let x = c[i] as f64;
                mean_cost[i] += x;
                if let Some(b) = budgets {
                    let beta = b.as_array()[i];
                    let over = (x - beta).max(0.0);
                    ok &= over == 0.0;
                    violation[i] += over / beta.max(1.0);
                }
            }
            feasible += ok as usize;
        }
        for i in 0..3 {
            mean_cost[i] /= n;
            violation[i] /= n;
        }
        EvalReport {
            episodes: rows.len(),
            em: em / n,
            mean_cost,
            feasibility: if rows.is_empty() { 1.0 } else { feasible as f64 / n },
            violation,
        }
    }

    pub fn from_outcomes(outcomes: &[EpisodeOutcome], budgets: Option<&Budgets>) -> Self {
        let rows: Vec<(u8, [u64; 3])> = outcomes.iter().map(|o| (o.em, o.counters.as_array())).collect();
        Self::from_costs(&rows, budgets)
    }

    /// Mean edge cost over the reference's (`0/0` counts as 1).
    pub fn normalized_edge(&self, r: &Reference) -> f64 {
        ratio(self.mean_cost[0], r.edge)
    }

    /// Mean latency over the reference's (`0/0` counts as 1).
    pub fn normalized_lat(&self, r: &Reference) -> f64 {
        ratio(self.mean_cost[1], r.lat)
    }

    pub fn reference(&self) -> Reference {
        Reference { edge: self.mean_cost[0], lat: self.mean_cost[1] }
    }
}

/// Runs every example once (episode `i` seeded by `derive_seed(seed, i)`),
/// in parallel, returning outcomes in example order.
pub fn run_all(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    policy: &dyn Policy,
    mode: Mode,
    config: &EpisodeConfig,
    seed: u64,
    opts: RunOptions,
) -> Result<Vec<EpisodeOutcome>> {
    examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| run_episode(g, ex, policy, mode, config.clone(), derive_seed(seed, i as u64), opts))
        .collect()
}

/// [`run_all`] followed by aggregation. Cap-mode budgets are used for
/// feasibility unless `budgets` overrides them (price mode has none).
pub fn evaluate(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    policy: &dyn Policy,
    mode: Mode,
    config: &EpisodeConfig,
    seed: u64,
    opts: RunOptions,
    budgets: Option<&Budgets>,
) -> Result<(EvalReport, Vec<EpisodeOutcome>)> {
    let outcomes = run_all(g, examples, policy, mode, config, seed, opts)?;
    let cap = match mode {
        Mode::Cap(b) => Some(b),
        Mode::Price(_) => None,
    };
    let report = EvalReport::from_outcomes(&outcomes, budgets.or(cap.as_ref()));
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::UniformPolicy;
    use crate::harness::{generate_tasks, SyntheticTaskConfig};

    #[test]
    fn three_episode_hand_computation() {
        let b = Budgets::new(4.0, 2.0, 10.0).unwrap();
        let rows = [(1, [4, 2, 10]), (0, [5, 1, 10]), (1, [2, 3, 14])];
        let r = EvalReport::from_costs(&rows, Some(&b));
        assert!((r.em - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.mean_cost, [11.0 / 3.0, 2.0, 34.0 / 3.0]);
        assert!((r.feasibility - 1.0 / 3.0).abs() < 1e-12);
        let want = [(1.0 / 4.0) / 3.0, (1.0 / 2.0) / 3.0, (4.0 / 10.0) / 3.0];
        for i in 0..3 {
            assert!((r.violation[i] - want[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn self_normalisation_is_one() {
        let r = EvalReport::from_costs(&[(1, [3, 0, 5]), (0, [1, 0, 2])], None);
        assert_eq!(r.normalized_edge(&r.reference()), 1.0);
        assert_eq!(r.normalized_lat(&r.reference()), 1.0);
        assert_eq!(r.feasibility, 1.0);
    }

    #[test]
    fn feasible_and_violating_fractions_partition() {
        let b = Budgets::new(1.0, 1.0, 1.0).unwrap();
        let rows: Vec<(u8, [u64; 3])> = (0..20).map(|i| (0, [i % 3, i % 2, 0])).collect();
        let r = EvalReport::from_costs(&rows, Some(&b));
        let violating = rows.iter().filter(|(_, c)| c[0] > 1 || c[1] > 1).count() as f64 / 20.0;
        assert!((r.feasibility + violating - 1.0).abs() < 1e-12);
    }

    #[test]
    fn parallel_evaluation_is_deterministic() {
        let cfg = SyntheticTaskConfig { entities: 60, train: 5, eval: 16, ..SyntheticTaskConfig::default() };
        let ds = generate_tasks(&cfg).unwrap();
        let mode = Mode::Cap(Budgets::new(8.0, 8.0, 64.0).unwrap());
        let ec = EpisodeConfig::default();
        let (a, oa) = evaluate(&ds.graph, &ds.eval, &UniformPolicy, mode, &ec, 3, RunOptions::default(), None).unwrap();
        let (b, ob) = evaluate(&ds.graph, &ds.eval, &UniformPolicy, mode, &ec, 3, RunOptions::default(), None).unwrap();
        assert_eq!(a, b);
        assert!(oa.iter().zip(&ob).all(|(x, y)| x.trace == y.trace));
        assert_eq!(a.feasibility, 1.0);
    }
}
