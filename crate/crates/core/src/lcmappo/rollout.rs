use rayon::prelude::*;

use crate::agents::{Decision, Policy};
use crate::episode::{EpisodeConfig, Mode, Prices};
use crate::error::{Error, Result};
use crate::harness::{derive_seed, run_episode, QAExample, RunOptions};
use crate::kg::KnowledgeGraph;

/// One recorded decision with its reward and cost increments.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub episode: usize,
    pub decision: Decision,
    pub action: usize,
    pub log_prob: f64,
    pub global: Vec<f64>,
    /// Exact match on the episode's last decision, 0 elsewhere.
    pub r_acc: f64,
    /// `[edge, lat, tok]` charged by this decision.
    pub cost: [f64; 3],
    pub terminal: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub example: usize,
    pub r_acc: f64,
    pub costs: [f64; 3],
    pub transitions: usize,
}

/// Transitions grouped by episode, in episode order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Buffer {
    pub transitions: Vec<Transition>,
    pub episodes: Vec<EpisodeSummary>,
}

impl Buffer {
    /// `[start, end)` transition ranges per episode.
    pub fn episode_ranges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.episodes.len());
        let mut start = 0;
        for e in &self.episodes {
            out.push((start, start + e.transitions));
            start += e.transitions;
        }
        out
    }

    pub fn mean_costs(&self) -> [f64; 3] {
        let n = self.episodes.len().max(1) as f64;
        let mut m = [0.0; 3];
        for e in &self.episodes {
            for k in 0..3 {
                m[k] += e.costs[k] / n;
            }
        }
        m
    }

    pub fn mean_r_acc(&self) -> f64 {
        self.episodes.iter().map(|e| e.r_acc).sum::<f64>() / self.episodes.len().max(1) as f64
    }
}

/// Where rollouts happen: the mode, the episode structure, and the prices
/// shown to the agents when the mode carries caps.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutSpec {
    pub mode: Mode,
    pub config: EpisodeConfig,
    pub cap_prices: Option<Prices>,
}

/// Samples `n_episodes` training episodes. Episode `j` draws its example and
/// its seed from `derive_seed(seed, j)`, so results do not depend on how the
/// work is scheduled.
pub fn collect_rollouts(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    policy: &dyn Policy,
    spec: &RolloutSpec,
    n_episodes: usize,
    seed: u64,
) -> Result<Buffer> {
    if n_episodes == 0 {
        return Ok(Buffer::default());
    }
    if examples.is_empty() {
        return Err(Error::Config("no training examples".into()));
    }
    let opts = RunOptions { record: true, cap_prices: spec.cap_prices, ..RunOptions::default() };
    let outcomes = (0..n_episodes)
        .into_par_iter()
        .map(|j| {
            let s = derive_seed(seed, j as u64);
            let idx = (s % examples.len() as u64) as usize;
            let out = run_episode(g, &examples[idx], policy, spec.mode, spec.config.clone(), s, opts)?;
            Ok((idx, out))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut buf = Buffer::default();
    for (j, (idx, out)) in outcomes.into_iter().enumerate() {
        let n = out.steps.len();
        let r_acc = out.em as f64;
        let c = out.counters.as_array();
        buf.episodes.push(EpisodeSummary {
            example: idx,
            r_acc,
            costs: [c[0] as f64, c[1] as f64, c[2] as f64],
            transitions: n,
        });
        for (t, s) in out.steps.into_iter().enumerate() {
            let terminal = t + 1 == n;
            buf.transitions.push(Transition {
                episode: j,
                decision: s.decision,
                action: s.action,
                log_prob: s.log_prob,
                global: s.global,
                r_acc: if terminal { r_acc } else { 0.0 },
                cost: s.cost,
                terminal,
            });
        }
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::UniformPolicy;
    use crate::episode::Budgets;
    use crate::harness::{generate_tasks, SyntheticTaskConfig};

    fn fixture() -> crate::harness::Dataset {
        generate_tasks(&SyntheticTaskConfig { entities: 60, train: 30, eval: 5, ..SyntheticTaskConfig::default() }).unwrap()
    }

    fn cap_spec() -> RolloutSpec {
        RolloutSpec { mode: Mode::Cap(Budgets::new(3.0, 2.0, 9.0).unwrap()), config: EpisodeConfig::default(), cap_prices: None }
    }

    #[test]
    fn zero_episodes_is_empty() {
        let ds = fixture();
        let b = collect_rollouts(&ds.graph, &ds.train, &UniformPolicy, &cap_spec(), 0, 1).unwrap();
        assert_eq!(b, Buffer::default());
    }

    #[test]
    fn summaries_match_transition_sums_and_caps() {
        let ds = fixture();
        let b = collect_rollouts(&ds.graph, &ds.train, &UniformPolicy, &cap_spec(), 40, 2).unwrap();
        for (e, (s, t)) in b.episodes.iter().zip(b.episode_ranges()) {
            let mut sum = [0.0; 3];
            for tr in &b.transitions[s..t] {
                assert!(tr.cost.iter().all(|&c| c >= 0.0));
                for k in 0..3 {
                    sum[k] += tr.cost[k];
                }
            }
            assert_eq!(sum, e.costs);
            assert!(e.costs[0] <= 3.0 && e.costs[1] <= 2.0 && e.costs[2] <= 9.0);
            let rewarded = b.transitions[s..t].iter().filter(|x| x.r_acc != 0.0).count();
            assert!(rewarded <= 1);
            if t > s {
                assert!(b.transitions[t - 1].terminal);
                assert_eq!(b.transitions[t - 1].r_acc, e.r_acc);
            }
        }
    }

    #[test]
    fn same_seed_same_buffer() {
        let ds = fixture();
        let a = collect_rollouts(&ds.graph, &ds.train, &UniformPolicy, &cap_spec(), 25, 5).unwrap();
        let b = collect_rollouts(&ds.graph, &ds.train, &UniformPolicy, &cap_spec(), 25, 5).unwrap();
        assert_eq!(a, b);
        let bits = |x: &Buffer| x.transitions.iter().map(|t| t.log_prob.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
