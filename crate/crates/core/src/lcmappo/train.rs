use std::io::Write;
use std::path::Path;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coma::coma_advantage;
use super::dual::{DualConfig, DualState};
use super::ppo::{ppo_update, Optimizers, UpdateConfig};
use super::returns::head_returns;
use super::rollout::{collect_rollouts, Buffer, RolloutSpec};
use crate::episode::{Budgets, EpisodeConfig, Mode, Prices};
use crate::error::{Error, Result};
use crate::harness::{derive_seed, EvalReport, QAExample};
use crate::kg::KnowledgeGraph;
use crate::neural::{Checkpoint, Model, HEADS, HEAD_SCALES};

/// Which multipliers exist and how they move.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One learned multiplier per resource.
    #[default]
    Lcmappo,
    /// No multipliers: prices stay at zero.
    Mappo,
    /// Constant prices from `fixed_lambda`.
    FixedLambda,
    /// One learned multiplier on `Σ_k C_k / max(β_k, 1)` against a target
    /// of 3; resource `k` is priced at `λ / max(β_k, 1)`.
    Rcpo,
}

/// How budgets act during training rollouts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enforcement {
    /// Budgets mask actions; prices shape preferences below the caps.
    #[default]
    Cap,
    /// No masking; budgets only drive the multipliers.
    Price,
}

/// Training hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub iterations: usize,
    /// Stop once this many transitions were collected.
    pub max_transitions: Option<u64>,
    pub episodes_per_iter: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub max_grad_norm: f64,
    pub dual: DualConfig,
    /// Starting multipliers for the learned variants.
    pub initial_lambda: [f64; 3],
    /// Prices for the fixed-multiplier variant.
    pub fixed_lambda: [f64; 3],
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Lcmappo,
            iterations: 200,
            max_transitions: None,
            episodes_per_iter: 64,
            epochs: 4,
            minibatch: 256,
            clip: 0.2,
            entropy_coef: 0.01,
            actor_lr: 3e-4,
            critic_lr: 1e-3,
            gamma: 1.0,
            max_grad_norm: 1.0,
            dual: DualConfig::default(),
            initial_lambda: [0.0; 3],
            fixed_lambda: [0.1; 3],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0) {
            return Err(Error::Config("clip must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if self.episodes_per_iter == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config("episodes_per_iter, epochs and minibatch must be positive".into()));
        }
        let rates = [self.actor_lr, self.critic_lr, self.entropy_coef, self.max_grad_norm];
        if rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::Config("learning rates, entropy coefficient and grad norm must be nonnegative".into()));
        }
        Prices::from_array(self.initial_lambda).validate()?;
        Prices::from_array(self.fixed_lambda).validate()?;
        self.dual.validate()
    }
}

/// The training environment: budgets, how they act, and episode structure.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainEnv {
    pub budgets: Budgets,
    pub enforcement: Enforcement,
    pub episode: EpisodeConfig,
}

/// One row of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterMetrics {
    pub iter: usize,
    pub em: f64,
    pub c_edge: f64,
    pub c_lat: f64,
    pub c_tok: f64,
    pub lambda_edge: f64,
    pub lambda_lat: f64,
    pub lambda_tok: f64,
    pub feasibility: f64,
    pub viol_edge: f64,
    pub viol_lat: f64,
    pub viol_tok: f64,
    pub loss_pi: f64,
    pub loss_v: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub duals: DualState,
    /// Prices in effect after the last iteration.
    pub prices: Prices,
    pub metrics: Vec<IterMetrics>,
    pub transitions: u64,
}

/// Prices the agents see and the returns are shaped with.
pub fn effective_prices(variant: Variant, duals: &DualState, fixed: [f64; 3], budgets: &Budgets) -> Prices {
    match variant {
        Variant::Lcmappo => duals.prices(),
        Variant::Mappo => Prices::default(),
        Variant::FixedLambda => Prices::from_array(fixed),
        Variant::Rcpo => {
            let b = budgets.as_array();
            Prices::from_array(std::array::from_fn(|k| duals.lambda[0] / b[k].max(1.0)))
        }
    }
}

/// Per-agent standardisation (`ε = 1e-8` guard on the deviation).
pub fn normalize_per_agent(values: &mut [f64], agents: &[usize]) {
    for a in 0..3 {
        let idx: Vec<usize> = (0..values.len()).filter(|&i| agents[i] == a).collect();
        if idx.is_empty() {
            continue;
        }
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| values[i]).sum::<f64>() / n;
        let var = idx.iter().map(|&i| (values[i] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt() + 1e-8;
        for &i in &idx {
            values[i] = (values[i] - mean) / sd;
        }
    }
}

/// Counterfactual advantages under the collecting policy, normalised.
fn advantages(model: &Model, buf: &Buffer, prices: &Prices) -> Result<Vec<f64>> {
    let mut adv = buf
        .transitions
        .par_iter()
        .map(|t| {
            let out = model.actors.get(t.decision.agent).forward(&t.decision)?;
            coma_advantage(&model.critic, prices, t, &out.probs)
        })
        .collect::<Result<Vec<f64>>>()?;
    let agents: Vec<usize> = buf.transitions.iter().map(|t| t.decision.agent.index()).collect();
    normalize_per_agent(&mut adv, &agents);
    Ok(adv)
}

/// Collect, advantage, update, then move the multipliers; repeated for the
/// configured number of iterations or until the transition budget is spent.
/// `on_iter` sees every metrics row as it is produced.
pub fn train(
    g: &KnowledgeGraph,
    examples: &[QAExample],
    mut model: Model,
    env: &TrainEnv,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&IterMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    env.budgets.validate()?;
    env.episode.validate()?;
    let mut duals = DualState::new(cfg.dual, cfg.initial_lambda);
    let mut opt = Optimizers::new(&model, cfg.actor_lr, cfg.critic_lr);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, u64::MAX));
    let update = UpdateConfig {
        epochs: cfg.epochs,
        minibatch: cfg.minibatch,
        clip: cfg.clip,
        entropy_coef: cfg.entropy_coef,
        max_grad_norm: cfg.max_grad_norm,
    };
    let mut metrics = Vec::new();
    let mut transitions = 0u64;
    let mut prices = effective_prices(cfg.variant, &duals, cfg.fixed_lambda, &env.budgets);
    for iter in 0..cfg.iterations {
        if cfg.max_transitions.is_some_and(|m| transitions >= m) {
            break;
        }
        let spec = match env.enforcement {
            Enforcement::Cap => RolloutSpec { mode: Mode::Cap(env.budgets), config: env.episode.clone(), cap_prices: Some(prices) },
            Enforcement::Price => RolloutSpec { mode: Mode::Price(prices), config: env.episode.clone(), cap_prices: None },
        };
        let buf = collect_rollouts(g, examples, &model.actors, &spec, cfg.episodes_per_iter, derive_seed(cfg.seed, iter as u64))?;
        transitions += buf.transitions.len() as u64;
        let adv = advantages(&model, &buf, &prices)?;
        let targets: Vec<[f64; HEADS]> = head_returns(&buf, cfg.gamma)
            .into_iter()
            .map(|g| std::array::from_fn(|k| g[k] / HEAD_SCALES[k]))
            .collect();
        let stats = ppo_update(&mut model, &mut opt, &buf.transitions, &adv, &targets, &update, &mut rng)
            .map_err(|e| Error::NonFinite(format!("iteration {iter}: {e}")))?;
        let mean = buf.mean_costs();
        match cfg.variant {
            Variant::Lcmappo => duals.update(mean, &env.budgets),
            Variant::Rcpo => {
                let b = env.budgets.as_array();
                let per_episode: f64 = buf
                    .episodes
                    .iter()
                    .map(|e| (0..3).map(|k| e.costs[k] / b[k].max(1.0)).sum::<f64>())
                    .sum::<f64>()
                    / buf.episodes.len().max(1) as f64;
                duals.update_one(0, per_episode, 3.0);
            }
            Variant::Mappo | Variant::FixedLambda => {}
        }
        prices = effective_prices(cfg.variant, &duals, cfg.fixed_lambda, &env.budgets);
        let rows: Vec<(u8, [u64; 3])> = buf
            .episodes
            .iter()
            .map(|e| (e.r_acc as u8, [e.costs[0] as u64, e.costs[1] as u64, e.costs[2] as u64]))
            .collect();
        let report = EvalReport::from_costs(&rows, Some(&env.budgets));
        let l = prices.as_array();
        let row = IterMetrics {
            iter,
            em: buf.mean_r_acc(),
            c_edge: mean[0],
            c_lat: mean[1],
            c_tok: mean[2],
            lambda_edge: l[0],
            lambda_lat: l[1],
            lambda_tok: l[2],
            feasibility: report.feasibility,
            viol_edge: report.violation[0],
            viol_lat: report.violation[1],
            viol_tok: report.violation[2],
            loss_pi: stats.loss_pi,
            loss_v: stats.loss_v,
            entropy: stats.entropy,
        };
        if [row.loss_pi, row.loss_v, row.entropy].iter().any(|x| !x.is_finite()) || l.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("iteration {iter}: non-finite metrics {row:?}")));
        }
        info!(
            "iter {iter}: em {:.3} cost [{:.2} {:.2} {:.2}] lambda [{:.3} {:.3} {:.3}] loss_v {:.4}",
            row.em, row.c_edge, row.c_lat, row.c_tok, l[0], l[1], l[2], row.loss_v
        );
        on_iter(&row);
        metrics.push(row);
    }
    Ok(TrainOutcome { model, duals, prices, metrics, transitions })
}

/// Writes metrics rows as CSV with a header line.
pub fn write_metrics_csv<W: Write>(w: W, rows: &[IterMetrics]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wr.write_record([
            "iter", "em", "c_edge", "c_lat", "c_tok", "lambda_edge", "lambda_lat", "lambda_tok", "feasibility",
            "viol_edge", "viol_lat", "viol_tok", "loss_pi", "loss_v", "entropy",
        ])?;
    }
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

const DUAL_SECTION: &str = "duals";
const PRICE_SECTION: &str = "prices";

/// Model, multiplier state and the prices in effect.
pub fn save_checkpoint(path: &Path, model: &Model, duals: &DualState, prices: &Prices) -> Result<()> {
    checkpoint_of(model, duals, prices).save(path)
}

pub fn checkpoint_of(model: &Model, duals: &DualState, prices: &Prices) -> Checkpoint {
    let mut ck = Checkpoint::default();
    model.write_sections(&mut ck);
    ck.push(DUAL_SECTION, duals.to_section());
    ck.push(PRICE_SECTION, prices.as_array().to_vec());
    ck
}

/// Restores the model and the stored prices (zero when absent).
pub fn load_checkpoint(path: &Path) -> Result<(Model, Prices)> {
    let ck = Checkpoint::load(path)?;
    let model = Model::from_checkpoint(&ck)?;
    let prices = match ck.get(PRICE_SECTION) {
        Ok(v) if v.len() == 3 => Prices::new(v[0], v[1], v[2]).map_err(|e| Error::Checkpoint(e.to_string()))?,
        Ok(v) => return Err(Error::Checkpoint(format!("price section holds {} values", v.len()))),
        Err(_) => Prices::default(),
    };
    Ok((model, prices))
}
