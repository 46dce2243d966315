use rand::Rng;

use super::mlp::{MlpCache, MlpLayout};
use super::NetConfig;
use crate::agents::{ActionFeatures, ACTION_DIM, GLOBAL_DIM};
use crate::error::{Error, Result};

/// Heads: task, edge, lat, tok.
pub const HEADS: usize = 4;
pub const N_AGENTS: usize = 3;

/// Units of each head's output: the network predicts `value / scale`.
pub const HEAD_SCALES: [f64; HEADS] = [1.0, 8.0, 16.0, 64.0];

/// Hypernetwork output per head: one weight per agent, then a bias.
const HYPER_PER_HEAD: usize = N_AGENTS + 1;

/// Centralized critic: per-agent utility networks over
/// `(global features, action features)` with one output per head, mixed per
/// head as `Q_k = Σ_i |w_{k,i}(s)| U_{i,k} + b_k(s)` where `(w, b)` come
/// from a hypernetwork over the global features.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticBundle {
    utils: [MlpLayout; N_AGENTS],
    hyper: MlpLayout,
    pub params: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct CriticOutput {
    util_caches: Vec<MlpCache>,
    hyper_cache: MlpCache,
    /// `U[i][k]`.
    pub utilities: [[f64; HEADS]; N_AGENTS],
    /// Mixed values `Q_k` in network units.
    pub q: [f64; HEADS],
}

impl CriticOutput {
    pub fn mixer(&self) -> &[f64] {
        self.hyper_cache.output()
    }
}

/// Applies the monotonic mixer to explicit utilities.
pub fn mix(hyper: &[f64], utilities: &[[f64; HEADS]; N_AGENTS]) -> [f64; HEADS] {
    let mut q = [0.0; HEADS];
    for (k, qk) in q.iter_mut().enumerate() {
        let h = &hyper[k * HYPER_PER_HEAD..(k + 1) * HYPER_PER_HEAD];
        *qk = h[N_AGENTS] + (0..N_AGENTS).map(|i| h[i].abs() * utilities[i][k]).sum::<f64>();
    }
    q
}

impl CriticBundle {
    pub fn new<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let mut sizes = vec![GLOBAL_DIM + ACTION_DIM];
        sizes.extend(std::iter::repeat(cfg.critic_hidden).take(cfg.critic_layers));
        sizes.push(HEADS);
        let mut offset = 0;
        let utils = std::array::from_fn(|_| {
            let l = MlpLayout::new(&sizes, offset, false);
            offset = l.end();
            l
        });
        let hyper = MlpLayout::new(&[GLOBAL_DIM, cfg.mixer_hidden, HEADS * HYPER_PER_HEAD], offset, false);
        let mut params = vec![0.0; hyper.end()];
        for u in &utils {
            u.init(&mut params, cfg.head_gain, rng);
        }
        hyper.init(&mut params, 1.0, rng);
        CriticBundle { utils, hyper, params }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("critic expects {} parameters, got {}", self.params.len(), params.len())));
        }
        self.params = params;
        Ok(())
    }

    fn check_global(global: &[f64]) -> Result<()> {
        if global.len() != GLOBAL_DIM {
            return Err(Error::Shape(format!("global features have {} entries, expected {GLOBAL_DIM}", global.len())));
        }
        Ok(())
    }

    fn util_input(global: &[f64], action: &ActionFeatures) -> Vec<f64> {
        let mut x = Vec::with_capacity(GLOBAL_DIM + ACTION_DIM);
        x.extend_from_slice(global);
        x.extend_from_slice(action);
        x
    }

    /// Utility of agent `i` taking `action` in state `global`.
    pub fn utility(&self, i: usize, global: &[f64], action: &ActionFeatures) -> Result<[f64; HEADS]> {
        Self::check_global(global)?;
        let c = self.utils[i].forward(&self.params, &Self::util_input(global, action));
        let mut u = [0.0; HEADS];
        u.copy_from_slice(c.output());
        Ok(u)
    }

    /// Mixer weights and biases for a state (`HEADS × (N_AGENTS + 1)`).
    pub fn mixer_params(&self, global: &[f64]) -> Result<Vec<f64>> {
        Self::check_global(global)?;
        Ok(self.hyper.forward(&self.params, global).output().to_vec())
    }

    pub fn forward(&self, global: &[f64], actions: &[ActionFeatures; N_AGENTS]) -> Result<CriticOutput> {
        self.forward_with(&self.params, global, actions)
    }

    pub fn forward_with(&self, p: &[f64], global: &[f64], actions: &[ActionFeatures; N_AGENTS]) -> Result<CriticOutput> {
        Self::check_global(global)?;
        let util_caches: Vec<MlpCache> = (0..N_AGENTS)
            .map(|i| self.utils[i].forward(p, &Self::util_input(global, &actions[i])))
            .collect();
        let mut utilities = [[0.0; HEADS]; N_AGENTS];
        for (u, c) in utilities.iter_mut().zip(&util_caches) {
            u.copy_from_slice(c.output());
        }
        let hyper_cache = self.hyper.forward(p, global);
        let q = mix(hyper_cache.output(), &utilities);
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("critic output".into()));
        }
        Ok(CriticOutput { util_caches, hyper_cache, utilities, q })
    }

    /// Accumulates `∂L/∂θ` given `dq = ∂L/∂Q`.
    pub fn backward(&self, out: &CriticOutput, dq: &[f64; HEADS], grad: &mut [f64]) {
        self.backward_with(&self.params, out, dq, grad)
    }

    pub fn backward_with(&self, p: &[f64], out: &CriticOutput, dq: &[f64; HEADS], grad: &mut [f64]) {
        let hyper = out.hyper_cache.output();
        let mut dhyper = vec![0.0; HEADS * HYPER_PER_HEAD];
        let mut du = [[0.0; HEADS]; N_AGENTS];
        for k in 0..HEADS {
            let base = k * HYPER_PER_HEAD;
            dhyper[base + N_AGENTS] = dq[k];
            for i in 0..N_AGENTS {
                let w = hyper[base + i];
                du[i][k] = dq[k] * w.abs();
                dhyper[base + i] = dq[k] * out.utilities[i][k] * sign(w);
            }
        }
        for i in 0..N_AGENTS {
            if du[i].iter().any(|&v| v != 0.0) {
                self.utils[i].backward(p, &out.util_caches[i], &du[i], grad);
            }
        }
        if dhyper.iter().any(|&v| v != 0.0) {
            self.hyper.backward(p, &out.hyper_cache, &dhyper, grad);
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
