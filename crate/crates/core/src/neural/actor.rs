use rand::Rng;

use super::mlp::{dot, MlpCache, MlpLayout};
use super::NetConfig;
use crate::agents::{cand_dim, masked_softmax, obs_dim, AgentKind, Decision};
use crate::error::{Error, Result};
use crate::scoring::FusionWeights;

const FUSION_INIT: f64 = 0.25;

/// Candidate-conditioned actor: a tanh trunk over the observation, a shared
/// one-hidden-layer scorer over `(trunk, candidate)` producing one logit per
/// candidate, and a linear stop head over the trunk. The architect adds the
/// fused edge score `w·φ` with learned `w`; the curator's redundancy penalty
/// arrives as a fixed logit offset.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorNet {
    agent: AgentKind,
    trunk: MlpLayout,
    scorer_hidden: usize,
    scorer_offset: usize,
    stop: MlpLayout,
    /// Start of the four fusion weights (architect only).
    fusion_offset: Option<usize>,
    freeze_fusion: bool,
    pub params: Vec<f64>,
}

/// Cached forward values for one decision.
#[derive(Clone, Debug)]
pub struct ActorOutput {
    trunk: MlpCache,
    /// Row-major `n × scorer_hidden` hidden activations.
    hidden: Vec<f64>,
    /// `n + 1` logits, stop last (masked entries included).
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ActorNet {
    pub fn new<R: Rng + ?Sized>(agent: AgentKind, cfg: &NetConfig, rng: &mut R) -> Self {
        let obs = obs_dim(agent);
        let cd = cand_dim(agent);
        let h = cfg.trunk_hidden;
        let mut sizes = vec![obs];
        sizes.extend(std::iter::repeat(h).take(cfg.trunk_layers));
        let trunk = MlpLayout::new(&sizes, 0, true);
        let s = cfg.scorer_hidden;
        let scorer_offset = trunk.end();
        let scorer_len = s * (h + cd) + s + s + 1;
        let stop = MlpLayout::new(&[h, 1], scorer_offset + scorer_len, false);
        let fusion_offset = (agent == AgentKind::Architect).then_some(stop.end());
        let total = stop.end() + if fusion_offset.is_some() { 4 } else { 0 };
        let mut params = vec![0.0; total];
        trunk.init(&mut params, 1.0, rng);
        // Scorer: hidden block at unit gain, output row at the head gain.
        let a1 = (3.0 / (h + cd) as f64).sqrt();
        for p in &mut params[scorer_offset..scorer_offset + s * (h + cd)] {
            *p = rng.gen_range(-a1..=a1);
        }
        let w2 = scorer_offset + s * (h + cd) + s;
        let a2 = cfg.head_gain * (3.0 / s as f64).sqrt();
        for p in &mut params[w2..w2 + s] {
            *p = rng.gen_range(-a2..=a2);
        }
        stop.init(&mut params, cfg.head_gain, rng);
        if let Some(f) = fusion_offset {
            params[f..f + 4].fill(FUSION_INIT);
        }
        ActorNet {
            agent,
            trunk,
            scorer_hidden: s,
            scorer_offset,
            stop,
            fusion_offset,
            freeze_fusion: cfg.freeze_fusion,
            params,
        }
    }

    pub fn agent(&self) -> AgentKind {
        self.agent
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Replaces the parameters, checking the length.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "{} actor expects {} parameters, got {}",
                self.agent.name(),
                self.params.len(),
                params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        match self.fusion_offset {
            Some(f) => FusionWeights([self.params[f], self.params[f + 1], self.params[f + 2], self.params[f + 3]]),
            None => FusionWeights::default(),
        }
    }

    fn check(&self, d: &Decision) -> Result<usize> {
        let n = d.n_candidates();
        let cd = cand_dim(self.agent);
        if d.agent != self.agent
            || d.obs.len() != self.trunk.input_dim()
            || d.cand_feats.len() != n * cd
            || d.mask.len() != n + 1
        {
            return Err(Error::Shape(format!(
                "{} actor got a {} decision with obs {} / feats {} / mask {} for {n} candidates",
                self.agent.name(),
                d.agent.name(),
                d.obs.len(),
                d.cand_feats.len(),
                d.mask.len()
            )));
        }
        Ok(n)
    }

    pub fn forward(&self, d: &Decision) -> Result<ActorOutput> {
        self.forward_with(&self.params, d)
    }

    /// Forward pass with an explicit parameter vector of this layout.
    pub fn forward_with(&self, p: &[f64], d: &Decision) -> Result<ActorOutput> {
        let n = self.check(d)?;
        let cd = cand_dim(self.agent);
        let trunk = self.trunk.forward(p, &d.obs);
        let h = trunk.output();
        let hd = h.len();
        let s = self.scorer_hidden;
        let w1 = self.scorer_offset;
        let b1 = w1 + s * (hd + cd);
        let w2 = b1 + s;
        let b2 = w2 + s;
        let base: Vec<f64> = (0..s).map(|j| p[b1 + j] + dot(&p[w1 + j * (hd + cd)..w1 + j * (hd + cd) + hd], h)).collect();
        let mut hidden = Vec::with_capacity(n * s);
        let mut logits = Vec::with_capacity(n + 1);
        for i in 0..n {
            let c = d.candidate(i);
            let mut z = p[b2] + d.logit_offsets[i];
            for j in 0..s {
                let row = w1 + j * (hd + cd) + hd;
                let a = (base[j] + dot(&p[row..row + cd], c)).tanh();
                hidden.push(a);
                z += p[w2 + j] * a;
            }
            if let Some(f) = self.fusion_offset {
                z += dot(&p[f..f + 4], &c[..4]);
            }
            logits.push(z);
        }
        logits.push(self.stop.forward(p, h).output()[0]);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("{} logits", self.agent.name())));
        }
        let (probs, log_probs) = masked_softmax(&logits, &d.mask)?;
        Ok(ActorOutput { trunk, hidden, logits, probs, log_probs })
    }

    /// Accumulates `∂L/∂θ` into `grad` given `dlogits = ∂L/∂logits`.
    pub fn backward(&self, d: &Decision, out: &ActorOutput, dlogits: &[f64], grad: &mut [f64]) {
        self.backward_with(&self.params, d, out, dlogits, grad)
    }

    pub fn backward_with(&self, p: &[f64], d: &Decision, out: &ActorOutput, dlogits: &[f64], grad: &mut [f64]) {
        let n = d.n_candidates();
        let cd = cand_dim(self.agent);
        let h = out.trunk.output();
        let hd = h.len();
        let s = self.scorer_hidden;
        let w1 = self.scorer_offset;
        let b1 = w1 + s * (hd + cd);
        let w2 = b1 + s;
        let b2 = w2 + s;
        let mut dh = vec![0.0; hd];
        for i in 0..n {
            let g = dlogits[i];
            if g == 0.0 {
                continue;
            }
            let c = d.candidate(i);
            grad[b2] += g;
            for j in 0..s {
                let a = out.hidden[i * s + j];
                grad[w2 + j] += g * a;
                let dz = g * p[w2 + j] * (1.0 - a * a);
                if dz == 0.0 {
                    continue;
                }
                let row = w1 + j * (hd + cd);
                for k in 0..hd {
                    grad[row + k] += dz * h[k];
                    dh[k] += dz * p[row + k];
                }
                for k in 0..cd {
                    grad[row + hd + k] += dz * c[k];
                }
                grad[b1 + j] += dz;
            }
            if let Some(f) = self.fusion_offset {
                if !self.freeze_fusion {
                    for k in 0..4 {
                        grad[f + k] += g * c[k];
                    }
                }
            }
        }
        let gs = dlogits[n];
        if gs != 0.0 {
            let stop_cache = self.stop.forward(p, h);
            let dh_stop = self.stop.backward(p, &stop_cache, &[gs], grad);
            for (a, b) in dh.iter_mut().zip(&dh_stop) {
                *a += b;
            }
        }
        if dh.iter().any(|&v| v != 0.0) {
            self.trunk.backward(p, &out.trunk, &dh, grad);
        }
    }
}

/// `∂ log π(a) / ∂ logits`: `1[j=a] − π_j` on feasible entries, 0 on masked.
pub fn log_prob_grad(probs: &[f64], mask: &[bool], a: usize) -> Vec<f64> {
    probs
        .iter()
        .zip(mask)
        .enumerate()
        .map(|(j, (&p, &m))| if m { (j == a) as u8 as f64 - p } else { 0.0 })
        .collect()
}

/// Entropy over feasible actions and its gradient w.r.t. the logits:
/// `∂H/∂z_j = −π_j (log π_j + H)`.
pub fn entropy_and_grad(probs: &[f64], log_probs: &[f64], mask: &[bool]) -> (f64, Vec<f64>) {
    let h: f64 = probs
        .iter()
        .zip(log_probs)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &lp), _)| if p > 0.0 { -p * lp } else { 0.0 })
        .sum();
    let g = probs
        .iter()
        .zip(log_probs)
        .zip(mask)
        .map(|((&p, &lp), &m)| if m && p > 0.0 { -p * (lp + h) } else { 0.0 })
        .collect();
    (h, g)
}
