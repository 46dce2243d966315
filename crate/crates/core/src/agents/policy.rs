use rand::{Rng, RngCore};

use super::Decision;
use crate::error::{Error, Result};
use crate::scoring::FusionWeights;

/// Outcome of a policy query.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub index: usize,
    pub log_prob: f64,
    /// Unmasked logits for every option (stop last).
    pub logits: Vec<f64>,
}

/// Anything that can pick among a decision's feasible options.
pub trait Policy: Sync {
    fn choose(&self, decision: &Decision, greedy: bool, rng: &mut dyn RngCore) -> Result<Choice>;

    /// Weights for the architect's fused edge score.
    fn fusion_weights(&self) -> FusionWeights {
        FusionWeights::default()
    }
}

/// Softmax restricted to unmasked entries; masked entries get probability 0
/// and log-probability `-inf`.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<(Vec<f64>, Vec<f64>)> {
    if logits.len() != mask.len() {
        return Err(Error::Shape(format!("{} logits vs {} mask entries", logits.len(), mask.len())));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("logit".into()));
    }
    let sum: f64 = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| (l - max).exp())
        .sum();
    let log_z = max + sum.ln();
    let mut probs = Vec::with_capacity(logits.len());
    let mut logp = Vec::with_capacity(logits.len());
    for (&l, &m) in logits.iter().zip(mask) {
        if m {
            let lp = l - log_z;
            logp.push(lp);
            probs.push(lp.exp());
        } else {
            logp.push(f64::NEG_INFINITY);
            probs.push(0.0);
        }
    }
    Ok((probs, logp))
}

/// Samples an index from `probs` (or takes the first argmax when greedy).
pub fn pick(probs: &[f64], greedy: bool, rng: &mut dyn RngCore) -> usize {
    if greedy {
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        return best;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Uniform over feasible options; the random-policy baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn choose(&self, decision: &Decision, greedy: bool, rng: &mut dyn RngCore) -> Result<Choice> {
        let logits = vec![0.0; decision.mask.len()];
        let (probs, logp) = masked_softmax(&logits, &decision.mask)?;
        let index = pick(&probs, greedy, rng);
        Ok(Choice { index, log_prob: logp[index], logits })
    }
}
