use super::rollout::Transition;
use crate::agents::noop_action_features;
use crate::episode::Prices;
use crate::error::Result;
use crate::neural::{mix, CriticBundle, HEADS, HEAD_SCALES, N_AGENTS};

/// `Q′ = Q_task − Σ_k λ_k Q_k` with heads converted to natural units.
pub fn shaped_value(q: &[f64; HEADS], prices: &Prices) -> f64 {
    let l = prices.as_array();
    q[0] * HEAD_SCALES[0] - (0..3).map(|k| l[k] * q[k + 1] * HEAD_SCALES[k + 1]).sum::<f64>()
}

/// `Q′(s, (a′, a_{−i}))` for every option of the acting agent, with the
/// other agents at their no-op action. Masked options are not evaluated and
/// read 0.
pub fn option_values(critic: &CriticBundle, t: &Transition, prices: &Prices) -> Result<Vec<f64>> {
    let i = t.decision.agent.index();
    let hyper = critic.mixer_params(&t.global)?;
    let mut utils = [[0.0; HEADS]; N_AGENTS];
    let noop = noop_action_features();
    for (j, u) in utils.iter_mut().enumerate() {
        if j != i {
            *u = critic.utility(j, &t.global, &noop)?;
        }
    }
    t.decision
        .action_feats
        .iter()
        .zip(&t.decision.mask)
        .map(|(a, &m)| {
            if !m {
                return Ok(0.0);
            }
            utils[i] = critic.utility(i, &t.global, a)?;
            Ok(shaped_value(&mix(&hyper, &utils), prices))
        })
        .collect()
}

/// `A = Q′(a) − Σ_{a′} π(a′) Q′(a′)` over the presented options.
pub fn counterfactual_advantage(values: &[f64], probs: &[f64], action: usize) -> f64 {
    let baseline: f64 = values.iter().zip(probs).map(|(q, p)| q * p).sum();
    values[action] - baseline
}

/// Counterfactual advantage of the transition's chosen action under `probs`.
pub fn coma_advantage(critic: &CriticBundle, prices: &Prices, t: &Transition, probs: &[f64]) -> Result<f64> {
    let v = option_values(critic, t, prices)?;
    Ok(counterfactual_advantage(&v, probs, t.action))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{masked_softmax, AgentKind, Decision, ACTION_DIM, GLOBAL_DIM};
    use crate::neural::NetConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_action_uniform_example() {
        let v = [1.0, 0.0];
        let p = [0.5, 0.5];
        assert_eq!(counterfactual_advantage(&v, &p, 0), 0.5);
        assert_eq!(counterfactual_advantage(&v, &p, 1), -0.5);
    }

    #[test]
    fn deterministic_policy_has_zero_advantage() {
        let v = [0.3, -2.0, 7.0];
        assert_eq!(counterfactual_advantage(&v, &[0.0, 1.0, 0.0], 1), 0.0);
    }

    fn random_transition(rng: &mut ChaCha8Rng, n: usize) -> Transition {
        let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.7)).collect();
        mask.push(true);
        let agent = AgentKind::ALL[rng.gen_range(0..3)];
        Transition {
            episode: 0,
            decision: Decision {
                agent,
                obs: Vec::new(),
                cand_feats: Vec::new(),
                logit_offsets: vec![0.0; n],
                mask,
                action_feats: (0..=n).map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0))).collect::<Vec<[f64; ACTION_DIM]>>(),
                provenance: vec![Vec::new(); n],
            },
            action: n,
            log_prob: 0.0,
            global: (0..GLOBAL_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            r_acc: 0.0,
            cost: [0.0; 3],
            terminal: false,
        }
    }

    #[test]
    fn three_action_case_matches_explicit_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = NetConfig { head_gain: 1.0, ..NetConfig::default() };
        let critic = CriticBundle::new(&cfg, &mut rng);
        let mut t = random_transition(&mut rng, 2);
        t.decision.mask = vec![true; 3];
        let prices = Prices::new(0.1, 0.2, 0.01).unwrap();
        let probs = [0.2, 0.5, 0.3];
        // Brute force: full critic forward per joint action.
        let i = t.decision.agent.index();
        let q = |a: usize| {
            let mut acts = [noop_action_features(); N_AGENTS];
            acts[i] = t.decision.action_feats[a];
            let o = critic.forward(&t.global, &acts).unwrap();
            o.q[0] - 0.1 * 8.0 * o.q[1] - 0.2 * 16.0 * o.q[2] - 0.01 * 64.0 * o.q[3]
        };
        for a in 0..3 {
            t.action = a;
            let want = q(a) - (0.2 * q(0) + 0.5 * q(1) + 0.3 * q(2));
            let got = coma_advantage(&critic, &prices, &t, &probs).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn policy_weighted_advantage_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let critic = CriticBundle::new(&NetConfig { head_gain: 1.0, ..NetConfig::default() }, &mut rng);
        for _ in 0..200 {
            let n = rng.gen_range(0..8);
            let t = random_transition(&mut rng, n);
            let logits: Vec<f64> = (0..=n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (probs, _) = masked_softmax(&logits, &t.decision.mask).unwrap();
            let prices = Prices::new(rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(0.0..0.1)).unwrap();
            let v = option_values(&critic, &t, &prices).unwrap();
            let s: f64 = (0..=n).map(|a| probs[a] * counterfactual_advantage(&v, &probs, a)).sum();
            assert!(s.abs() < 1e-9);
        }
    }
}
