use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;

use super::rollout::Transition;
use crate::agents::{noop_action_features, AgentKind};
use crate::error::{Error, Result};
use crate::neural::{clip_grad_norm, entropy_and_grad, Adam, ActorNet, CriticBundle, Model, HEADS, N_AGENTS};

/// Knobs of one update phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
}

/// Adam state for the three actors and the critic.
#[derive(Clone, Debug)]
pub struct Optimizers {
    pub actors: [Adam; 3],
    pub critic: Adam,
}

impl Optimizers {
    pub fn new(model: &Model, actor_lr: f64, critic_lr: f64) -> Self {
        Optimizers {
            actors: AgentKind::ALL.map(|a| Adam::new(model.actors.get(a).param_count(), actor_lr)),
            critic: Adam::new(model.critic.param_count(), critic_lr),
        }
    }
}

/// Mean losses over the last epoch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub loss_pi: f64,
    pub loss_v: f64,
    pub entropy: f64,
}

/// Per-transition clipped surrogate `−min(ρA, clip(ρ, 1±ε)A) − c·H`, with
/// its gradient (scaled by `scale`) accumulated into `grad`. Returns
/// `(surrogate loss, entropy)` unscaled.
pub fn actor_loss_grad(
    net: &ActorNet,
    t: &Transition,
    advantage: f64,
    clip: f64,
    entropy_coef: f64,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    let out = net.forward(&t.decision)?;
    let a = t.action;
    let ratio = (out.log_probs[a] - t.log_prob).exp();
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    let unclipped_term = ratio * advantage;
    let clipped_term = clipped * advantage;
    let loss = -unclipped_term.min(clipped_term);
    // The clipped branch has zero gradient whenever it is the minimum.
    let live = unclipped_term <= clipped_term;
    let (h, dh) = entropy_and_grad(&out.probs, &out.log_probs, &t.decision.mask);
    let mut dlogits = vec![0.0; out.logits.len()];
    for j in 0..dlogits.len() {
        if !t.decision.mask[j] {
            continue;
        }
        let dlogp = (j == a) as u8 as f64 - out.probs[j];
        let pg = if live { -advantage * ratio * dlogp } else { 0.0 };
        dlogits[j] = scale * (pg - entropy_coef * dh[j]);
    }
    net.backward(&t.decision, &out, &dlogits, grad);
    Ok((loss, h))
}

/// Squared error of the mixed heads against `targets` (network units),
/// averaged over heads; gradient scaled by `scale`.
pub fn critic_loss_grad(critic: &CriticBundle, t: &Transition, targets: &[f64; HEADS], scale: f64, grad: &mut [f64]) -> Result<f64> {
    let mut acts = [noop_action_features(); N_AGENTS];
    acts[t.decision.agent.index()] = t.decision.action_feats[t.action];
    let out = critic.forward(&t.global, &acts)?;
    let mut dq = [0.0; HEADS];
    let mut loss = 0.0;
    for k in 0..HEADS {
        let e = out.q[k] - targets[k];
        loss += e * e / HEADS as f64;
        dq[k] = scale * 2.0 * e / HEADS as f64;
    }
    critic.backward(&out, &dq, grad);
    Ok(loss)
}

struct Accum {
    actor: [Vec<f64>; 3],
    critic: Vec<f64>,
    loss_pi: f64,
    loss_v: f64,
    entropy: f64,
    err: Option<Error>,
}

impl Accum {
    fn zeros(model: &Model) -> Self {
        Accum {
            actor: AgentKind::ALL.map(|a| vec![0.0; model.actors.get(a).param_count()]),
            critic: vec![0.0; model.critic.param_count()],
            loss_pi: 0.0,
            loss_v: 0.0,
            entropy: 0.0,
            err: None,
        }
    }

    fn merge(mut self, o: Accum) -> Self {
        for (a, b) in self.actor.iter_mut().zip(&o.actor) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.critic.iter_mut().zip(&o.critic).for_each(|(x, y)| *x += y);
        self.loss_pi += o.loss_pi;
        self.loss_v += o.loss_v;
        self.entropy += o.entropy;
        self.err = self.err.or(o.err);
        self
    }
}

/// Clipped PPO on the actors and mixed-value regression on the critic over
/// shuffled minibatches. `advantages` are already normalised; `targets` are
/// per-head returns in network units.
pub fn ppo_update(
    model: &mut Model,
    opt: &mut Optimizers,
    transitions: &[Transition],
    advantages: &[f64],
    targets: &[[f64; HEADS]],
    cfg: &UpdateConfig,
    rng: &mut dyn RngCore,
) -> Result<UpdateStats> {
    let n = transitions.len();
    if n == 0 {
        return Ok(UpdateStats::default());
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut lp, mut lv, mut ent) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.minibatch.max(1)) {
            let scale = 1.0 / batch.len() as f64;
            let m: &Model = model;
            let acc = batch
                .par_iter()
                .fold(
                    || Accum::zeros(m),
                    |mut acc, &i| {
                        let t = &transitions[i];
                        let k = t.decision.agent.index();
                        let res = actor_loss_grad(
                            &m.actors.nets[k],
                            t,
                            advantages[i],
                            cfg.clip,
                            cfg.entropy_coef,
                            scale,
                            &mut acc.actor[k],
                        )
                        .and_then(|(l, h)| {
                            let v = critic_loss_grad(&m.critic, t, &targets[i], scale, &mut acc.critic)?;
                            Ok((l, h, v))
                        });
                        match res {
                            Ok((l, h, v)) => {
                                acc.loss_pi += l;
                                acc.entropy += h;
                                acc.loss_v += v;
                            }
                            Err(e) => acc.err = acc.err.take().or(Some(e)),
                        }
                        acc
                    },
                )
                .reduce(|| Accum::zeros(m), Accum::merge);
            if let Some(e) = acc.err {
                return Err(e);
            }
            if !(acc.loss_pi.is_finite() && acc.loss_v.is_finite()) {
                return Err(Error::NonFinite(format!("loss (policy {}, value {})", acc.loss_pi, acc.loss_v)));
            }
            lp += acc.loss_pi;
            lv += acc.loss_v;
            ent += acc.entropy;
            let Accum { mut actor, mut critic, .. } = acc;
            for k in 0..3 {
                clip_grad_norm(&mut actor[k], cfg.max_grad_norm);
                opt.actors[k].step(&mut model.actors.nets[k].params, &actor[k]);
            }
            clip_grad_norm(&mut critic, cfg.max_grad_norm);
            opt.critic.step(&mut model.critic.params, &critic);
        }
        stats = UpdateStats { loss_pi: lp / n as f64, loss_v: lv / n as f64, entropy: ent / n as f64 };
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{cand_dim, obs_dim, stop_action_features, Decision};
    use crate::neural::NetConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn transition(agent: AgentKind, n: usize, rng: &mut ChaCha8Rng) -> Transition {
        Transition {
            episode: 0,
            decision: Decision {
                agent,
                obs: (0..obs_dim(agent)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                cand_feats: (0..n * cand_dim(agent)).map(|_| rng.gen_range(0.0..1.0)).collect(),
                logit_offsets: vec![0.0; n],
                mask: vec![true; n + 1],
                action_feats: vec![stop_action_features(); n + 1],
                provenance: vec![Vec::new(); n],
            },
            action: 0,
            log_prob: 0.0,
            global: (0..crate::agents::GLOBAL_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            r_acc: 0.0,
            cost: [0.0; 3],
            terminal: true,
        }
    }

    fn with_current_log_prob(net: &ActorNet, mut t: Transition, shift: f64) -> Transition {
        let out = net.forward(&t.decision).unwrap();
        t.log_prob = out.log_probs[t.action] - shift;
        t
    }

    #[test]
    fn unit_ratio_surrogate_is_mean_advantage() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(NetConfig::default(), 1).unwrap();
        let net = model.actors.get(AgentKind::Curator);
        let advs = [0.7, -1.3];
        let mut total = 0.0;
        for &a in &advs {
            let t = with_current_log_prob(net, transition(AgentKind::Curator, 3, &mut rng), 0.0);
            let mut g = vec![0.0; net.param_count()];
            let (l, _) = actor_loss_grad(net, &t, a, 0.2, 0.0, 1.0, &mut g).unwrap();
            total += l;
        }
        assert!((-total / 2.0 - (0.7 - 1.3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn clipped_branch_has_no_policy_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::new(NetConfig::default(), 2).unwrap();
        let net = model.actors.get(AgentKind::Navigator);
        // ρ = 1 + 2ε with A > 0: the clipped term is the minimum.
        let t = with_current_log_prob(net, transition(AgentKind::Navigator, 4, &mut rng), (1.4f64).ln());
        let mut g = vec![0.0; net.param_count()];
        let (l, _) = actor_loss_grad(net, &t, 1.0, 0.2, 0.0, 1.0, &mut g).unwrap();
        assert!((l + 1.2).abs() < 1e-12);
        assert!(g.iter().all(|&x| x == 0.0));
        // Same ratio with A < 0 keeps the unclipped branch live.
        let (l, _) = actor_loss_grad(net, &t, -1.0, 0.2, 0.0, 1.0, &mut g).unwrap();
        assert!((l - 1.4).abs() < 1e-12);
        assert!(g.iter().any(|&x| x != 0.0));
    }

    #[test]
    fn two_transition_batch_matches_hand_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::new(NetConfig::default(), 3).unwrap();
        let net = model.actors.get(AgentKind::Architect);
        let cases = [(0.1f64, 2.0), (-0.3f64, -0.5)];
        let mut total = 0.0;
        let mut want = 0.0;
        for &(shift, adv) in &cases {
            let t = with_current_log_prob(net, transition(AgentKind::Architect, 2, &mut rng), shift);
            let out = net.forward(&t.decision).unwrap();
            let h: f64 = out.probs.iter().zip(&out.log_probs).map(|(p, l)| -p * l).sum();
            let rho = shift.exp();
            want += -(rho * adv).min(rho.clamp(0.8, 1.2) * adv) - 0.01 * h;
            let mut g = vec![0.0; net.param_count()];
            let (l, e) = actor_loss_grad(net, &t, adv, 0.2, 0.01, 0.5, &mut g).unwrap();
            assert!((e - h).abs() < 1e-12);
            total += l - 0.01 * e;
        }
        assert!((total - want).abs() < 1e-12);
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::new(NetConfig { head_gain: 1.0, ..NetConfig::default() }, 4).unwrap();
        let mut net = model.actors.get(AgentKind::Curator).clone();
        let t = with_current_log_prob(&net, transition(AgentKind::Curator, 3, &mut rng), 0.05);
        let (adv, clip, c) = (0.8, 0.2, 0.01);
        let loss = |net: &ActorNet| {
            let mut g = vec![0.0; net.param_count()];
            let (l, h) = actor_loss_grad(net, &t, adv, clip, c, 1.0, &mut g).unwrap();
            l - c * h
        };
        let mut g = vec![0.0; net.param_count()];
        actor_loss_grad(&net, &t, adv, clip, c, 1.0, &mut g).unwrap();
        for _ in 0..20 {
            let i = rng.gen_range(0..net.param_count());
            let p0 = net.params[i];
            net.params[i] = p0 + 1e-6;
            let up = loss(&net);
            net.params[i] = p0 - 1e-6;
            let dn = loss(&net);
            net.params[i] = p0;
            let fd = (up - dn) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn update_reduces_critic_error_on_fixed_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = Model::new(NetConfig::default(), 5).unwrap();
        let ts: Vec<Transition> = (0..32)
            .map(|i| {
                let t = transition(AgentKind::ALL[i % 3], 2, &mut rng);
                let net = model.actors.get(t.decision.agent);
                with_current_log_prob(net, t, 0.0)
            })
            .collect();
        let targets: Vec<[f64; HEADS]> = (0..32).map(|i| [(i % 2) as f64, 0.5, 0.25, 0.1]).collect();
        let adv = vec![0.0; 32];
        let mut opt = Optimizers::new(&model, 3e-4, 1e-2);
        let cfg = UpdateConfig { epochs: 1, minibatch: 32, clip: 0.2, entropy_coef: 0.0, max_grad_norm: 10.0 };
        let first = ppo_update(&mut model, &mut opt, &ts, &adv, &targets, &cfg, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..50 {
            last = ppo_update(&mut model, &mut opt, &ts, &adv, &targets, &cfg, &mut rng).unwrap();
        }
        assert!(last.loss_v < first.loss_v * 0.5, "{} -> {}", first.loss_v, last.loss_v);
    }
}
