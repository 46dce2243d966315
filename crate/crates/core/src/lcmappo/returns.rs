use super::rollout::Buffer;
use crate::episode::Prices;
use crate::neural::HEADS;

/// `r′_t = r_acc − Σ_k λ_k c_k` for one transition.
pub fn shaped_reward(r_acc: f64, cost: &[f64; 3], prices: &Prices) -> f64 {
    let l = prices.as_array();
    r_acc - (0..3).map(|k| l[k] * cost[k]).sum::<f64>()
}

/// `G′_t = Σ_{t′≥t} γ^{t′−t} r′_{t′}` within each episode.
pub fn shaped_returns(buf: &Buffer, prices: &Prices, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; buf.transitions.len()];
    for (s, e) in buf.episode_ranges() {
        let mut g = 0.0;
        for t in (s..e).rev() {
            let tr = &buf.transitions[t];
            g = shaped_reward(tr.r_acc, &tr.cost, prices) + gamma * g;
            out[t] = g;
        }
    }
    out
}

/// Per-head Monte Carlo targets: reward-to-go of `r_acc` (discounted by
/// `gamma`) and undiscounted cost-to-go of each resource.
pub fn head_returns(buf: &Buffer, gamma: f64) -> Vec<[f64; HEADS]> {
    let mut out = vec![[0.0; HEADS]; buf.transitions.len()];
    for (s, e) in buf.episode_ranges() {
        let mut g = [0.0; HEADS];
        for t in (s..e).rev() {
            let tr = &buf.transitions[t];
            g[0] = tr.r_acc + gamma * g[0];
            for k in 0..3 {
                g[k + 1] += tr.cost[k];
            }
            out[t] = g;
        }
    }
    out
}
