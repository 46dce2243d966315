use serde::{Deserialize, Serialize};

use crate::episode::{Budgets, Prices};
use crate::error::{Error, Result};

/// How multipliers respond to the constraint error `e = Ĉ − β`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualControl {
    /// `λ ← clamp(λ + η e, 0, λ_max)`.
    #[default]
    Plain,
    /// `λ = clamp(K_p e + K_i Σe + K_d Δe, 0, λ_max)`.
    Pid,
}

/// Step sizes and gains for the multipliers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualConfig {
    pub control: DualControl,
    /// Plain ascent step `η`.
    pub eta: f64,
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub lambda_max: f64,
}

impl Default for DualConfig {
    fn default() -> Self {
        DualConfig { control: DualControl::Plain, eta: 0.02, kp: 0.05, ki: 0.02, kd: 0.0, lambda_max: 10.0 }
    }
}

impl DualConfig {
    pub fn validate(&self) -> Result<()> {
        let gains = [self.eta, self.kp, self.ki, self.kd, self.lambda_max];
        if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(Error::Config("dual step sizes and gains must be finite and nonnegative".into()));
        }
        Ok(())
    }
}

/// One multiplier per resource, each kept in `[0, λ_max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualState {
    pub lambda: [f64; 3],
    pub config: DualConfig,
    integral: [f64; 3],
    prev_error: Option<[f64; 3]>,
}

impl DualState {
    pub fn new(config: DualConfig, initial: [f64; 3]) -> Self {
        let mut lambda = initial;
        for l in &mut lambda {
            *l = l.clamp(0.0, config.lambda_max);
        }
        DualState { lambda, config, integral: [0.0; 3], prev_error: None }
    }

    pub fn prices(&self) -> Prices {
        Prices::from_array(self.lambda)
    }

    /// Updates multiplier `k` from the batch mean cost `c` against target `beta`.
    pub fn update_one(&mut self, k: usize, c: f64, beta: f64) {
        let e = c - beta;
        let cfg = self.config;
        let raw = match cfg.control {
            DualControl::Plain => self.lambda[k] + cfg.eta * e,
            DualControl::Pid => {
                self.integral[k] += e;
                let de = self.prev_error.map_or(0.0, |p| e - p[k]);
                cfg.kp * e + cfg.ki * self.integral[k] + cfg.kd * de
            }
        };
        let mut prev = self.prev_error.unwrap_or([0.0; 3]);
        prev[k] = e;
        self.prev_error = Some(prev);
        self.lambda[k] = if raw.is_nan() { 0.0 } else { raw.clamp(0.0, cfg.lambda_max) };
    }

    /// Per-resource update from batch mean costs `[edge, lat, tok]`.
    pub fn update(&mut self, mean_costs: [f64; 3], budgets: &Budgets) {
        let b = budgets.as_array();
        for k in 0..3 {
            self.update_one(k, mean_costs[k], b[k]);
        }
    }

    /// `λ`, the PID integral and the previous error (NaN when absent).
    pub fn to_section(&self) -> Vec<f64> {
        let mut v = self.lambda.to_vec();
        v.extend_from_slice(&self.integral);
        v.extend_from_slice(&self.prev_error.unwrap_or([f64::NAN; 3]));
        v
    }

    pub fn from_section(config: DualConfig, v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::Checkpoint(format!("dual section holds {} values, expected 9", v.len())));
        }
        let arr = |i: usize| [v[i], v[i + 1], v[i + 2]];
        let lambda = arr(0);
        if lambda.iter().any(|l| !(0.0..=config.lambda_max).contains(l)) {
            return Err(Error::Checkpoint("stored multipliers out of range".into()));
        }
        let prev = arr(6);
        Ok(DualState {
            lambda,
            config,
            integral: arr(3),
            prev_error: if prev.iter().all(|p| p.is_nan()) { None } else { Some(prev) },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain(eta: f64) -> DualConfig {
        DualConfig { control: DualControl::Plain, eta, ..DualConfig::default() }
    }

    #[test]
    fn plain_step_arithmetic() {
        let mut d = DualState::new(plain(0.1), [0.2, 0.0, 0.0]);
        d.update_one(0, 0.4, 0.5);
        assert!((d.lambda[0] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn projection_keeps_zero() {
        let mut d = DualState::new(plain(0.1), [0.0; 3]);
        d.update([1.0, 2.0, 3.0], &Budgets::new(5.0, 5.0, 5.0).unwrap());
        assert_eq!(d.lambda, [0.0; 3]);
    }

    #[test]
    fn clamped_at_lambda_max() {
        let mut d = DualState::new(plain(1.0), [9.5, 0.0, 0.0]);
        d.update_one(0, 100.0, 0.0);
        assert_eq!(d.lambda[0], 10.0);
    }

    #[test]
    fn pid_matches_scalar_recurrence() {
        let cfg = DualConfig { control: DualControl::Pid, kp: 0.3, ki: 0.1, kd: 0.05, ..DualConfig::default() };
        let mut d = DualState::new(cfg, [0.0; 3]);
        let beta = 2.0;
        let stream = [3.0, 3.5, 2.5, 3.0, 1.0, 4.0, 3.0, 3.0];
        // Independent recurrence.
        let (mut sum, mut prev) = (0.0, None::<f64>);
        for &c in &stream {
            d.update_one(1, c, beta);
            let e = c - beta;
            sum += e;
            let de = prev.map_or(0.0, |p| e - p);
            prev = Some(e);
            let want = (0.3 * e + 0.1 * sum + 0.05 * de).clamp(0.0, 10.0);
            assert!((d.lambda[1] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn section_round_trip() {
        let cfg = DualConfig { control: DualControl::Pid, ..DualConfig::default() };
        let mut d = DualState::new(cfg, [0.1, 0.2, 0.3]);
        assert_eq!(DualState::from_section(cfg, &d.to_section()).unwrap(), d);
        d.update([5.0, 1.0, 2.0], &Budgets::new(1.0, 1.0, 1.0).unwrap());
        assert_eq!(DualState::from_section(cfg, &d.to_section()).unwrap(), d);
    }

    proptest! {
        #[test]
        fn multipliers_stay_in_range(
            pid in any::<bool>(),
            costs in prop::collection::vec(0.0f64..100.0, 1..40),
            beta in 0.0f64..50.0,
        ) {
            let control = if pid { DualControl::Pid } else { DualControl::Plain };
            let mut d = DualState::new(DualConfig { control, ..DualConfig::default() }, [0.0; 3]);
            for c in costs {
                d.update([c, c / 2.0, c * 3.0], &Budgets::new(beta, beta, beta).unwrap());
                prop_assert!(d.lambda.iter().all(|l| (0.0..=10.0).contains(l)));
            }
        }
    }
}
