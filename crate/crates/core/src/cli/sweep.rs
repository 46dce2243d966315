use std::io::Write;

use serde::Serialize;

use super::commands::quick_eval;
use super::config::RunConfig;
use crate::episode::{Budgets, Mode, Prices};
use crate::error::{Error, Result};
use crate::harness::{derive_seed, Dataset};
use crate::neural::Model;

/// One point of a budget or price sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrontierRow {
    pub axis: String,
    pub value: f64,
    pub seeds: usize,
    pub em_mean: f64,
    pub em_std: f64,
    pub c_edge: f64,
    pub c_lat: f64,
    pub c_tok: f64,
    pub feasibility: f64,
    /// `Δem / Δvalue` against the previous row; empty on the first row and
    /// when the value repeats.
    pub slope: Option<f64>,
    /// Learned multiplier of the swept resource stored with the checkpoint.
    pub lambda_mean: f64,
    pub checksum: String,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Evaluates one checkpoint at every sweep value. Beta axes run in cap mode
/// with the stored prices; lambda axes run in price mode. The parameter
/// checksum is recomputed after every point and must never change.
pub fn run_sweep(cfg: &RunConfig, ds: &Dataset, model: &Model, stored: Prices) -> Result<Vec<FrontierRow>> {
    cfg.sweep.validate()?;
    let spec = &cfg.sweep;
    let k = spec.axis.resource();
    let checksum = model.checksum();
    let base_budgets = cfg.budgets.unwrap_or(Budgets { beta_edge: 1e6, beta_lat: 1e6, beta_tok: 1e6 });
    let base_prices = cfg.prices.unwrap_or(stored);
    let mut rows: Vec<FrontierRow> = Vec::with_capacity(spec.values.len());
    for &value in &spec.values {
        let (mode, cap_prices) = if spec.axis.is_budget() {
            let mut b = base_budgets.as_array();
            b[k] = value;
            (Mode::Cap(Budgets::from_array(b)), Some(stored))
        } else {
            let mut p = base_prices.as_array();
            p[k] = value;
            (Mode::Price(Prices::from_array(p)), None)
        };
        let mut point_cfg = cfg.clone();
        if let Mode::Cap(b) = mode {
            point_cfg.budgets = Some(b);
        }
        let mut ems = Vec::with_capacity(spec.seeds);
        let mut cost = [0.0; 3];
        let mut feasibility = 0.0;
        for s in 0..spec.seeds {
            let r = quick_eval(&point_cfg, ds, &model.actors, mode, cap_prices, derive_seed(cfg.seed, s as u64))?;
            ems.push(r.em);
            for i in 0..3 {
                cost[i] += r.mean_cost[i] / spec.seeds as f64;
            }
            feasibility += r.feasibility / spec.seeds as f64;
        }
        if model.checksum() != checksum {
            return Err(Error::Checkpoint("parameters changed during the sweep".into()));
        }
        let (em_mean, em_std) = mean_std(&ems);
        let slope = rows
            .last()
            .filter(|p| p.value != value)
            .map(|p| (em_mean - p.em_mean) / (value - p.value));
        rows.push(FrontierRow {
            axis: spec.axis.name().to_string(),
            value,
            seeds: spec.seeds,
            em_mean,
            em_std,
            c_edge: cost[0],
            c_lat: cost[1],
            c_tok: cost[2],
            feasibility,
            slope,
            lambda_mean: stored.as_array()[k],
            checksum: checksum.clone(),
        });
    }
    Ok(rows)
}

pub fn write_frontier_csv<W: Write>(w: W, rows: &[FrontierRow]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::SweepSpec;
    use crate::harness::{generate_tasks, SyntheticTaskConfig};
    use crate::neural::NetConfig;

    fn setup() -> (RunConfig, Dataset, Model) {
        let ds = generate_tasks(&SyntheticTaskConfig { entities: 60, train: 10, eval: 12, ..SyntheticTaskConfig::default() }).unwrap();
        (RunConfig::default(), ds, Model::new(NetConfig::default(), 1).unwrap())
    }

    #[test]
    fn repeated_values_give_identical_rows() {
        let (mut cfg, ds, model) = setup();
        cfg.sweep = SweepSpec { values: vec![32.0, 32.0], seeds: 2, ..SweepSpec::default() };
        let rows = run_sweep(&cfg, &ds, &model, Prices::default()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].slope, None);
        let strip = |r: &FrontierRow| FrontierRow { slope: None, ..r.clone() };
        assert_eq!(strip(&rows[0]), strip(&rows[1]));
    }

    #[test]
    fn slope_is_finite_difference_and_checksum_constant() {
        let (mut cfg, ds, model) = setup();
        cfg.sweep = SweepSpec { values: vec![0.0, 16.0, 64.0], seeds: 1, ..SweepSpec::default() };
        let rows = run_sweep(&cfg, &ds, &model, Prices::default()).unwrap();
        assert_eq!(rows[0].em_mean, 0.0);
        assert_eq!(rows[0].c_tok, 0.0);
        let want = (rows[2].em_mean - rows[1].em_mean) / 48.0;
        assert!((rows[2].slope.unwrap() - want).abs() < 1e-15);
        assert!(rows.iter().all(|r| r.checksum == model.checksum()));
        let mut out = Vec::new();
        write_frontier_csv(&mut out, &rows).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("axis,value,seeds,em_mean,em_std,c_edge,c_lat,c_tok,feasibility,slope,lambda_mean,checksum"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn huge_token_price_empties_the_context() {
        let (mut cfg, ds, model) = setup();
        cfg.sweep = SweepSpec { axis: crate::cli::config::SweepAxis::LambdaTok, values: vec![0.0, 10.0], seeds: 1 };
        let rows = run_sweep(&cfg, &ds, &model, Prices::default()).unwrap();
        assert!(rows[1].c_tok <= rows[0].c_tok);
    }
}
