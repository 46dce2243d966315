use std::fs;
use std::path::Path;

use log::info;
use serde::Serialize;

use super::config::{Command, ModeKind, RunConfig};
use super::data::{load_dataset, write_dataset};
use super::render::show_trace;
use super::sweep::{run_sweep, write_frontier_csv};
use crate::episode::{Budgets, EpisodeTrace, Mode, Prices};
use crate::error::{Error, Result};
use crate::harness::{evaluate, Dataset, EpisodeOutcome, EvalReport, QAExample, Reference, RunOptions};
use crate::lcmappo::{load_checkpoint, save_checkpoint, train, write_metrics_csv, TrainEnv, Variant};
use crate::neural::{ActorSet, Model};

/// Budgets standing in for "unconstrained" in the reference run.
pub const GENEROUS: f64 = 1.0e6;

/// What `eval` and `train` write to `eval.json`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalRecord {
    pub report: EvalReport,
    pub reference: Reference,
    pub normalized_edge: f64,
    pub normalized_lat: f64,
    pub checksum: String,
}

/// Runs the configured command and returns the text to print.
pub fn run(cfg: &RunConfig) -> Result<String> {
    let command = cfg.command.ok_or_else(|| Error::Config("no command given".into()))?;
    if command != Command::Trace {
        fs::create_dir_all(&cfg.out_dir)?;
        fs::write(cfg.out_dir.join("config.json"), cfg.to_json()? + "\n")?;
    }
    match command {
        Command::GenData => gen_data(cfg),
        Command::Train => train_command(cfg),
        Command::Eval => eval_command(cfg),
        Command::Sweep => sweep_command(cfg),
        Command::Trace => trace_command(cfg),
    }
}

pub(crate) fn eval_examples<'a>(cfg: &RunConfig, ds: &'a Dataset) -> &'a [QAExample] {
    let n = cfg.eval_episodes.unwrap_or(ds.eval.len()).min(ds.eval.len());
    &ds.eval[..n]
}

fn gen_data(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let dir = cfg.out_dir.join("data");
    write_dataset(&dir, &ds)?;
    Ok(format!(
        "wrote {} triples, {} train and {} eval examples to {}",
        ds.graph.triple_count(),
        ds.train.len(),
        ds.eval.len(),
        dir.display()
    ))
}

/// Evaluation mode plus the prices shown under caps.
fn eval_setup(cfg: &RunConfig, learned: Prices) -> (Mode, Option<Prices>) {
    match cfg.mode {
        ModeKind::Cap => (Mode::Cap(cfg.budgets.expect("validated")), Some(learned)),
        ModeKind::Price => (Mode::Price(learned), None),
    }
}

fn write_traces(dir: &Path, outcomes: &[EpisodeOutcome], n: usize) -> Result<()> {
    let tdir = dir.join("traces");
    fs::create_dir_all(&tdir)?;
    for (i, o) in outcomes.iter().take(n).enumerate() {
        fs::write(tdir.join(format!("{i:04}.json")), o.trace.to_json()? + "\n")?;
    }
    Ok(())
}

/// Evaluates, runs the generous-budget reference, writes `eval.json` and
/// the first traces.
fn evaluate_and_record(cfg: &RunConfig, ds: &Dataset, model: &Model, learned: Prices) -> Result<EvalRecord> {
    let (mode, cap_prices) = eval_setup(cfg, learned);
    let examples = eval_examples(cfg, ds);
    let opts = RunOptions { greedy: cfg.greedy, cap_prices, ..RunOptions::default() };
    let (report, outcomes) =
        evaluate(&ds.graph, examples, &model.actors, mode, &cfg.episode, cfg.seed, opts, cfg.budgets.as_ref())?;
    let generous = Budgets::new(GENEROUS, GENEROUS, GENEROUS)?;
    let ref_opts = RunOptions { greedy: cfg.greedy, cap_prices: Some(learned), ..RunOptions::default() };
    let (ref_report, _) = evaluate(&ds.graph, examples, &model.actors, Mode::Cap(generous), &cfg.episode, cfg.seed, ref_opts, None)?;
    let reference = ref_report.reference();
    let record = EvalRecord {
        report,
        reference,
        normalized_edge: report.normalized_edge(&reference),
        normalized_lat: report.normalized_lat(&reference),
        checksum: model.checksum(),
    };
    fs::write(cfg.out_dir.join("eval.json"), serde_json::to_string_pretty(&record)? + "\n")?;
    write_traces(&cfg.out_dir, &outcomes, cfg.traces)?;
    Ok(record)
}

fn summary(r: &EvalRecord) -> String {
    let c = r.report.mean_cost;
    format!(
        "em {:.3} over {} episodes; mean cost edge {:.2} lat {:.2} tok {:.2}; feasibility {:.3}",
        r.report.em, r.report.episodes, c[0], c[1], c[2], r.report.feasibility
    )
}

fn train_command(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let budgets = cfg
        .budgets
        .ok_or_else(|| Error::Config("training needs budgets (caps or dual targets)".into()))?;
    let mut tcfg = cfg.train.clone();
    tcfg.seed = cfg.seed;
    if let (ModeKind::Price, Some(p)) = (cfg.mode, cfg.prices) {
        match tcfg.variant {
            Variant::FixedLambda => tcfg.fixed_lambda = p.as_array(),
            Variant::Lcmappo | Variant::Rcpo => tcfg.initial_lambda = p.as_array(),
            Variant::Mappo => {}
        }
    }
    let env = TrainEnv { budgets, enforcement: cfg.enforcement(), episode: cfg.episode.clone() };
    let model = Model::new(cfg.net.clone(), cfg.seed)?;
    let out = train(&ds.graph, &ds.train, model, &env, &tcfg, |m| {
        info!("iter {} em {:.3}", m.iter, m.em);
    })?;
    write_metrics_csv(fs::File::create(cfg.out_dir.join("metrics.csv"))?, &out.metrics)?;
    save_checkpoint(&cfg.out_dir.join("checkpoint.bin"), &out.model, &out.duals, &out.prices)?;
    let record = evaluate_and_record(cfg, &ds, &out.model, out.prices)?;
    Ok(format!("trained on {} transitions; {}", out.transitions, summary(&record)))
}

fn load_model(cfg: &RunConfig) -> Result<(Model, Prices)> {
    let path = cfg.checkpoint_path();
    if !path.exists() {
        return Err(Error::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    load_checkpoint(&path)
}

fn eval_command(cfg: &RunConfig) -> Result<String> {
    let ds = load_dataset(&cfg.dataset)?;
    let (model, stored) = load_model(cfg)?;
    let learned = match cfg.mode {
        ModeKind::Cap => stored,
        ModeKind::Price => cfg.prices.expect("validated"),
    };
    let record = evaluate_and_record(cfg, &ds, &model, learned)?;
    Ok(summary(&record))
}

fn sweep_command(cfg: &RunConfig) -> Result<String> {
    cfg.sweep.validate()?;
    let ds = load_dataset(&cfg.dataset)?;
    let (model, stored) = load_model(cfg)?;
    let rows = run_sweep(cfg, &ds, &model, stored)?;
    write_frontier_csv(fs::File::create(cfg.out_dir.join("frontier.csv"))?, &rows)?;
    Ok(format!("{} sweep points written to {}", rows.len(), cfg.out_dir.join("frontier.csv").display()))
}

fn trace_command(cfg: &RunConfig) -> Result<String> {
    let path = cfg.trace_file.as_ref().ok_or_else(|| Error::Config("trace needs --trace-file".into()))?;
    let trace = EpisodeTrace::from_json(&fs::read_to_string(path)?)?;
    let ds = load_dataset(&cfg.dataset)?;
    show_trace(&ds.graph, &trace)
}

/// Evaluates the actors on `examples` without writing anything.
pub fn quick_eval(
    cfg: &RunConfig,
    ds: &Dataset,
    actors: &ActorSet,
    mode: Mode,
    cap_prices: Option<Prices>,
    seed: u64,
) -> Result<EvalReport> {
    let opts = RunOptions { greedy: cfg.greedy, cap_prices, ..RunOptions::default() };
    let (report, _) = evaluate(&ds.graph, eval_examples(cfg, ds), actors, mode, &cfg.episode, seed, opts, cfg.budgets.as_ref())?;
    Ok(report)
}
