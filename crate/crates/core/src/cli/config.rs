use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::episode::{Budgets, EpisodeConfig, Mode, Prices};
use crate::error::{Error, Result};
use crate::harness::SyntheticTaskConfig;
use crate::lcmappo::{Enforcement, TrainConfig, Variant};
use crate::neural::NetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    GenData,
    Train,
    Eval,
    Sweep,
    Trace,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Sweep => "sweep",
            Command::Trace => "trace",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModeKind {
    #[default]
    Cap,
    Price,
}

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic(SyntheticTaskConfig),
    /// A directory written by `gen-data`.
    Dir { path: PathBuf },
    /// A `subject|relation|object` KB with tab-separated question files.
    Metaqa { kb: PathBuf, train: PathBuf, eval: PathBuf, hop: usize },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Synthetic(SyntheticTaskConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum SweepAxis {
    BetaEdge,
    BetaLat,
    BetaTok,
    LambdaEdge,
    LambdaLat,
    LambdaTok,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::BetaEdge => "beta_edge",
            SweepAxis::BetaLat => "beta_lat",
            SweepAxis::BetaTok => "beta_tok",
            SweepAxis::LambdaEdge => "lambda_edge",
            SweepAxis::LambdaLat => "lambda_lat",
            SweepAxis::LambdaTok => "lambda_tok",
        }
    }

    /// Resource index the axis acts on.
    pub fn resource(self) -> usize {
        match self {
            SweepAxis::BetaEdge | SweepAxis::LambdaEdge => 0,
            SweepAxis::BetaLat | SweepAxis::LambdaLat => 1,
            SweepAxis::BetaTok | SweepAxis::LambdaTok => 2,
        }
    }

    pub fn is_budget(self) -> bool {
        matches!(self, SweepAxis::BetaEdge | SweepAxis::BetaLat | SweepAxis::BetaTok)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec { axis: SweepAxis::BetaTok, values: vec![16.0, 32.0, 64.0, 128.0], seeds: 1 }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(Error::Config("a sweep needs at least two values".into()));
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("sweep values must be finite and nonnegative".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("a sweep needs at least one seed per point".into()));
        }
        Ok(())
    }
}

/// Everything one command needs. Serialized as `config.json` next to the
/// outputs so a run can be repeated from its record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub dataset: DatasetSpec,
    pub mode: ModeKind,
    /// Caps in cap mode; dual targets and feasibility thresholds in price mode.
    pub budgets: Option<Budgets>,
    /// Fixed prices; price mode only.
    pub prices: Option<Prices>,
    pub train: TrainConfig,
    pub net: NetConfig,
    pub episode: EpisodeConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Defaults to `<out_dir>/checkpoint.bin`.
    pub checkpoint: Option<PathBuf>,
    /// Evaluation examples to run; all when absent.
    pub eval_episodes: Option<usize>,
    /// Greedy (argmax) actions at evaluation.
    pub greedy: bool,
    /// Traces written by `train` and `eval`.
    pub traces: usize,
    pub sweep: SweepSpec,
    /// Input of the `trace` command.
    pub trace_file: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            command: None,
            dataset: DatasetSpec::default(),
            mode: ModeKind::Cap,
            budgets: Some(Budgets { beta_edge: 16.0, beta_lat: 16.0, beta_tok: 128.0 }),
            prices: None,
            train: TrainConfig::default(),
            net: NetConfig::default(),
            episode: EpisodeConfig::default(),
            out_dir: PathBuf::from("runs/default"),
            seed: 0,
            checkpoint: None,
            eval_episodes: None,
            greedy: true,
            traces: 5,
            sweep: SweepSpec::default(),
            trace_file: None,
        }
    }
}

/// Flag values that override the file. `None` leaves the file value.
#[derive(Clone, Debug, Default, PartialEq, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeKind>,
    #[arg(long)]
    pub beta_edge: Option<f64>,
    #[arg(long)]
    pub beta_lat: Option<f64>,
    #[arg(long)]
    pub beta_tok: Option<f64>,
    #[arg(long)]
    pub lambda_edge: Option<f64>,
    #[arg(long)]
    pub lambda_lat: Option<f64>,
    #[arg(long)]
    pub lambda_tok: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub max_transitions: Option<u64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub eval_episodes: Option<usize>,
    #[arg(long)]
    pub traces: Option<usize>,
    #[arg(long)]
    pub sample: bool,
    #[arg(long, value_enum)]
    pub sweep_axis: Option<SweepAxis>,
    /// Comma-separated sweep values.
    #[arg(long, value_delimiter = ',')]
    pub sweep_values: Option<Vec<f64>>,
    #[arg(long)]
    pub sweep_seeds: Option<usize>,
    #[arg(long)]
    pub trace_file: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    Lcmappo,
    Mappo,
    FixedLambda,
    Rcpo,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Lcmappo => Variant::Lcmappo,
            VariantArg::Mappo => Variant::Mappo,
            VariantArg::FixedLambda => Variant::FixedLambda,
            VariantArg::Rcpo => Variant::Rcpo,
        }
    }
}

fn mismatch(detail: &str) -> Error {
    Error::Config(format!("mode/field mismatch: {detail}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies flag overrides on top of the file values.
    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        let betas = [o.beta_edge, o.beta_lat, o.beta_tok];
        if betas.iter().any(Option::is_some) {
            let mut b = self.budgets.ok_or_else(|| mismatch("budget flags given but the config has no budgets"))?;
            if let Some(v) = o.beta_edge {
                b.beta_edge = v;
            }
            if let Some(v) = o.beta_lat {
                b.beta_lat = v;
            }
            if let Some(v) = o.beta_tok {
                b.beta_tok = v;
            }
            self.budgets = Some(b);
        }
        let lambdas = [o.lambda_edge, o.lambda_lat, o.lambda_tok];
        if lambdas.iter().any(Option::is_some) {
            let mut p = self.prices.unwrap_or_default();
            if let Some(v) = o.lambda_edge {
                p.lambda_edge = v;
            }
            if let Some(v) = o.lambda_lat {
                p.lambda_lat = v;
            }
            if let Some(v) = o.lambda_tok {
                p.lambda_tok = v;
            }
            self.prices = Some(p);
        }
        if let Some(v) = o.iterations {
            self.train.iterations = v;
        }
        if let Some(v) = o.max_transitions {
            self.train.max_transitions = Some(v);
        }
        if let Some(v) = o.variant {
            self.train.variant = v.into();
        }
        if let Some(v) = &o.checkpoint {
            self.checkpoint = Some(v.clone());
        }
        if let Some(v) = o.eval_episodes {
            self.eval_episodes = Some(v);
        }
        if let Some(v) = o.traces {
            self.traces = v;
        }
        if o.sample {
            self.greedy = false;
        }
        if let Some(v) = o.sweep_axis {
            self.sweep.axis = v;
        }
        if let Some(v) = &o.sweep_values {
            self.sweep.values = v.clone();
        }
        if let Some(v) = o.sweep_seeds {
            self.sweep.seeds = v;
        }
        if let Some(v) = &o.trace_file {
            self.trace_file = Some(v.clone());
        }
        Ok(())
    }

    /// Mode consistency plus the nested configs' own checks.
    pub fn validate(&self) -> Result<()> {
        match self.mode {
            ModeKind::Cap => {
                if self.prices.is_some() {
                    return Err(mismatch("cap mode takes budgets, not prices"));
                }
                if self.budgets.is_none() {
                    return Err(mismatch("cap mode requires budgets"));
                }
            }
            ModeKind::Price => {
                if self.prices.is_none() {
                    return Err(mismatch("price mode requires prices"));
                }
            }
        }
        if let Some(b) = &self.budgets {
            b.validate()?;
        }
        if let Some(p) = &self.prices {
            p.validate()?;
        }
        self.train.validate()?;
        self.net.validate()?;
        self.episode.validate()?;
        if let DatasetSpec::Synthetic(s) = &self.dataset {
            s.validate()?;
        }
        Ok(())
    }

    /// Episode mode for evaluation.
    pub fn mode(&self) -> Mode {
        match self.mode {
            ModeKind::Cap => Mode::Cap(self.budgets.expect("validated")),
            ModeKind::Price => Mode::Price(self.prices.expect("validated")),
        }
    }

    pub fn enforcement(&self) -> Enforcement {
        match self.mode {
            ModeKind::Cap => Enforcement::Cap,
            ModeKind::Price => Enforcement::Price,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.bin"))
    }
}

/// Reads the optional file, applies flags, sets the command and validates.
pub fn parse_config(file: Option<&Path>, command: Command, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = match file {
        Some(p) => RunConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => RunConfig::default(),
    };
    match cfg.command {
        Some(c) if c != command => {
            return Err(Error::Config(format!("config is for `{}`, invoked as `{}`", c.name(), command.name())));
        }
        _ => cfg.command = Some(command),
    }
    cfg.apply(overrides)?;
    cfg.validate()?;
    Ok(cfg)
}
