//! Command-line adapters over `pcs_core` and `pcs_service`.

mod error;

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pcs_core::baselines::{elo_fit, rank_centrality, rao_kupper_fit, skill_fit, EloConfig, RcConfig, RkConfig, SkillConfig};
use pcs_core::dataio::{
    export_scores, load_comparisons, load_items, load_ratings, load_scores, ratings_to_pairs,
    write_comparisons, ConversionOptions,
};
use pcs_core::metrics::{evaluate, EvalReport};
use pcs_core::model::{score_items, Checkpoint};
use pcs_core::simulator::{run_budget_experiment, summarize, write_budget_csv, BudgetOptions, Method, SimConfig};
use pcs_core::trainer::{sweep_gamma, train, write_sweep_csv, TrainConfig};
use pcs_core::{make_dataset, split, Dataset, ScoreTable, SplitSpec};
use pcs_service::ServiceConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "pcs", version, about = "Tie-aware pairwise comparison ranking toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Expand per-respondent ratings into pairwise comparisons.
    Convert(ConvertArgs),
    /// Train a scorer on a 70-10-20 split and report test metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a score table on a comparison set.
    Eval(EvalArgs),
    /// Fit a classical paired-comparison model.
    Baseline(BaselineArgs),
    /// Run the accuracy-versus-budget experiment on synthetic worlds.
    Simulate(SimulateArgs),
    /// Train one model per margin and report test metrics for each.
    SweepGamma(SweepArgs),
    /// Export checkpoint scores for every item.
    Score(ScoreArgs),
    /// Run the survey service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Reject ratings outside 1..=SCALE.
    #[arg(long)]
    pub scale: Option<u32>,
    #[arg(long)]
    pub max_pairs_per_respondent: Option<usize>,
    /// RFC 3339 timestamp of the first comparison; defaults to now.
    #[arg(long)]
    pub base_time: Option<DateTime<Utc>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub comparisons: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON training configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch losses and dev accuracy as CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Test-set report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Drop tie comparisons before training.
    #[arg(long)]
    pub no_ties: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "scores", required_unless_present = "scores", requires = "items")]
    pub ckpt: Option<PathBuf>,
    /// Score table CSV instead of a checkpoint.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Item catalog, required with --ckpt.
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub comparisons: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Elo,
    Skill,
    #[value(alias = "rank_centrality")]
    Rc,
    #[value(alias = "rao_kupper")]
    Rk,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    #[arg(long)]
    pub comparisons: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Virtual half-win, half-loss games per item against a reference (rk only).
    #[arg(long, default_value_t = 0.0)]
    pub prior_games: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON experiment grid.
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-budget, per-method mean and spread as JSON.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `start..end[:step]` (inclusive, step 0.1 by default) or a comma list.
    #[arg(long)]
    pub gammas: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub items: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// JSON service configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub items: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub model_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Experiment description read by `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub base: SimConfig,
    pub budgets: Vec<f64>,
    pub methods: Vec<Method>,
    pub n_seeds: usize,
    pub options: BudgetOptions,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            base: SimConfig::default(),
            budgets: vec![3.3],
            methods: Method::ALL.to_vec(),
            n_seeds: 1,
            options: BudgetOptions::default(),
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(args) => convert(&args),
        Command::Train(args) => {
            let report = train_cmd(&args)?;
            print_json(&report)
        }
        Command::Eval(args) => {
            let report = eval_cmd(&args)?;
            print_json(&report)
        }
        Command::Baseline(args) => baseline(&args),
        Command::Simulate(args) => simulate(&args),
        Command::SweepGamma(args) => sweep(&args),
        Command::Score(args) => {
            let table = Checkpoint::load(&args.ckpt)?.score_items_file(&args.items)?;
            export_scores(&table, &args.out)?;
            Ok(())
        }
        Command::Serve(args) => serve(args),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value).map_err(std::io::Error::other)?);
    Ok(())
}

/// The given seed, or a fresh one reported on stderr.
fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let seed = rand::random();
        eprintln!("seed: {seed}");
        seed
    })
}

fn read_json(path: &Path) -> Result<Value> {
    let bytes = fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn from_value<T: for<'de> Deserialize<'de>>(value: Value, path: &Path) -> Result<T> {
    serde_json::from_value(value).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Training configuration from an optional file; a seed written in the file
/// counts as given.
fn load_train_config(path: Option<&Path>) -> Result<(TrainConfig, Option<u64>)> {
    match path {
        None => Ok((TrainConfig::default(), None)),
        Some(path) => {
            let value = read_json(path)?;
            let seed = value.pointer("/hyper/seed").and_then(Value::as_u64);
            Ok((from_value(value, path)?, seed))
        }
    }
}

fn load_dataset(data: &DataArgs) -> Result<(Dataset, pcs_core::dataio::FeatureStats)> {
    let (items, stats) = load_items(&data.items)?;
    let comparisons = load_comparisons(&data.comparisons)?;
    Ok((make_dataset(items, comparisons)?, stats))
}

pub fn convert(args: &ConvertArgs) -> Result<()> {
    let ratings = load_ratings(&args.ratings, args.scale)?;
    let seed = match args.max_pairs_per_respondent {
        Some(_) => resolve_seed(args.seed),
        None => args.seed.unwrap_or(0),
    };
    let options = ConversionOptions {
        base_time: args.base_time.unwrap_or_else(Utc::now),
        max_pairs_per_respondent: args.max_pairs_per_respondent,
        seed,
    };
    let comparisons = ratings_to_pairs(&ratings, &options)?;
    write_comparisons(&comparisons, &args.out)?;
    eprintln!("wrote {} comparisons", comparisons.len());
    Ok(())
}

pub fn train_cmd(args: &TrainArgs) -> Result<EvalReport> {
    let (mut config, file_seed) = load_train_config(args.config.as_deref())?;
    if let Some(g) = args.gamma {
        config.hyper.gamma = g;
    }
    if let Some(lr) = args.learning_rate {
        config.hyper.learning_rate = lr;
    }
    if let Some(e) = args.max_epochs {
        config.hyper.max_epochs = e;
    }
    if args.no_ties {
        config.use_ties = false;
    }
    let seed = resolve_seed(args.seed.or(file_seed));
    config.hyper.seed = seed;

    let (dataset, stats) = load_dataset(&args.data)?;
    let (train_set, dev_set, test_set) = split(&dataset, &SplitSpec::standard(seed))?;
    let (params, history) = train(&train_set, &dev_set, &config)?;
    if let Some(path) = &args.history {
        history.write_csv(path)?;
    }
    let scores = score_items(&params, dataset.items(), "model")?;
    Checkpoint::new(params, Some(stats)).save(&args.out)?;
    let report = evaluate(&scores, test_set.comparisons(), config.hyper.gamma)?;
    if let Some(path) = &args.report {
        report.write_json(path)?;
    }
    Ok(report)
}

pub fn eval_cmd(args: &EvalArgs) -> Result<EvalReport> {
    let table: ScoreTable = match (&args.ckpt, &args.scores) {
        (Some(ckpt), None) => {
            let items = args
                .items
                .as_ref()
                .ok_or_else(|| CliError::Usage("--items is required with --ckpt".into()))?;
            Checkpoint::load(ckpt)?.score_items_file(items)?
        }
        (None, Some(scores)) => load_scores(scores)?,
        _ => return Err(CliError::Usage("give exactly one of --ckpt or --scores".into())),
    };
    let comparisons = load_comparisons(&args.comparisons)?;
    let report = evaluate(&table, &comparisons, args.gamma)?;
    if let Some(path) = &args.out {
        report.write_json(path)?;
    }
    Ok(report)
}

pub fn fit_baseline(method: BaselineMethod, comparisons: &[pcs_core::Comparison], prior_games: f64) -> Result<ScoreTable> {
    Ok(match method {
        BaselineMethod::Elo => elo_fit(comparisons, &EloConfig::default())?,
        BaselineMethod::Skill => skill_fit(comparisons, &SkillConfig::default())?.0,
        BaselineMethod::Rc => {
            let fit = rank_centrality(comparisons, &RcConfig::default())?;
            if fit.disconnected {
                eprintln!(
                    "warning: comparison graph has {} components; scores are not comparable across them",
                    fit.components
                );
            }
            fit.table
        }
        BaselineMethod::Rk => {
            let config = RkConfig {
                prior_games,
                ..RkConfig::default()
            };
            rao_kupper_fit(comparisons, &config)?.table
        }
    })
}

fn baseline(args: &BaselineArgs) -> Result<()> {
    let comparisons = load_comparisons(&args.comparisons)?;
    let table = fit_baseline(args.method, &comparisons, args.prior_games)?;
    export_scores(&table, &args.out)?;
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let value = read_json(&args.grid)?;
    let file_seed = value.pointer("/base/seed").and_then(Value::as_u64);
    let mut grid: Grid = from_value(value, &args.grid)?;
    grid.base.seed = resolve_seed(args.seed.or(file_seed));
    let rows = run_budget_experiment(&grid.base, &grid.budgets, &grid.methods, grid.n_seeds, &grid.options)?;
    write_budget_csv(&rows, &args.out)?;
    let summary = summarize(&rows);
    if let Some(path) = &args.summary {
        fs::write(path, serde_json::to_vec_pretty(&summary).map_err(std::io::Error::other)?)?;
    }
    print_json(&summary)
}

/// Parses `start..end[:step]` (inclusive) or `a,b,c`.
pub fn parse_gammas(spec: &str) -> Result<Vec<f64>> {
    let bad = || CliError::Usage(format!("invalid gamma list {spec:?}"));
    let number = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    if let Some((start, rest)) = spec.split_once("..") {
        let (end, step) = match rest.split_once(':') {
            Some((end, step)) => (number(end)?, number(step)?),
            None => (number(rest)?, 0.1),
        };
        let start = number(start)?;
        if !(step > 0.0 && end >= start) {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n)
            .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
            .collect());
    }
    spec.split(',').map(number).collect()
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let gammas = parse_gammas(&args.gammas)?;
    let (mut config, file_seed) = load_train_config(args.config.as_deref())?;
    let seed = resolve_seed(args.seed.or(file_seed));
    config.hyper.seed = seed;
    let (dataset, _) = load_dataset(&args.data)?;
    let (train_set, dev_set, test_set) = split(&dataset, &SplitSpec::standard(seed))?;
    let rows = sweep_gamma(&train_set, &dev_set, &test_set, &gammas, &config)?;
    write_sweep_csv(&rows, &args.out)?;
    print_json(&rows)
}

/// File settings, then `PCS_*` environment variables, then flags.
pub fn serve_config(args: &ServeArgs) -> Result<ServiceConfig> {
    let mut config = match &args.config {
        Some(path) => ServiceConfig::load(path)?,
        None => ServiceConfig::default(),
    }
    .with_env();
    if let Some(v) = &args.listen {
        config.listen_addr = v.clone();
    }
    if let Some(v) = &args.items {
        config.items_path = v.clone();
    }
    if let Some(v) = &args.log {
        config.log_path = v.clone();
    }
    if let Some(v) = &args.model_checkpoint {
        config.model_checkpoint = Some(v.clone());
    }
    if let Some(v) = &args.ui_dir {
        config.ui_dir = Some(v.clone());
    }
    config.seed = Some(resolve_seed(args.seed.or(config.seed)));
    Ok(config)
}

fn serve(args: ServeArgs) -> Result<()> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let config = serve_config(&args)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(pcs_service::run(config))?;
    Ok(())
}
