//! Command-line interface: simulate datasets, fit models, tabulate pmfs and
//! generating functions, and run replication studies.
//!
//! Exit codes: 0 on success, 2 for invalid input, 3 for an internal
//! invariant violation (a decreasing EM log-likelihood or a panic).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;
use thiserror::Error;

use crate::em::{em_fit, EmConfig, FitResult, IemFamily, IemRewards, TemplateFamily};
use crate::error::Error;
use crate::io::{read_dataset, read_model, write_dataset, CovariateSource, IoError, Model, RegressionModel};
use crate::iem::RegressionIemSpec;
use crate::rrdph::{joint_pmf_table, pgf_compact, RewardKind, RewardProbs};
use crate::simulate::{sample_covariates, simulate_expanded, simulate_iem_dataset, SimConfig};
use crate::study::{run_study, Study};

#[derive(Debug, Parser)]
#[command(name = "rrdph", version, about = "Random-reward phase-type distributions")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate observations from a model file as CSV `id,y1,y2[,x1..]`.
    Simulate(SimulateArgs),
    /// Fit a model to observation CSV by EM and print a JSON report.
    Fit(FitArgs),
    /// Tabulate the joint pmf (or both reward curves of a reward chain) as CSV.
    Pmf(PmfArgs),
    /// Tabulate the joint generating function on a grid as CSV.
    Pgf(PgfArgs),
    /// Run a simulate-and-refit study; one CSV row per replicate.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Model JSON file.
    pub model: PathBuf,
    /// Number of observations [default: 1000, or the number of covariate rows].
    #[arg(long)]
    pub n: Option<usize>,
    /// Seed of the random number generator.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitModel {
    Iem,
    Bernoulli,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RewardsArg {
    Free,
    Linear,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Observation CSV file.
    pub data: PathBuf,
    /// Model family to fit.
    #[arg(long, value_enum)]
    pub model: FitModel,
    /// Number of severity levels (inertia-escalation models).
    #[arg(long)]
    pub d: Option<usize>,
    /// Reward parameterisation (inertia-escalation models).
    #[arg(long, value_enum, default_value_t = RewardsArg::Free)]
    pub rewards: RewardsArg,
    /// Comma-separated covariate columns; turns on the regression model.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Model file giving the structure of a Bernoulli or geometric fit: zero
    /// entries stay zero and rewards of 0 or 1 stay fixed.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Iteration cap.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Stop when the parameter change (Euclidean norm) falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub min_var: f64,
    /// Hold a parameter fixed, as name=value (repeatable).
    #[arg(long, value_parser = parse_assignment)]
    pub fix: Vec<(String, f64)>,
    /// Start a parameter at a value, as name=value (repeatable).
    #[arg(long, value_parser = parse_assignment)]
    pub init: Vec<(String, f64)>,
    /// Use only the default starting point.
    #[arg(long)]
    pub single_start: bool,
    /// Report file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PmfArgs {
    /// Model JSON file.
    pub model: PathBuf,
    /// Largest reward tabulated.
    #[arg(long, default_value_t = 20)]
    pub y1_max: usize,
    /// Largest second coordinate (or absorption time) tabulated.
    #[arg(long, default_value_t = 20)]
    pub y2_max: usize,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PgfArgs {
    /// Model JSON file.
    pub model: PathBuf,
    /// Comma-separated values of theta1 [default: 0, 0.125, .., 1].
    #[arg(long, value_delimiter = ',')]
    pub theta1: Vec<f64>,
    /// Comma-separated values of theta2 [default: 0, 0.125, .., 1].
    #[arg(long, value_delimiter = ',')]
    pub theta2: Vec<f64>,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// One of bernoulli-toy, geometric-toy, iem-reward-regression, iem-free-rewards.
    pub study: String,
    /// Number of simulated datasets.
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Observations per replicate.
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Seed of the whole study; each replicate gets its own substream.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Iteration cap per fit.
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Stop when the parameter change (Euclidean norm) falls below this.
    #[arg(long, default_value_t = 1e-6)]
    pub min_var: f64,
    /// Output file [default: stdout].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_assignment(s: &str) -> Result<(String, f64), String> {
    let (name, value) = s.split_once('=').ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("'{value}' is not a number"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Input(#[from] IoError),

    #[error("{0}")]
    Model(#[from] Error),

    #[error("{0}")]
    Usage(String),

    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Model(Error::NonMonotoneLikelihood { .. }) => 3,
            _ => 2,
        }
    }
}

/// The JSON document written by `fit`.
#[derive(Debug, Serialize)]
pub struct FitReport {
    pub estimates: BTreeMap<String, f64>,
    pub loglik: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub fixed: Vec<String>,
    pub warnings: Vec<String>,
}

impl From<&FitResult> for FitReport {
    fn from(fit: &FitResult) -> Self {
        FitReport {
            estimates: fit.estimates(),
            loglik: fit.loglik(),
            loglik_trace: fit.loglik_trace.clone(),
            iterations: fit.iterations,
            converged: fit.converged,
            fixed: fit
                .names
                .iter()
                .zip(&fit.fixed)
                .filter(|(_, f)| **f)
                .map(|(n, _)| n.clone())
                .collect(),
            warnings: fit.warnings.clone(),
        }
    }
}

struct Output {
    label: String,
    sink: Box<dyn Write>,
}

impl Output {
    fn open(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => {
                let f = File::create(p).map_err(|e| CliError::Output {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                Ok(Output {
                    label: p.display().to_string(),
                    sink: Box::new(BufWriter::new(f)),
                })
            }
            None => Ok(Output {
                label: "stdout".into(),
                sink: Box::new(BufWriter::new(std::io::stdout())),
            }),
        }
    }

    fn fail(&self, e: impl std::fmt::Display) -> CliError {
        CliError::Output {
            path: self.label.clone(),
            message: e.to_string(),
        }
    }

    fn csv(self, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
        let label = self.label.clone();
        let fail = |e: csv::Error| CliError::Output {
            path: label.clone(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_writer(self.sink);
        w.write_record(header).map_err(fail)?;
        for row in rows {
            w.write_record(&row).map_err(fail)?;
        }
        w.flush().map_err(|e| fail(e.into()))
    }
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn regression_rows(model: &RegressionModel, n: Option<usize>, seed: u64) -> Result<Vec<Vec<f64>>, CliError> {
    match &model.covariates {
        CovariateSource::Pool(pool) => Ok(sample_covariates(pool, n.unwrap_or(1000), seed)
            .into_iter()
            .map(|x| vec![x])
            .collect()),
        CovariateSource::Rows(rows) => match n {
            Some(n) if n != rows.len() => Err(CliError::Usage(format!(
                "--n {n} differs from the {} covariate rows in the model file",
                rows.len()
            ))),
            _ => Ok(rows.clone()),
        },
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (_, model) = read_model(&args.model)?;
    let (obs, rows) = match &model {
        Model::Expanded(m) => (simulate_expanded(m, &SimConfig::new(args.seed, args.n.unwrap_or(1000)))?, None),
        Model::Regression(r) => {
            let rows = regression_rows(r, args.n, args.seed)?;
            let spec = RegressionIemSpec {
                d: r.d,
                beta_nu: r.beta_nu.clone(),
                beta_eta: r.beta_eta.clone(),
                reward: r.reward.clone(),
                design: RegressionIemSpec::design_from_covariates(&rows)?,
            };
            (simulate_iem_dataset(&spec, &SimConfig::new(args.seed, rows.len()))?, Some(rows))
        }
        Model::Dph(_) | Model::RewardChain(_) => {
            return Err(CliError::Usage(
                "simulate needs a random-reward model (rrdph_bernoulli, rrdph_geometric, iem or iem_regression)"
                    .into(),
            ))
        }
    };
    let out = Output::open(args.out.as_deref())?;
    let label = out.label.clone();
    write_dataset(out.sink, &obs, rows.as_deref()).map_err(|e| CliError::Output {
        path: label,
        message: e.to_string(),
    })?;
    info!("wrote {} observations", obs.len());
    Ok(())
}

fn template_family(args: &FitArgs, kind: RewardKind) -> Result<TemplateFamily, CliError> {
    let path = args
        .template
        .as_ref()
        .ok_or_else(|| CliError::Usage("bernoulli and geometric fits need --template".into()))?;
    if !args.covariates.is_empty() || args.rewards == RewardsArg::Linear {
        return Err(CliError::Usage(
            "--covariates and --rewards linear apply only to --model iem".into(),
        ));
    }
    let (_, model) = read_model(path)?;
    let (base, rewards) = match model {
        Model::Dph(m) => {
            let d = m.dim();
            (m, RewardProbs(vec![0.5; d]))
        }
        Model::Expanded(e) if e.kind() == kind => (e.base().clone(), e.rewards().clone()),
        _ => {
            return Err(CliError::Usage(format!(
                "template must be of type dph or rrdph_{}",
                if kind == RewardKind::Bernoulli { "bernoulli" } else { "geometric" }
            )))
        }
    };
    Ok(TemplateFamily::new(kind, &base, &rewards)?)
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let data = read_dataset(&args.data, &args.covariates)?;
    let config = EmConfig {
        max_iter: args.max_iter,
        min_var: args.min_var,
        init: args.init.clone(),
        fixed: args.fix.clone(),
        multi_start: !args.single_start,
        ..EmConfig::default()
    };
    let fit = match args.model {
        FitModel::Iem => {
            if args.template.is_some() {
                return Err(CliError::Usage("--template applies only to bernoulli and geometric fits".into()));
            }
            let d = args
                .d
                .ok_or_else(|| CliError::Usage("--model iem needs --d".into()))?;
            let rewards = match args.rewards {
                RewardsArg::Free => IemRewards::Free,
                RewardsArg::Linear => IemRewards::Linear,
            };
            let family = if args.covariates.is_empty() {
                IemFamily::homogeneous(d, rewards)?
            } else {
                IemFamily::regression(d, rewards, &data.covariates)?
            };
            em_fit(&family, &data.observations, &config)?
        }
        FitModel::Bernoulli => em_fit(&template_family(args, RewardKind::Bernoulli)?, &data.observations, &config)?,
        FitModel::Geometric => em_fit(&template_family(args, RewardKind::Geometric)?, &data.observations, &config)?,
    };
    let mut out = Output::open(args.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out.sink, &FitReport::from(&fit)).map_err(|e| out.fail(e))?;
    writeln!(out.sink).and_then(|_| out.sink.flush()).map_err(|e| out.fail(e))
}

fn cmd_pmf(args: &PmfArgs) -> Result<(), CliError> {
    let (_, model) = read_model(&args.model)?;
    let out = Output::open(args.out.as_deref())?;
    match model {
        Model::Expanded(m) => {
            let table = joint_pmf_table(&m, args.y1_max, args.y2_max)?;
            let total: f64 = table.iter().flatten().sum();
            info!("tabulated mass {total}");
            let rows = table.iter().enumerate().flat_map(|(y2, row)| {
                row.iter()
                    .enumerate()
                    .map(move |(y1, p)| vec![y1.to_string(), y2.to_string(), num(*p)])
            });
            out.csv(&strings(&["y1", "y2", "p"]), rows)
        }
        Model::Dph(m) => {
            let pmf = m.pmf_table(args.y2_max);
            let rows = (1..=args.y2_max).map(|n| vec![n.to_string(), num(pmf[n])]);
            out.csv(&strings(&["tau", "p"]), rows)
        }
        Model::RewardChain(c) => {
            let fixed = c.fixed_variant()?;
            let random = c.reward_pmf(args.y1_max)?;
            let deterministic = fixed.reward_pmf(args.y1_max)?;
            info!("mean reward {} (random) and {} (fixed)", c.reward_mean(), fixed.reward_mean());
            let rows = (0..=args.y1_max).map(|k| vec![k.to_string(), num(random.pmf[k]), num(deterministic.pmf[k])]);
            out.csv(&strings(&["psi", "random", "fixed"]), rows)
        }
        Model::Regression(_) => Err(CliError::Usage(
            "pmf needs a single model; iem_regression describes one model per subject".into(),
        )),
    }
}

fn default_grid(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        (0..=8).map(|i| i as f64 / 8.0).collect()
    } else {
        values.to_vec()
    }
}

fn cmd_pgf(args: &PgfArgs) -> Result<(), CliError> {
    let (_, model) = read_model(&args.model)?;
    let theta1 = default_grid(&args.theta1);
    let theta2 = default_grid(&args.theta2);
    match model {
        Model::Expanded(m) => {
            let mut rows = Vec::with_capacity(theta1.len() * theta2.len());
            for &a in &theta1 {
                for &b in &theta2 {
                    let expanded = m.pgf(a, b)?;
                    let compact = pgf_compact(m.base(), m.rewards(), m.kind(), a, b)?;
                    rows.push(vec![a.to_string(), b.to_string(), num(expanded), num(compact)]);
                }
            }
            Output::open(args.out.as_deref())?.csv(&strings(&["theta1", "theta2", "expanded", "compact"]), rows)
        }
        Model::Dph(m) => {
            let rows = theta2
                .iter()
                .map(|&z| Ok(vec![z.to_string(), num(m.pgf(z)?)]))
                .collect::<Result<Vec<_>, Error>>()?;
            Output::open(args.out.as_deref())?.csv(&strings(&["theta", "pgf"]), rows)
        }
        Model::RewardChain(_) | Model::Regression(_) => Err(CliError::Usage(
            "pgf supports dph, rrdph_bernoulli, rrdph_geometric and iem models".into(),
        )),
    }
}

fn cmd_replicate(args: &ReplicateArgs) -> Result<(), CliError> {
    let study: Study = args.study.parse()?;
    let config = EmConfig {
        max_iter: args.max_iter,
        min_var: args.min_var,
        ..EmConfig::default()
    };
    let results = run_study(study, args.replicates, args.n, args.seed, &config)?;
    let mut header = strings(&["replicate", "seed"]);
    header.extend(study.columns());
    header.extend(strings(&["iterations", "converged", "loglik"]));
    let rows = results.iter().map(|r| {
        let mut row = vec![(r.index + 1).to_string(), r.seed.to_string()];
        row.extend(r.values.iter().map(|v| num(*v)));
        row.extend([r.fit.iterations.to_string(), r.fit.converged.to_string(), num(r.fit.loglik())]);
        row
    });
    Output::open(args.out.as_deref())?.csv(&header, rows)
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Pmf(a) => cmd_pmf(a),
        Command::Pgf(a) => cmd_pgf(a),
        Command::Replicate(a) => cmd_replicate(a),
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code, writing any error to stderr.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match std::panic::catch_unwind(|| run(&cli)) {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(_) => {
            eprintln!("error: internal failure");
            3
        }
    }
}

/// Entry point of the `rrdph` binary.
pub fn main() -> ExitCode {
    ExitCode::from(run_from(std::env::args_os()))
}
