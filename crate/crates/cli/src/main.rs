use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use rankforge::campaign::{run_campaign, CampaignConfig, Column};
use rankforge::rank_test::{estimate_rank, run_test, Lambda1Approx, RankTestSpec, TestMethod, TiePolicy};
use rankforge::sir::{build_matrices, read_csv, ModelId, SirMatrices, SliceMode, WeightLaw, WeightedBootstrap};
use rankforge::{Error, StatKind};

const THREADS_ENV: &str = "RANKFORGE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "rankforge", version, about = "Rank tests for sliced-inverse-regression matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test H0: rank = m on a data set.
    Test(TestArgs),
    /// Run a Monte Carlo level/power campaign.
    Simulate(SimulateArgs),
    /// Estimate the rank by sequential testing of m = 0, 1, ...
    EstimateRank(SweepArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Stat {
    Lambda1,
    Lambda2,
    Lambda3,
}

impl From<Stat> for StatKind {
    fn from(s: Stat) -> Self {
        match s {
            Stat::Lambda1 => StatKind::Lambda1,
            Stat::Lambda2 => StatKind::Lambda2,
            Stat::Lambda3 => StatKind::Lambda3,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Approx {
    Wood,
    Adjusted,
    Rescaled,
    Mc,
}

impl From<Approx> for Lambda1Approx {
    fn from(a: Approx) -> Self {
        match a {
            Approx::Wood => Lambda1Approx::Wood,
            Approx::Adjusted => Lambda1Approx::Adjusted,
            Approx::Rescaled => Lambda1Approx::Rescaled,
            Approx::Mc => Lambda1Approx::MonteCarloWeights,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Ties {
    Error,
    Perturb,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Slicing {
    EqualCount,
    EqualWidth,
}

impl From<Slicing> for SliceMode {
    fn from(s: Slicing) -> Self {
        match s {
            Slicing::EqualCount => SliceMode::EqualCount,
            Slicing::EqualWidth => SliceMode::EqualWidth,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weights {
    Normal,
    Rademacher,
}

impl From<Weights> for WeightLaw {
    fn from(w: Weights) -> Self {
        match w {
            Weights::Normal => WeightLaw::Normal,
            Weights::Rademacher => WeightLaw::Rademacher,
        }
    }
}

/// Options shared by `test` and `estimate-rank`.
#[derive(Debug, Args)]
struct DataTestArgs {
    /// CSV file with a header row; first column Y, then X1..Xp.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "lambda2")]
    stat: Stat,
    #[arg(long, value_enum, default_value = "bootstrap")]
    method: Method,
    /// Weighted chi-squared approximation for asymptotic lambda1.
    #[arg(long, value_enum, default_value = "wood")]
    approx: Approx,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap replicates B.
    #[arg(long, default_value_t = 1000)]
    boot: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Number of slices H.
    #[arg(long, default_value_t = 5)]
    slices: usize,
    #[arg(long, value_enum, default_value = "equal-count")]
    slice_mode: Slicing,
    /// Bootstrap multiplier law.
    #[arg(long, value_enum, default_value = "normal")]
    weights: Weights,
    #[arg(long, value_enum, default_value = "error")]
    tie_policy: Ties,
    /// Draws for simulated weighted chi-squared quantiles.
    #[arg(long, default_value_t = 200_000)]
    mc_draws: usize,
    /// Worker threads (overridden by RANKFORGE_THREADS).
    #[arg(long)]
    parallelism: Option<usize>,
    /// Write JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Hypothesized rank m.
    #[arg(long)]
    m: usize,
    #[command(flatten)]
    common: DataTestArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: DataTestArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Model {
    #[value(name = "I")]
    I,
    #[value(name = "Ia")]
    Ia,
    #[value(name = "Ib")]
    Ib,
    #[value(name = "II")]
    II,
    #[value(name = "III")]
    III,
}

impl From<Model> for ModelId {
    fn from(m: Model) -> Self {
        match m {
            Model::I => ModelId::I,
            Model::Ia => ModelId::Ia,
            Model::Ib => ModelId::Ib,
            Model::II => ModelId::II,
            Model::III => ModelId::III,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum, default_value = "I")]
    model: Model,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 6)]
    p: usize,
    #[arg(long, default_value_t = 5)]
    slices: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 500)]
    boot: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Ranks to test, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1")]
    ranks: Vec<usize>,
    /// Method columns, comma separated (wood, resc, adj, mc_weights,
    /// cb_lambda1, lambda2, cb_lambda2, lambda3, cb_lambda3).
    #[arg(long, value_delimiter = ',', value_parser = parse_column)]
    columns: Option<Vec<Column>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_enum, default_value = "equal-count")]
    slice_mode: Slicing,
    #[arg(long, value_enum, default_value = "normal")]
    weights: Weights,
    #[arg(long, default_value_t = 20_000)]
    mc_draws: usize,
    /// CSV table path; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON metadata sidecar; defaults to the table path with a .json
    /// extension.
    #[arg(long)]
    meta: Option<PathBuf>,
    /// Write one line per replication, row and column to this CSV.
    #[arg(long)]
    log_details: Option<PathBuf>,
}

fn parse_column(s: &str) -> Result<Column, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn threads(flag: Option<usize>) -> Result<Option<usize>, Failure> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&k| k > 0)
            .map(Some)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer"))),
        Err(_) => Ok(flag),
    }
}

fn configure_global_pool(flag: Option<usize>) -> Result<(), Failure> {
    if let Some(k) = threads(flag)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Failure::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn load(common: &DataTestArgs) -> Result<SirMatrices, Failure> {
    let sample = read_csv(&common.input, common.slices)?;
    Ok(build_matrices(&sample, common.slice_mode.into())?.reduce_columns())
}

fn spec_for(common: &DataTestArgs, m: usize) -> RankTestSpec {
    let method = match common.method {
        Method::Asymptotic => TestMethod::Asymptotic {
            approx: common.approx.into(),
        },
        Method::Bootstrap => TestMethod::Bootstrap {
            replicates: common.boot,
            seed: common.seed,
        },
    };
    RankTestSpec {
        tie_policy: match common.tie_policy {
            Ties::Error => TiePolicy::Error,
            Ties::Perturb => TiePolicy::Perturb,
        },
        mc_seed: common.seed,
        mc_draws: common.mc_draws,
        ..RankTestSpec::new(common.stat.into(), m, method, common.alpha)
    }
}

fn data_summary(common: &DataTestArgs, mats: &SirMatrices) -> Value {
    json!({
        "input": common.input.display().to_string(),
        "n": mats.n(),
        "p": mats.c_hat.nrows(),
        "slices": common.slices,
        "slice_mode": format!("{:?}", common.slice_mode),
        "weight_law": format!("{:?}", common.weights),
        "reduced_columns": mats.c_hat.ncols(),
    })
}

fn emit_json(doc: &Value, out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(doc)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn cmd_test(args: &TestArgs) -> Result<(), Failure> {
    let common = &args.common;
    configure_global_pool(common.parallelism)?;
    let mats = load(common)?;
    let est = mats.estimated()?;
    let source = WeightedBootstrap::new(&mats, common.weights.into());
    let result = run_test(&est, &spec_for(common, args.m), &source)?;
    let mut doc = serde_json::to_value(&result)?;
    doc["data"] = data_summary(common, &mats);
    emit_json(&doc, common.out.as_deref())
}

fn cmd_estimate_rank(args: &SweepArgs) -> Result<(), Failure> {
    let common = &args.common;
    configure_global_pool(common.parallelism)?;
    let mats = load(common)?;
    let est = mats.estimated()?;
    let source = WeightedBootstrap::new(&mats, common.weights.into());
    let fit = estimate_rank(&est, &spec_for(common, 0), &source)?;
    let mut doc = serde_json::to_value(&fit)?;
    doc["data"] = data_summary(common, &mats);
    emit_json(&doc, common.out.as_deref())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let cfg = CampaignConfig {
        sample_sizes: args.n.clone(),
        p: args.p,
        h: args.slices,
        alpha: args.alpha,
        ranks_to_test: args.ranks.clone(),
        columns: args.columns.clone().unwrap_or_else(|| Column::ALL.to_vec()),
        parallelism: threads(args.parallelism)?,
        weight_law: args.weights.into(),
        slice_mode: args.slice_mode.into(),
        mc_draws: args.mc_draws,
        log_details: args.log_details.is_some(),
        ..CampaignConfig::new(args.model.into(), args.n[0], args.reps, args.boot, args.seed)
    };
    let table = run_campaign(&cfg)?;
    match &args.out {
        Some(path) => table.write_csv(BufWriter::new(File::create(path)?))?,
        None => table.write_csv(io::stdout().lock())?,
    }
    let meta_path = args
        .meta
        .clone()
        .or_else(|| args.out.as_ref().map(|p| p.with_extension("json")));
    if let Some(path) = meta_path {
        let doc = json!({
            "metadata": table.metadata,
            "rows": table.rows,
        });
        emit_json(&doc, Some(&path))?;
    }
    if let Some(path) = &args.log_details {
        table.write_log_csv(BufWriter::new(File::create(path)?))?;
    }
    io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::EstimateRank(a) => cmd_estimate_rank(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(2)
        }
    }
}
