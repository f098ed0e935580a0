//! Monte Carlo campaigns: repeated samples from a simulation model, every
//! configured test applied to each, and rejection frequencies tabulated per
//! `(n, m)` row and per method column.
//!
//! Randomness is keyed by position, never by scheduling: replication `r` at
//! sample size `n` draws its data from `derive_seed(master, [SAMPLE, n, r])`
//! and each column's bootstrap from
//! `derive_seed(master, [COLUMN, n, r, m, column])`. Adding a column or
//! changing the worker count therefore leaves every other number unchanged.

use std::collections::HashMap;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::OptimizerConfig;
use crate::error::{Error, Result};
use crate::linalg::EstimatedMatrix;
use crate::lsce::BootstrapSettings;
use crate::rank_test::{asymptotic_quantile, bootstrap_test, Lambda1Approx};
use crate::rng::derive_seed;
use crate::sir::{build_matrices, generate, ModelId, ModelSpec, SirMatrices, SliceMode, WeightLaw, WeightedBootstrap};
use crate::stats::{self, StatKind, StatValue};

const SAMPLE_TAG: u64 = 1;
const COLUMN_TAG: u64 = 2;

/// One method column of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    /// Λ₁ with Wood's approximation.
    Wood,
    /// Λ₁ with the rescaled chi-squared.
    Resc,
    /// Λ₁ with the adjusted chi-squared.
    Adj,
    /// Λ₁ with the simulated weighted chi-squared.
    McWeights,
    CbLambda1,
    Lambda2,
    CbLambda2,
    Lambda3,
    CbLambda3,
}

impl Column {
    pub const ALL: [Column; 9] = [
        Column::Wood,
        Column::Resc,
        Column::Adj,
        Column::McWeights,
        Column::CbLambda1,
        Column::Lambda2,
        Column::CbLambda2,
        Column::Lambda3,
        Column::CbLambda3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Column::Wood => "wood",
            Column::Resc => "resc",
            Column::Adj => "adj",
            Column::McWeights => "mc_weights",
            Column::CbLambda1 => "cb_lambda1",
            Column::Lambda2 => "lambda2",
            Column::CbLambda2 => "cb_lambda2",
            Column::Lambda3 => "lambda3",
            Column::CbLambda3 => "cb_lambda3",
        }
    }

    pub fn statistic(self) -> StatKind {
        match self {
            Column::Wood | Column::Resc | Column::Adj | Column::McWeights | Column::CbLambda1 => {
                StatKind::Lambda1
            }
            Column::Lambda2 | Column::CbLambda2 => StatKind::Lambda2,
            Column::Lambda3 | Column::CbLambda3 => StatKind::Lambda3,
        }
    }

    pub fn is_bootstrap(self) -> bool {
        matches!(self, Column::CbLambda1 | Column::CbLambda2 | Column::CbLambda3)
    }

    /// Stable identifier used in seed derivation.
    fn id(self) -> u64 {
        Column::ALL.iter().position(|&c| c == self).unwrap() as u64
    }

    fn approx(self) -> Lambda1Approx {
        match self {
            Column::Wood => Lambda1Approx::Wood,
            Column::Resc => Lambda1Approx::Rescaled,
            Column::Adj => Lambda1Approx::Adjusted,
            _ => Lambda1Approx::MonteCarloWeights,
        }
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Column::ALL
            .iter()
            .copied()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown column '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignConfig {
    pub model: ModelId,
    pub sample_sizes: Vec<usize>,
    pub p: usize,
    pub h: usize,
    pub reps: usize,
    pub boot_b: usize,
    pub alpha: f64,
    pub ranks_to_test: Vec<usize>,
    pub columns: Vec<Column>,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub parallelism: Option<usize>,
    pub weight_law: WeightLaw,
    pub slice_mode: SliceMode,
    /// Draws for simulated weighted chi-squared quantiles.
    pub mc_draws: usize,
    #[serde(skip)]
    pub optimizer: OptimizerConfig,
    /// Keep one log line per (replication, row, column).
    pub log_details: bool,
}

impl CampaignConfig {
    pub fn new(model: ModelId, n: usize, reps: usize, boot_b: usize, master_seed: u64) -> Self {
        CampaignConfig {
            model,
            sample_sizes: vec![n],
            p: 6,
            h: 5,
            reps,
            boot_b,
            alpha: 0.05,
            ranks_to_test: vec![0, 1],
            columns: Column::ALL.to_vec(),
            master_seed,
            parallelism: None,
            weight_law: WeightLaw::Normal,
            slice_mode: SliceMode::EqualCount,
            mc_draws: 20_000,
            optimizer: OptimizerConfig::default(),
            log_details: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.into()));
        if self.reps == 0 {
            return bad("reps must be at least 1");
        }
        if self.boot_b == 0 {
            return bad("bootstrap size must be at least 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.sample_sizes.is_empty() || self.ranks_to_test.is_empty() || self.columns.is_empty()
        {
            return bad("sample sizes, ranks and columns must be non-empty");
        }
        if self.h < 2 || self.p == 0 {
            return bad("need p >= 1 and H >= 2");
        }
        if self.sample_sizes.iter().any(|&n| n <= self.h) {
            return bad("every sample size must exceed the slice count");
        }
        let max_rank = self.p.min(self.h - 1);
        if self.ranks_to_test.iter().any(|&m| m >= max_rank) {
            return bad("tested ranks must be below min(p, H - 1)");
        }
        if has_duplicates(&self.sample_sizes)
            || has_duplicates(&self.ranks_to_test)
            || has_duplicates(&self.columns)
        {
            return bad("sample sizes, ranks and columns must be unique");
        }
        if self.mc_draws == 0 || self.parallelism == Some(0) {
            return bad("draw and worker counts must be positive");
        }
        self.optimizer.validate()
    }
}

fn has_duplicates<T: PartialEq>(v: &[T]) -> bool {
    v.iter().enumerate().any(|(i, a)| v[..i].contains(a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cell {
    pub column: Column,
    pub rejections: usize,
    pub successes: usize,
    pub failures: usize,
}

impl Cell {
    /// Rejections over successful replications.
    pub fn frequency(&self) -> f64 {
        if self.successes == 0 {
            f64::NAN
        } else {
            self.rejections as f64 / self.successes as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub n: usize,
    pub m: usize,
    pub cells: Vec<Cell>,
}

impl TableRow {
    pub fn cell(&self, column: Column) -> Option<&Cell> {
        self.cells.iter().find(|c| c.column == column)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub n: usize,
    pub m: usize,
    pub rep: usize,
    pub column: Column,
    pub statistic: Option<f64>,
    pub quantile: Option<f64>,
    pub reject: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignMetadata {
    pub config: CampaignConfig,
    pub seed_derivation: &'static str,
    pub total_failures: usize,
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignTable {
    pub columns: Vec<Column>,
    pub rows: Vec<TableRow>,
    pub metadata: CampaignMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log: Option<Vec<LogEntry>>,
}

impl CampaignTable {
    pub fn row(&self, n: usize, m: usize) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.n == n && r.m == m)
    }

    pub fn frequency(&self, n: usize, m: usize, column: Column) -> Option<f64> {
        self.row(n, m)?.cell(column).map(Cell::frequency)
    }

    /// One line per `(n, m)`, one column per method; frequencies written with
    /// 17 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string(), "m".to_string()];
        header.extend(self.columns.iter().map(|c| c.name().to_string()));
        w.write_record(&header)?;
        for row in &self.rows {
            let mut record = vec![row.n.to_string(), row.m.to_string()];
            record.extend(row.cells.iter().map(|c| format!("{:.16e}", c.frequency())));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_log_csv<W: Write>(&self, out: W) -> Result<()> {
        let Some(log) = &self.log else {
            return Err(Error::InvalidInput("campaign ran without detail logging".into()));
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "m", "rep", "column", "statistic", "quantile", "reject", "error"])?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
        for e in log {
            w.write_record([
                e.n.to_string(),
                e.m.to_string(),
                e.rep.to_string(),
                e.column.name().to_string(),
                num(e.statistic),
                num(e.quantile),
                e.reject.map(|r| r.to_string()).unwrap_or_default(),
                e.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decision for one (row, column) in one replication.
type Outcome = std::result::Result<(f64, f64, bool), Error>;

struct RepResult {
    /// Indexed `[row][column]`.
    outcomes: Vec<Vec<Outcome>>,
}

/// Data for one replication in reduced column coordinates.
pub fn replication_data(cfg: &CampaignConfig, n: usize, rep: usize) -> Result<SirMatrices> {
    let seed = derive_seed(cfg.master_seed, &[SAMPLE_TAG, n as u64, rep as u64]);
    let spec = ModelSpec {
        id: cfg.model,
        n,
        p: cfg.p,
        h: cfg.h,
        seed,
    };
    Ok(build_matrices(&generate(&spec)?, cfg.slice_mode)?.reduce_columns())
}

fn run_replication(cfg: &CampaignConfig, n: usize, rep: usize) -> RepResult {
    let data = replication_data(cfg, n, rep).and_then(|mats| {
        let est = mats.estimated()?;
        Ok((mats, est))
    });
    let outcomes = cfg
        .ranks_to_test
        .iter()
        .map(|&m| match &data {
            Err(e) => vec![Err(e.clone()); cfg.columns.len()],
            Ok((mats, est)) => run_row(cfg, mats, est, n, rep, m),
        })
        .collect();
    RepResult { outcomes }
}

fn run_row(
    cfg: &CampaignConfig,
    mats: &SirMatrices,
    est: &EstimatedMatrix,
    n: usize,
    rep: usize,
    m: usize,
) -> Vec<Outcome> {
    let mut stats_cache: HashMap<StatKind, Result<StatValue>> = HashMap::new();
    let source = WeightedBootstrap::new(mats, cfg.weight_law);
    cfg.columns
        .iter()
        .map(|&column| {
            let kind = column.statistic();
            let stat = stats_cache
                .entry(kind)
                .or_insert_with(|| stats::compute(kind, est, m, &cfg.optimizer))
                .as_ref()
                .map_err(Clone::clone)?;
            let seed = derive_seed(
                cfg.master_seed,
                &[COLUMN_TAG, n as u64, rep as u64, m as u64, column.id()],
            );
            if column.is_bootstrap() {
                let settings = BootstrapSettings {
                    replicates: cfg.boot_b,
                    alpha: cfg.alpha,
                    seed,
                };
                let out = bootstrap_test(est, stat, &settings, &source, &cfg.optimizer)?;
                Ok((stat.value, out.quantile, out.reject))
            } else {
                let (q, _) = asymptotic_quantile(stat, column.approx(), cfg.alpha, seed, cfg.mc_draws)?;
                Ok((stat.value, q, stat.value > q))
            }
        })
        .collect()
}

pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignTable> {
    cfg.validate()?;
    let start = Instant::now();
    let jobs: Vec<(usize, usize)> = cfg
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..cfg.reps).map(move |r| (n, r)))
        .collect();
    let work = || -> Vec<RepResult> {
        jobs.par_iter()
            .map(|&(n, rep)| run_replication(cfg, n, rep))
            .collect()
    };
    let results = match cfg.parallelism {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };

    let mut rows = Vec::new();
    let mut log = cfg.log_details.then(Vec::new);
    let mut total_failures = 0;
    for (ni, &n) in cfg.sample_sizes.iter().enumerate() {
        let block = &results[ni * cfg.reps..(ni + 1) * cfg.reps];
        for (mi, &m) in cfg.ranks_to_test.iter().enumerate() {
            let mut cells = Vec::with_capacity(cfg.columns.len());
            for (ci, &column) in cfg.columns.iter().enumerate() {
                let mut cell = Cell {
                    column,
                    rejections: 0,
                    successes: 0,
                    failures: 0,
                };
                for (rep, r) in block.iter().enumerate() {
                    let outcome = &r.outcomes[mi][ci];
                    match outcome {
                        Ok((_, _, reject)) => {
                            cell.successes += 1;
                            cell.rejections += usize::from(*reject);
                        }
                        Err(e) if e.is_numerical() => cell.failures += 1,
                        Err(e) => return Err(e.clone()),
                    }
                    if let Some(log) = log.as_mut() {
                        log.push(log_entry(n, m, rep, column, outcome));
                    }
                }
                if cell.failures * 50 > cfg.reps {
                    return Err(Error::CampaignUnstable {
                        cell: format!("n={n}, m={m}, {}", column.name()),
                        failed: cell.failures,
                        reps: cfg.reps,
                    });
                }
                total_failures += cell.failures;
                cells.push(cell);
            }
            rows.push(TableRow { n, m, cells });
        }
    }
    Ok(CampaignTable {
        columns: cfg.columns.clone(),
        rows,
        metadata: CampaignMetadata {
            config: cfg.clone(),
            seed_derivation: "sample: derive(master, [1, n, rep]); column: derive(master, [2, n, rep, m, column])",
            total_failures,
            wall_time_secs: start.elapsed().as_secs_f64(),
        },
        log,
    })
}

fn log_entry(n: usize, m: usize, rep: usize, column: Column, outcome: &Outcome) -> LogEntry {
    match outcome {
        Ok((s, q, r)) => LogEntry {
            n,
            m,
            rep,
            column,
            statistic: Some(*s),
            quantile: Some(*q),
            reject: Some(*r),
            error: None,
        },
        Err(e) => LogEntry {
            n,
            m,
            rep,
            column,
            statistic: None,
            quantile: None,
            reject: None,
            error: Some(e.to_string()),
        },
    }
}
