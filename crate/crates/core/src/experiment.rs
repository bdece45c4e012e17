//! Monte-Carlo experiment harness: paired power sweeps and minimum-SINR
//! distributions over random channel drops, written as CSV.
//!
//! Pairing: a trial index fully determines the channel draw, so every
//! (scheme, epsilon, gamma) cell of a trial sees bit-identical estimates and
//! the same true-channel realization.  Workers only change scheduling;
//! results are keyed and sorted by (trial, scheme, epsilon, gamma) before
//! writing, making the output independent of the worker count.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::certify;
use crate::channel::{self, apply_order, ChannelSet, Scenario};
use crate::formulation::{
    design_nonrobust, design_oma, design_robust, oma_target, BeamDesign, DesignInputs,
    DEFAULT_RANK_TOL,
};
use crate::hermitian::ComplexVector;
use crate::solver::{SolverOptions, SolverStatus};
use crate::units::{db_to_linear, linear_to_db};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scheme {
    Robust,
    NonRobust,
    Oma,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Robust, Scheme::NonRobust, Scheme::Oma];

    fn ordinal(self) -> u8 {
        match self {
            Scheme::Robust => 0,
            Scheme::NonRobust => 1,
            Scheme::Oma => 2,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Robust => "robust",
            Scheme::NonRobust => "nonrobust",
            Scheme::Oma => "oma",
        })
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "robust" => Ok(Scheme::Robust),
            "nonrobust" => Ok(Scheme::NonRobust),
            "oma" => Ok(Scheme::Oma),
            other => Err(format!("unknown scheme `{other}` (robust|nonrobust|oma)")),
        }
    }
}

/// Full description of one experiment run.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub schemes: Vec<Scheme>,
    /// SINR targets for the sweep, in dB.
    pub gamma_sweep_db: Vec<f64>,
    /// Design-side error radii for the robust scheme.
    pub epsilon_list: Vec<f64>,
    /// Power sweep: raw paired trials.  SINR distribution: trials where every
    /// scheme produced an optimal design (scanning as many draws as needed).
    pub trials: usize,
    pub out_dir: PathBuf,
    pub workers: usize,
    /// Emit a `# generated ...` header line in every CSV.
    pub timestamp: bool,
    /// SINR distribution only: also write the first kept trial's robust and
    /// non-robust designs as `design_<scheme>.csv`.
    pub dump_design: bool,
}

impl ExperimentConfig {
    /// The operating point the experiment suite is built around: 8 antennas,
    /// 3 users, 10 dB targets, error radius 0.06.
    pub fn baseline() -> Self {
        ExperimentConfig {
            scenario: Scenario::default_downlink(),
            schemes: Scheme::ALL.to_vec(),
            gamma_sweep_db: vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0],
            epsilon_list: vec![0.02, 0.06],
            trials: 200,
            out_dir: PathBuf::from("out"),
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            timestamp: true,
            dump_design: false,
        }
    }

    fn validate(&self) -> io::Result<()> {
        self.scenario
            .validate()
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
        for (name, ok) in [
            ("trials", self.trials >= 1),
            ("schemes", !self.schemes.is_empty()),
            ("gamma_sweep_db", !self.gamma_sweep_db.is_empty()),
            ("epsilon_list", !self.epsilon_list.is_empty()),
        ] {
            if !ok {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("config: {name} must be nonempty"),
                ));
            }
        }
        Ok(())
    }

    /// Design cells in output order.  Robust designs sweep the epsilon list;
    /// the non-robust design ignores uncertainty (radius 0); the orthogonal
    /// baseline is designed at the scenario radius.
    fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &scheme in &self.schemes {
            let radii: Vec<f64> = match scheme {
                Scheme::Robust => self.epsilon_list.clone(),
                Scheme::NonRobust => vec![0.0],
                Scheme::Oma => vec![self.scenario.epsilon[0]],
            };
            for &eps in &radii {
                for &gamma_db in &self.gamma_sweep_db {
                    cells.push(Cell { scheme, epsilon: eps, gamma_db });
                }
            }
        }
        cells
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Cell {
    scheme: Scheme,
    epsilon: f64,
    gamma_db: f64,
}

/// One solved cell of one trial; a row of the trial CSVs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub scheme: Scheme,
    /// Design-side error radius of the cell.
    pub epsilon: f64,
    pub gamma_db: f64,
    pub status: SolverStatus,
    /// Covariance power actually needed by the certified design (sum of Gram
    /// traces; for the orthogonal baseline, the time-shared average).
    pub total_power_linear: Option<f64>,
    pub total_power_db: Option<f64>,
    /// Minimum over decoding layers at the trial's true channels, in dB.
    pub min_achieved_sinr_db: Option<f64>,
    pub rank_ratio_max: Option<f64>,
    /// Extraction exceeded the rank-one tolerance; the covariance guarantee
    /// holds but the principal-eigenvector beams are not equivalent.
    pub rank_violation: Option<bool>,
    pub solve_iters: usize,
    /// Wall-clock time of the cell; kept out of the CSVs so output files are
    /// identical regardless of worker count.
    pub solve_ms: f64,
}

pub fn status_str(s: SolverStatus) -> &'static str {
    match s {
        SolverStatus::Optimal => "optimal",
        SolverStatus::Infeasible => "infeasible",
        SolverStatus::MaxIters => "max_iters",
        SolverStatus::NumericalFailure => "numerical_failure",
    }
}

/// Aggregates of one (scheme, epsilon, gamma) cell over its optimal trials.
#[derive(Clone, Debug)]
pub struct CellSummary {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub gamma_db: f64,
    pub trials: usize,
    pub optimal: usize,
    pub infeasible: usize,
    pub failed: usize,
    pub mean_power_linear: Option<f64>,
    pub median_power_linear: Option<f64>,
    /// Fraction of optimal trials with min achieved SINR below the target
    /// minus 0.05 dB.
    pub violation_fraction: Option<f64>,
}

/// Distribution of per-trial minimum achieved SINR for one cell.
#[derive(Clone, Debug)]
pub struct DistCell {
    pub scheme: Scheme,
    pub epsilon: f64,
    pub gamma_db: f64,
    pub cdf: Vec<(f64, f64)>,
    pub pdf: Vec<HistBin>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub mass: f64,
}

/// Everything a run produced: per-trial rows, per-cell aggregates, and (for
/// distribution runs) the empirical CDF/PDF per cell.
#[derive(Clone, Debug)]
pub struct SummaryStats {
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
    pub dist: Vec<DistCell>,
}

// ---------------------------------------------------------------------------
// Per-trial evaluation
// ---------------------------------------------------------------------------

struct TrialContext {
    inputs: DesignInputs,
    h_true: Vec<ComplexVector>,
}

fn trial_context(scenario: &Scenario, cs: &ChannelSet) -> TrialContext {
    TrialContext {
        inputs: DesignInputs::from_scenario(scenario, cs),
        h_true: apply_order(&cs.order, &cs.h_true),
    }
}

fn run_cell(ctx: &TrialContext, cell: &Cell, trial: u64, opts: &SolverOptions) -> TrialRecord {
    let kk = ctx.inputs.k;
    let gamma_lin = db_to_linear(cell.gamma_db);
    let mut inputs = ctx.inputs.clone();
    inputs.gamma = vec![gamma_lin; kk];

    let started = Instant::now();
    let (status, iters, power, min_db, rank_max) = match cell.scheme {
        Scheme::Robust | Scheme::NonRobust => {
            let design = if cell.scheme == Scheme::Robust {
                inputs.epsilon = vec![cell.epsilon; kk];
                design_robust(&inputs, opts)
            } else {
                design_nonrobust(&inputs, opts)
            };
            let detail = (design.status == SolverStatus::Optimal).then(|| {
                let power: f64 = design.grams.iter().map(|g| g.trace()).sum();
                let rep =
                    certify::achieved_sinr(&design.grams, &inputs.h_hat, &ctx.h_true, &inputs.noise_var);
                (power, linear_to_db(rep.min_sinr().max(1e-30)), design.max_rank_ratio())
            });
            (design.status, design.iterations, detail.map(|d| d.0), detail.map(|d| d.1), detail.map(|d| d.2))
        }
        Scheme::Oma => {
            let oma = design_oma(&inputs, opts);
            let detail = (oma.status == SolverStatus::Optimal).then(|| {
                let target_db = linear_to_db(oma_target(gamma_lin, kk));
                let mut min_db = f64::INFINITY;
                let mut rank_max = 0.0f64;
                for (u, d) in oma.per_user.iter().enumerate() {
                    let slot = certify::layer_sinr_at(
                        &d.grams,
                        &ctx.inputs.h_hat[u],
                        &ctx.h_true[u],
                        ctx.inputs.noise_var[u],
                        0,
                    );
                    // Rebase each slot onto the shared-access target scale so
                    // the distribution is comparable across schemes.
                    min_db = min_db.min(linear_to_db(slot.max(1e-30)) - target_db + cell.gamma_db);
                    rank_max = rank_max.max(d.max_rank_ratio());
                }
                (oma.avg_power, min_db, rank_max)
            });
            (oma.status, oma.iterations, detail.map(|d| d.0), detail.map(|d| d.1), detail.map(|d| d.2))
        }
    };
    let solve_ms = started.elapsed().as_secs_f64() * 1e3;

    TrialRecord {
        trial_index: trial,
        scheme: cell.scheme,
        epsilon: cell.epsilon,
        gamma_db: cell.gamma_db,
        status,
        total_power_linear: power,
        total_power_db: power.map(|p| linear_to_db(p.max(1e-30))),
        min_achieved_sinr_db: min_db,
        rank_ratio_max: rank_max,
        rank_violation: rank_max.map(|r| r > DEFAULT_RANK_TOL),
        solve_iters: iters,
        solve_ms,
    }
}

fn run_trial(cfg: &ExperimentConfig, cells: &[Cell], trial: u64) -> Vec<TrialRecord> {
    let cs = channel::generate_channels(&cfg.scenario, trial);
    let ctx = trial_context(&cfg.scenario, &cs);
    let opts = SolverOptions::default();
    cells.iter().map(|cell| run_cell(&ctx, cell, trial, &opts)).collect()
}

/// Like [`run_trial`] but gives up at the first non-optimal cell, since the
/// distribution run discards partially-feasible trials anyway.  Most draws
/// die on the robust cell's feasibility prescreen without any solve.
fn run_trial_screened(cfg: &ExperimentConfig, cells: &[Cell], trial: u64) -> Option<Vec<TrialRecord>> {
    let cs = channel::generate_channels(&cfg.scenario, trial);
    let ctx = trial_context(&cfg.scenario, &cs);
    let opts = SolverOptions::default();
    let mut recs = Vec::with_capacity(cells.len());
    for cell in cells {
        let r = run_cell(&ctx, cell, trial, &opts);
        if r.status != SolverStatus::Optimal {
            return None;
        }
        recs.push(r);
    }
    Some(recs)
}

fn sort_records(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        a.trial_index
            .cmp(&b.trial_index)
            .then(a.scheme.ordinal().cmp(&b.scheme.ordinal()))
            .then(a.epsilon.total_cmp(&b.epsilon))
            .then(a.gamma_db.total_cmp(&b.gamma_db))
    });
}

fn thread_pool(workers: usize) -> io::Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| io::Error::new(io::ErrorKind::Other, e.to_string()))
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Right-continuous empirical CDF at the sorted unique values.
pub fn empirical_cdf(values: &[f64]) -> Vec<(f64, f64)> {
    assert!(!values.is_empty(), "empirical_cdf of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut knots: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in sorted.iter().enumerate() {
        let p = (i + 1) as f64 / n;
        match knots.last_mut() {
            Some(last) if last.0 == v => last.1 = p,
            _ => knots.push((v, p)),
        }
    }
    knots
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Histogram with Freedman-Diaconis bin width, floored at `floor_bins` bins.
/// Masses sum to one; a constant sample collapses to a single unit bin.
pub fn histogram(values: &[f64], floor_bins: usize) -> Vec<HistBin> {
    assert!(!values.is_empty(), "histogram of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if hi == lo {
        return vec![HistBin { lo: lo - 0.5, hi: lo + 0.5, mass: 1.0 }];
    }
    let n = sorted.len();
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let fd_width = 2.0 * iqr / (n as f64).cbrt();
    let fd_bins = if fd_width > 0.0 { ((hi - lo) / fd_width).ceil() as usize } else { 0 };
    let bins = fd_bins.max(floor_bins).min(4096);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .iter()
        .enumerate()
        .map(|(i, &c)| HistBin {
            lo: lo + i as f64 * width,
            hi: lo + (i + 1) as f64 * width,
            mass: c as f64 / n as f64,
        })
        .collect()
}

fn summarize(records: &[TrialRecord], cells: &[Cell]) -> Vec<CellSummary> {
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let rows: Vec<&TrialRecord> = records
            .iter()
            .filter(|r| {
                r.scheme == cell.scheme && r.epsilon == cell.epsilon && r.gamma_db == cell.gamma_db
            })
            .collect();
        let mut powers: Vec<f64> =
            rows.iter().filter_map(|r| r.total_power_linear).collect();
        powers.sort_by(f64::total_cmp);
        let optimal = powers.len();
        let infeasible =
            rows.iter().filter(|r| r.status == SolverStatus::Infeasible).count();
        let failed = rows.len() - optimal - infeasible;
        let violations = rows
            .iter()
            .filter_map(|r| r.min_achieved_sinr_db)
            .filter(|&db| db < cell.gamma_db - 0.05)
            .count();
        out.push(CellSummary {
            scheme: cell.scheme,
            epsilon: cell.epsilon,
            gamma_db: cell.gamma_db,
            trials: rows.len(),
            optimal,
            infeasible,
            failed,
            mean_power_linear: (optimal > 0)
                .then(|| powers.iter().sum::<f64>() / optimal as f64),
            median_power_linear: (optimal > 0).then(|| quantile(&powers, 0.5)),
            violation_fraction: (optimal > 0).then(|| violations as f64 / optimal as f64),
        });
    }
    out
}

// ---------------------------------------------------------------------------
// CSV plumbing
// ---------------------------------------------------------------------------

/// 12 significant digits, `.` decimal separator.
fn csv_f(x: f64) -> String {
    format!("{x:.11e}")
}

fn csv_opt(x: Option<f64>) -> String {
    x.map(csv_f).unwrap_or_default()
}

const TRIAL_HEADER: &str = "trial_index,scheme,epsilon,gamma_db,status,total_power_linear,\
total_power_db,min_achieved_sinr_db,rank_ratio_max,rank_violation,solve_iters";

fn trial_row(r: &TrialRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        r.trial_index,
        r.scheme,
        csv_f(r.epsilon),
        csv_f(r.gamma_db),
        status_str(r.status),
        csv_opt(r.total_power_linear),
        csv_opt(r.total_power_db),
        csv_opt(r.min_achieved_sinr_db),
        csv_opt(r.rank_ratio_max),
        r.rank_violation.map(|v| if v { "1" } else { "0" }).unwrap_or(""),
        r.solve_iters,
    )
}

const SUMMARY_HEADER: &str = "scheme,epsilon,gamma_db,trials,optimal,infeasible,failed,\
mean_power_linear,mean_power_db,median_power_linear,violation_fraction";

fn summary_row(c: &CellSummary) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        c.scheme,
        csv_f(c.epsilon),
        csv_f(c.gamma_db),
        c.trials,
        c.optimal,
        c.infeasible,
        c.failed,
        csv_opt(c.mean_power_linear),
        csv_opt(c.mean_power_linear.map(|p| linear_to_db(p.max(1e-30)))),
        csv_opt(c.median_power_linear),
        csv_opt(c.violation_fraction),
    )
}

struct CsvWriter {
    path: PathBuf,
    timestamp: bool,
}

impl CsvWriter {
    /// Creates the file immediately so an unwritable directory fails before
    /// any solve.
    fn probe(dir: &Path, name: &str, timestamp: bool) -> io::Result<CsvWriter> {
        let path = dir.join(name);
        File::create(&path)?;
        Ok(CsvWriter { path, timestamp })
    }

    fn write(&self, header: &str, rows: impl Iterator<Item = String>) -> io::Result<()> {
        let mut f = io::BufWriter::new(File::create(&self.path)?);
        if self.timestamp {
            writeln!(f, "# generated {}", chrono::Utc::now().to_rfc3339())?;
        }
        writeln!(f, "{header}")?;
        for row in rows {
            writeln!(f, "{row}")?;
        }
        f.flush()
    }
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

/// Paired power sweep over all configured cells; writes `power_sweep.csv`
/// (one row per trial and cell) and `power_summary.csv`.
pub fn run_power_sweep(cfg: &ExperimentConfig) -> io::Result<SummaryStats> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let sweep_csv = CsvWriter::probe(&cfg.out_dir, "power_sweep.csv", cfg.timestamp)?;
    let summary_csv = CsvWriter::probe(&cfg.out_dir, "power_summary.csv", cfg.timestamp)?;

    let cells = cfg.cells();
    let pool = thread_pool(cfg.workers)?;
    let mut records: Vec<TrialRecord> = pool.install(|| {
        (0..cfg.trials as u64)
            .into_par_iter()
            .flat_map_iter(|t| run_trial(cfg, &cells, t))
            .collect()
    });
    sort_records(&mut records);
    let cells_summary = summarize(&records, &cells);

    sweep_csv.write(TRIAL_HEADER, records.iter().map(trial_row))?;
    summary_csv.write(SUMMARY_HEADER, cells_summary.iter().map(summary_row))?;
    Ok(SummaryStats { records, cells: cells_summary, dist: Vec::new() })
}

/// Minimum-SINR distribution over trials where every cell designed
/// successfully, scanning as many channel draws as needed to keep
/// `cfg.trials` of them.  Writes `sinr_trials.csv`, `sinr_cdf.csv`,
/// `sinr_pdf.csv`, and `sinr_summary.csv`.
pub fn run_sinr_distribution(cfg: &ExperimentConfig) -> io::Result<SummaryStats> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let trials_csv = CsvWriter::probe(&cfg.out_dir, "sinr_trials.csv", cfg.timestamp)?;
    let cdf_csv = CsvWriter::probe(&cfg.out_dir, "sinr_cdf.csv", cfg.timestamp)?;
    let pdf_csv = CsvWriter::probe(&cfg.out_dir, "sinr_pdf.csv", cfg.timestamp)?;
    let summary_csv = CsvWriter::probe(&cfg.out_dir, "sinr_summary.csv", cfg.timestamp)?;

    let cells = cfg.cells();
    let pool = thread_pool(cfg.workers)?;
    let batch = (cfg.workers * 16).max(64) as u64;
    let max_draws = (cfg.trials as u64).saturating_mul(500).max(1000);

    let mut kept: Vec<u64> = Vec::with_capacity(cfg.trials);
    let mut records: Vec<TrialRecord> = Vec::new();
    let mut next = 0u64;
    while kept.len() < cfg.trials && next < max_draws {
        let hi = (next + batch).min(max_draws);
        let mut chunk: Vec<(u64, Option<Vec<TrialRecord>>)> = pool.install(|| {
            (next..hi)
                .into_par_iter()
                .map(|t| (t, run_trial_screened(cfg, &cells, t)))
                .collect()
        });
        chunk.sort_by_key(|(t, _)| *t);
        for (t, recs) in chunk {
            if kept.len() >= cfg.trials {
                break;
            }
            if let Some(recs) = recs {
                kept.push(t);
                records.extend(recs);
            }
        }
        next = hi;
    }
    if kept.len() < cfg.trials {
        return Err(io::Error::new(
            io::ErrorKind::Other,
            format!(
                "collected only {} of {} fully-feasible trials in {} draws",
                kept.len(),
                cfg.trials,
                next
            ),
        ));
    }
    sort_records(&mut records);
    let cells_summary = summarize(&records, &cells);

    let mut dist = Vec::with_capacity(cells.len());
    for cell in &cells {
        let values: Vec<f64> = records
            .iter()
            .filter(|r| {
                r.scheme == cell.scheme && r.epsilon == cell.epsilon && r.gamma_db == cell.gamma_db
            })
            .filter_map(|r| r.min_achieved_sinr_db)
            .collect();
        dist.push(DistCell {
            scheme: cell.scheme,
            epsilon: cell.epsilon,
            gamma_db: cell.gamma_db,
            cdf: empirical_cdf(&values),
            pdf: histogram(&values, 20),
        });
    }

    trials_csv.write(TRIAL_HEADER, records.iter().map(trial_row))?;
    cdf_csv.write(
        "scheme,epsilon,gamma_db,min_achieved_sinr_db,cdf",
        dist.iter().flat_map(|d| {
            d.cdf.iter().map(move |&(v, p)| {
                format!("{},{},{},{},{}", d.scheme, csv_f(d.epsilon), csv_f(d.gamma_db), csv_f(v), csv_f(p))
            })
        }),
    )?;
    pdf_csv.write(
        "scheme,epsilon,gamma_db,bin_lo_db,bin_hi_db,mass,density",
        dist.iter().flat_map(|d| {
            d.pdf.iter().map(move |b| {
                format!(
                    "{},{},{},{},{},{},{}",
                    d.scheme,
                    csv_f(d.epsilon),
                    csv_f(d.gamma_db),
                    csv_f(b.lo),
                    csv_f(b.hi),
                    csv_f(b.mass),
                    csv_f(b.mass / (b.hi - b.lo)),
                )
            })
        }),
    )?;
    summary_csv.write(SUMMARY_HEADER, cells_summary.iter().map(summary_row))?;

    if cfg.dump_design {
        dump_first_designs(cfg, &cells, kept[0])?;
    }
    Ok(SummaryStats { records, cells: cells_summary, dist })
}

/// Re-solves the first kept trial and writes one design file per scheme (the
/// first cell of each; the orthogonal baseline has no joint design to dump).
fn dump_first_designs(cfg: &ExperimentConfig, cells: &[Cell], trial: u64) -> io::Result<()> {
    let cs = channel::generate_channels(&cfg.scenario, trial);
    let ctx = trial_context(&cfg.scenario, &cs);
    let opts = SolverOptions::default();
    for scheme in [Scheme::Robust, Scheme::NonRobust] {
        let Some(cell) = cells.iter().find(|c| c.scheme == scheme) else { continue };
        let kk = ctx.inputs.k;
        let mut inputs = ctx.inputs.clone();
        inputs.gamma = vec![db_to_linear(cell.gamma_db); kk];
        let design = match scheme {
            Scheme::Robust => {
                inputs.epsilon = vec![cell.epsilon; kk];
                design_robust(&inputs, &opts)
            }
            _ => {
                inputs.epsilon = vec![0.0; kk];
                design_nonrobust(&inputs, &opts)
            }
        };
        let path = cfg.out_dir.join(format!("design_{scheme}.csv"));
        write_design_csv(&path, &inputs, &design, cfg.timestamp)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Design files
// ---------------------------------------------------------------------------

/// A design round-tripped through CSV: extracted beams plus the inputs
/// needed to re-certify them.
#[derive(Clone, Debug)]
pub struct StoredDesign {
    pub w: Vec<ComplexVector>,
    pub h_hat: Vec<ComplexVector>,
    pub gamma: Vec<f64>,
    pub noise_var: Vec<f64>,
    pub epsilon: Vec<f64>,
}

const DESIGN_HEADER: &str = "field,user,antenna,re,im";

/// Writes beams and design inputs as `field,user,antenna,re,im` rows; scalar
/// fields leave the antenna column empty and use only `re`.
pub fn write_design_csv(
    path: &Path,
    inputs: &DesignInputs,
    design: &BeamDesign,
    timestamp: bool,
) -> io::Result<()> {
    let mut f = io::BufWriter::new(File::create(path)?);
    if timestamp {
        writeln!(f, "# generated {}", chrono::Utc::now().to_rfc3339())?;
    }
    writeln!(f, "{DESIGN_HEADER}")?;
    for (name, vecs) in [("w", &design.w), ("h_hat", &inputs.h_hat)] {
        for (u, v) in vecs.iter().enumerate() {
            for a in 0..v.dim() {
                writeln!(f, "{name},{u},{a},{},{}", csv_f(v[a].re), csv_f(v[a].im))?;
            }
        }
    }
    for (name, vals) in [
        ("gamma", &inputs.gamma),
        ("noise_var", &inputs.noise_var),
        ("epsilon", &inputs.epsilon),
    ] {
        for (u, &x) in vals.iter().enumerate() {
            writeln!(f, "{name},{u},,{},", csv_f(x))?;
        }
    }
    f.flush()
}

pub fn read_design_csv(path: &Path) -> io::Result<StoredDesign> {
    let text = fs::read_to_string(path)?;
    let bad = |line: usize, why: String| {
        io::Error::new(io::ErrorKind::InvalidData, format!("{}:{line}: {why}", path.display()))
    };
    let mut vec_fields: std::collections::HashMap<&str, Vec<(usize, usize, f64, f64)>> =
        Default::default();
    let mut scalar_fields: std::collections::HashMap<&str, Vec<(usize, f64)>> = Default::default();
    let mut saw_header = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != DESIGN_HEADER {
                return Err(bad(idx + 1, format!("expected header `{DESIGN_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(bad(idx + 1, format!("expected 5 fields, got {}", parts.len())));
        }
        let user: usize =
            parts[1].parse().map_err(|_| bad(idx + 1, format!("bad user `{}`", parts[1])))?;
        let re: f64 =
            parts[3].parse().map_err(|_| bad(idx + 1, format!("bad value `{}`", parts[3])))?;
        match parts[0] {
            name @ ("w" | "h_hat") => {
                let antenna: usize = parts[2]
                    .parse()
                    .map_err(|_| bad(idx + 1, format!("bad antenna `{}`", parts[2])))?;
                let im: f64 = parts[4]
                    .parse()
                    .map_err(|_| bad(idx + 1, format!("bad value `{}`", parts[4])))?;
                let key = if name == "w" { "w" } else { "h_hat" };
                vec_fields.entry(key).or_default().push((user, antenna, re, im));
            }
            name @ ("gamma" | "noise_var" | "epsilon") => {
                let key = match name {
                    "gamma" => "gamma",
                    "noise_var" => "noise_var",
                    _ => "epsilon",
                };
                scalar_fields.entry(key).or_default().push((user, re));
            }
            other => return Err(bad(idx + 1, format!("unknown field `{other}`"))),
        }
    }
    let gather_vec = |name: &str| -> io::Result<Vec<ComplexVector>> {
        let mut rows = vec_fields.get(name).cloned().unwrap_or_default();
        if rows.is_empty() {
            return Err(bad(0, format!("missing `{name}` rows")));
        }
        rows.sort_by_key(|&(u, a, ..)| (u, a));
        let users = rows.iter().map(|&(u, ..)| u).max().unwrap() + 1;
        let dim = rows.iter().map(|&(_, a, ..)| a).max().unwrap() + 1;
        if rows.len() != users * dim {
            return Err(bad(0, format!("`{name}` rows do not form a full {users}x{dim} grid")));
        }
        Ok((0..users)
            .map(|u| {
                ComplexVector::new(
                    rows[u * dim..(u + 1) * dim]
                        .iter()
                        .map(|&(.., re, im)| num_complex::Complex64::new(re, im))
                        .collect(),
                )
            })
            .collect())
    };
    let w = gather_vec("w")?;
    let h_hat = gather_vec("h_hat")?;
    let k = w.len();
    let gather_scalar = |name: &str| -> io::Result<Vec<f64>> {
        let mut rows = scalar_fields.get(name).cloned().unwrap_or_default();
        rows.sort_by_key(|&(u, _)| u);
        if rows.len() != k || rows.iter().enumerate().any(|(i, &(u, _))| i != u) {
            return Err(bad(0, format!("`{name}` needs one row per user 0..{k}")));
        }
        Ok(rows.into_iter().map(|(_, x)| x).collect())
    };
    Ok(StoredDesign {
        w,
        h_hat,
        gamma: gather_scalar("gamma")?,
        noise_var: gather_scalar("noise_var")?,
        epsilon: gather_scalar("epsilon")?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_matches_hand_examples() {
        let knots = empirical_cdf(&[3.0, 1.0, 2.0]);
        assert_eq!(knots, vec![(1.0, 1.0 / 3.0), (2.0, 2.0 / 3.0), (3.0, 1.0)]);
        assert_eq!(empirical_cdf(&[5.0, 5.0, 5.0]), vec![(5.0, 1.0)]);
    }

    #[test]
    fn cdf_of_uniform_draws_tracks_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let dev = empirical_cdf(&draws)
            .iter()
            .map(|&(v, p)| (p - v).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 0.02, "Kolmogorov deviation {dev}");
    }

    #[test]
    fn histogram_mass_is_normalized_and_floored() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<f64> = (0..500).map(|_| rng.gen_range(-2.0..5.0)).collect();
        let bins = histogram(&draws, 20);
        assert!(bins.len() >= 20);
        let mass: f64 = bins.iter().map(|b| b.mass).sum();
        assert!((mass - 1.0).abs() < 1e-9);
        assert!(bins.windows(2).all(|w| (w[0].hi - w[1].lo).abs() < 1e-12));
        assert_eq!(histogram(&[2.5; 9], 20).len(), 1);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.to_string().parse::<Scheme>().unwrap(), s);
        }
        assert!("ofdma".parse::<Scheme>().is_err());
    }

    fn tiny_config(dir: &Path, workers: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::baseline();
        cfg.scenario = Scenario::uniform(2, 1, 0.05, 2.0, 0.1);
        cfg.gamma_sweep_db = vec![0.0, 3.0];
        cfg.epsilon_list = vec![0.05];
        cfg.trials = 4;
        cfg.out_dir = dir.to_path_buf();
        cfg.workers = workers;
        cfg.timestamp = false;
        cfg
    }

    fn strip_timing(records: &[TrialRecord]) -> Vec<TrialRecord> {
        records.iter().cloned().map(|mut r| { r.solve_ms = 0.0; r }).collect()
    }

    #[test]
    fn sweep_is_worker_count_invariant_and_paired() {
        let dir = tempfile::tempdir().unwrap();
        let a = run_power_sweep(&tiny_config(&dir.path().join("a"), 1)).unwrap();
        let b = run_power_sweep(&tiny_config(&dir.path().join("b"), 3)).unwrap();
        assert_eq!(strip_timing(&a.records), strip_timing(&b.records));
        assert_eq!(a.records.len(), 4 * 2 * 3);

        // Single-user cell: robust needs at least the non-robust power.
        for t in 0..4u64 {
            for &g in &[0.0, 3.0] {
                let pick = |scheme: Scheme| {
                    a.records
                        .iter()
                        .find(|r| r.trial_index == t && r.scheme == scheme && r.gamma_db == g)
                        .and_then(|r| r.total_power_linear)
                };
                if let (Some(rob), Some(nom)) = (pick(Scheme::Robust), pick(Scheme::NonRobust)) {
                    assert!(rob >= nom * (1.0 - 1e-9), "trial {t} gamma {g}: {rob} < {nom}");
                }
            }
        }

        let sweep = fs::read_to_string(dir.path().join("a/power_sweep.csv")).unwrap();
        assert!(sweep.starts_with(TRIAL_HEADER));
        assert_eq!(sweep.lines().count(), 1 + a.records.len());
        assert!(!sweep.contains('\r'));
    }

    #[test]
    fn distribution_run_collects_feasible_trials() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path(), 2);
        cfg.gamma_sweep_db = vec![3.0];
        cfg.trials = 6;
        cfg.dump_design = true;
        let stats = run_sinr_distribution(&cfg).unwrap();
        let kept: std::collections::BTreeSet<u64> =
            stats.records.iter().map(|r| r.trial_index).collect();
        assert_eq!(kept.len(), 6);
        assert!(stats.records.iter().all(|r| r.status == SolverStatus::Optimal));
        for d in &stats.dist {
            assert_eq!(d.cdf.last().map(|&(_, p)| p), Some(1.0));
            let mass: f64 = d.pdf.iter().map(|b| b.mass).sum();
            assert!((mass - 1.0).abs() < 1e-9);
        }
        assert!(dir.path().join("sinr_cdf.csv").exists());
        assert!(dir.path().join("design_robust.csv").exists());

        // Robust designs evaluated inside their own ball never miss the
        // target by more than the reporting tolerance.
        for r in stats.records.iter().filter(|r| r.scheme == Scheme::Robust) {
            let min_db = r.min_achieved_sinr_db.unwrap();
            assert!(min_db >= r.gamma_db - 0.05, "trial {}: {min_db}", r.trial_index);
        }
    }

    #[test]
    fn design_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let scen = Scenario::uniform(3, 2, 0.04, 1.5, 0.05);
        let cs = channel::generate_channels(&scen, 2);
        let inputs = DesignInputs::from_scenario(&scen, &cs);
        let design = BeamDesign {
            w: inputs.h_hat.clone(),
            grams: inputs.h_hat.iter().map(crate::hermitian::HermitianMatrix::outer).collect(),
            lambda: vec![],
            total_power: 1.0,
            rank_ratio: vec![0.0; 2],
            status: SolverStatus::Optimal,
            iterations: 0,
            gap: 0.0,
        };
        let path = dir.path().join("design.csv");
        write_design_csv(&path, &inputs, &design, true).unwrap();
        let back = read_design_csv(&path).unwrap();
        assert_eq!(back.w.len(), 2);
        // The file stores 12 significant digits, so round-tripping is exact
        // only to that precision.
        for (a, b) in back.h_hat.iter().zip(inputs.h_hat.iter()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).norm() <= 1e-11 * y.norm().max(1.0));
            }
        }
        assert_eq!(back.gamma, inputs.gamma);
        assert_eq!(back.epsilon, inputs.epsilon);
        assert!(read_design_csv(&dir.path().join("missing.csv")).is_err());
    }
}
