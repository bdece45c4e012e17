//! Command-line front end: Monte-Carlo experiment runs and stand-alone
//! certification of stored designs.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use noma_robust_core::certify;
use noma_robust_core::config::load_config;
use noma_robust_core::experiment::{
    read_design_csv, run_power_sweep, run_sinr_distribution, ExperimentConfig, SummaryStats,
};
use noma_robust_core::hermitian::HermitianMatrix;
use noma_robust_core::units::linear_to_db;

#[derive(Parser)]
#[command(name = "noma-robust", version, about = "Robust NOMA downlink beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Paired power sweep over schemes and SINR targets; writes
    /// power_sweep.csv and power_summary.csv.
    Sweep(RunArgs),
    /// Minimum-SINR distribution over trials where every scheme is feasible;
    /// writes sinr_trials.csv, sinr_cdf.csv, sinr_pdf.csv, sinr_summary.csv.
    SinrDist {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the first kept trial's designs as design_<scheme>.csv.
        #[arg(long)]
        dump_design: bool,
    },
    /// Certify the worst-case SINR of a stored design over the error ball.
    Certify {
        /// Design file written by `sinr-dist --dump-design`.
        #[arg(long)]
        design: PathBuf,
        /// Error-ball radius for every user (default: the radii stored in
        /// the design file).
        #[arg(long)]
        epsilon: Option<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Plain-text `key = value` experiment description (default: the
    /// built-in 8-antenna 3-user baseline).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the trial count.
    #[arg(long)]
    trials: Option<usize>,
    /// Override the channel seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (default: out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Omit the `# generated ...` header line from CSV files.
    #[arg(long)]
    no_timestamp: bool,
}

impl RunArgs {
    fn resolve(&self, dump_design: bool) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).with_context(|| format!("reading {}", path.display()))?,
            None => ExperimentConfig::baseline(),
        };
        if let Some(t) = self.trials {
            cfg.trials = t;
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        cfg.timestamp = !self.no_timestamp;
        cfg.dump_design = dump_design;
        Ok(cfg)
    }
}

fn print_summary(stats: &SummaryStats, cfg: &ExperimentConfig, secs: f64) {
    println!(
        "{:>10} {:>8} {:>9} {:>13} {:>14} {:>10}",
        "scheme", "epsilon", "gamma_db", "optimal", "mean_power_db", "violations"
    );
    for c in &stats.cells {
        let power = c
            .mean_power_linear
            .map(|p| format!("{:.3}", linear_to_db(p.max(1e-30))))
            .unwrap_or_else(|| "-".into());
        let viol = c
            .violation_fraction
            .map(|v| format!("{:.1}%", 100.0 * v))
            .unwrap_or_else(|| "-".into());
        println!(
            "{:>10} {:>8.3} {:>9.1} {:>7}/{:<5} {:>14} {:>10}",
            c.scheme.to_string(),
            c.epsilon,
            c.gamma_db,
            c.optimal,
            c.trials,
            power,
            viol
        );
    }
    println!(
        "{} rows -> {} ({secs:.1}s)",
        stats.records.len(),
        cfg.out_dir.display()
    );
}

fn run(args: &RunArgs, dist: bool, dump_design: bool) -> Result<()> {
    let cfg = args.resolve(dump_design)?;
    let started = Instant::now();
    let stats = if dist {
        run_sinr_distribution(&cfg).context("sinr distribution run failed")?
    } else {
        run_power_sweep(&cfg).context("power sweep failed")?
    };
    print_summary(&stats, &cfg, started.elapsed().as_secs_f64());
    Ok(())
}

/// Exit 0 if every layer's certified worst case meets its target, 2 if any
/// layer misses it.
fn certify_cmd(design_path: &PathBuf, epsilon: Option<f64>) -> Result<ExitCode> {
    let stored = read_design_csv(design_path)
        .with_context(|| format!("reading {}", design_path.display()))?;
    let k = stored.w.len();
    if stored.h_hat.len() != k || stored.gamma.len() != k {
        bail!("design file is inconsistent: {} beams, {} channels", k, stored.h_hat.len());
    }
    let radii: Vec<f64> = match epsilon {
        Some(e) if e < 0.0 => bail!("--epsilon must be nonnegative"),
        Some(e) => vec![e; k],
        None => stored.epsilon.clone(),
    };
    let grams: Vec<HermitianMatrix> =
        stored.w.iter().map(HermitianMatrix::outer).collect();
    let power: f64 = grams.iter().map(|g| g.trace()).sum();
    let report = certify::certify_design(&grams, &stored.h_hat, &radii, &stored.noise_var);

    println!("design: {} users, {} antennas, power {:.6} ({:.3} dB)",
        k, stored.h_hat[0].dim(), power, linear_to_db(power.max(1e-30)));
    println!(
        "{:>4} {:>4} {:>16} {:>12} {:>10}",
        "msg", "rx", "worst_sinr_db", "target_db", "margin_db"
    );
    let mut ok = true;
    for layer in &report.layers {
        let target_db = linear_to_db(stored.gamma[layer.msg]);
        let worst_db = linear_to_db(layer.sinr.max(1e-30));
        let margin = worst_db - target_db;
        ok &= margin >= -1e-6;
        println!(
            "{:>4} {:>4} {:>16.6} {:>12.6} {:>+10.6}",
            layer.msg, layer.rx, worst_db, target_db, margin
        );
    }
    println!("verdict: {}", if ok { "PASS" } else { "FAIL" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Sweep(args) => run(args, false, false).map(|()| ExitCode::SUCCESS),
        Command::SinrDist { run: args, dump_design } => {
            run(args, true, *dump_design).map(|()| ExitCode::SUCCESS)
        }
        Command::Certify { design, epsilon } => certify_cmd(design, *epsilon),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
