//! Command-line driver for the stochastic-transport experiment suite.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use stlab::experiments::{self, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "stlab",
    about = "Stochastic transport equations by characteristics: solvers and experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON experiment configuration (fields mirror ExperimentConfig).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Number of Monte Carlo paths override.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Suppress the summary line.
    #[arg(long, global = true)]
    quiet: bool,

    /// Also dump the Brownian paths as CSV (solve only).
    #[arg(long, global = true)]
    dump_paths: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the scenario on every path and dump solution fields.
    Solve,
    /// Mollified-flow convergence table.
    Converge,
    /// Commutator decay along the flow with the calibrated lemma bound.
    Commutator,
    /// Uniqueness distances between the two mollifier families.
    Unique,
    /// Regularization-by-noise separation table.
    NoiseDemo,
    /// Cross-check against the semi-Lagrangian oracle on a resolution ladder.
    OracleCompare,
    /// Weak-form residual report for an emitted solution series.
    Weakcheck,
}

/// Subcommand-appropriate defaults, used when no config file is given.
fn default_config(cmd: Command) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    match cmd {
        Command::Solve => {}
        Command::Converge => {
            cfg.scenario = "holder".into();
            cfg.steps = 256;
            cfg.cell_width = 1.0 / 16.0;
            cfg.paths = 8;
        }
        Command::Commutator => {
            cfg.scenario = "holder".into();
            cfg.steps = 64;
            cfg.cell_width = 1.0 / 32.0;
            cfg.paths = 1;
        }
        Command::Unique => {
            cfg.scenario = "holder".into();
            cfg.steps = 64;
            cfg.cell_width = 1.0 / 32.0;
        }
        Command::NoiseDemo => {
            cfg.scenario = "holder".into();
            cfg.steps = 1024;
            cfg.paths = 100;
        }
        Command::OracleCompare => {
            cfg.scenario = "holder".into();
            cfg.reaction = Some("sine".into());
            cfg.datum = Some("bump".into());
            cfg.steps = 256;
            cfg.cell_width = 1.0 / 64.0;
        }
        Command::Weakcheck => {
            cfg.scenario = "smooth-sine".into();
            cfg.steps = 512;
        }
    }
    cfg
}

fn run(cli: &Cli) -> stlab::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => default_config(cli.command),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(paths) = cli.paths {
        cfg.paths = paths;
    }
    if cli.dump_paths {
        cfg.dump_paths = true;
    }
    cfg.validate()?;

    let say = |msg: String| {
        if !cli.quiet {
            println!("{msg}");
        }
    };
    match cli.command {
        Command::Solve => {
            let out = experiments::run_scenario(&cfg)?;
            say(format!(
                "solve: {} files; int_K |u| = {:.6e} +- {:.1e}; bump pairing = {:.6e} +- {:.1e}",
                out.files.len(),
                out.abs_mean,
                out.abs_se,
                out.pairing_mean,
                out.pairing_se
            ));
        }
        Command::Converge => {
            let rows = experiments::run_convergence(&cfg)?;
            for r in &rows {
                say(format!(
                    "converge: n = {} eps = {:.4e} flow = {:.4e} jacobian = {:.4e}",
                    r.n, r.epsilon, r.flow_error, r.jacobian_error
                ));
            }
        }
        Command::Commutator => {
            let rows = experiments::run_commutator_decay(&cfg)?;
            for r in &rows {
                say(format!(
                    "commutator: n = {} pairing = {:.4e} bound = {:.4e} ratio = {:.3}",
                    r.n, r.pairing_abs, r.lemma_rhs, r.ratio
                ));
            }
        }
        Command::Unique => {
            let rows = experiments::run_uniqueness(&cfg)?;
            for r in &rows {
                say(format!("unique: n = {} D = {:.4e}", r.n, r.distance));
            }
        }
        Command::NoiseDemo => {
            let rows = experiments::run_noise_demo(&cfg)?;
            for r in &rows {
                say(format!(
                    "noise-demo: delta = {:.0e} s_det = {:.4e} s_sto = {:.4e}",
                    r.delta, r.s_det, r.s_sto
                ));
            }
        }
        Command::OracleCompare => {
            let rows = experiments::run_oracle_compare(&cfg)?;
            for r in &rows {
                say(format!(
                    "oracle-compare: h = {:.4e} dt = {:.4e} L1 = {:.4e} order = {}",
                    r.h,
                    r.dt,
                    r.l1,
                    r.observed_order
                        .map(|o| format!("{o:.2}"))
                        .unwrap_or_else(|| "-".into())
                ));
            }
        }
        Command::Weakcheck => {
            let report = experiments::run_weakcheck(&cfg)?;
            say(format!(
                "weakcheck: normalized Ito residual at T = {:.4e} (Stratonovich {:.4e})",
                report.final_normalized_ito(),
                report.final_normalized_strat()
            ));
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
