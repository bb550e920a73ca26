//! Command-line front end for multi-study point-pattern regression.
//!
//! `simulate` writes a synthetic dataset, `fit` runs the sampler and stores
//! a self-contained draws directory, and `summarize`, `diff`, and `ppc`
//! consume that directory to produce posterior maps, regional contrasts,
//! and predictive checks.

mod config;
mod diff;
mod errors;
mod fit;
mod io;
mod ppc;
mod simulate;
mod summarize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use crate::errors::Result;

#[derive(Parser)]
#[command(name = "coxmeta", version, about = "Bayesian spatial regression for multi-study 3D point patterns")]
struct Cli {
    /// Size of the worker thread pool (default: all cores). Results do not
    /// depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-study dataset on a voxel grid.
    Simulate(SimulateArgs),
    /// Fit the model by Hamiltonian Monte Carlo and store the draws.
    Fit(FitArgs),
    /// Turn stored draws into posterior intensity maps and scalar tables.
    Summarize(SummarizeArgs),
    /// Contrast expected counts between two covariate profiles by region.
    Diff(DiffArgs),
    /// Posterior predictive checks on counts and pairwise distances.
    Ppc(PpcArgs),
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Grid header JSON.
    #[arg(long)]
    grid: PathBuf,
    /// Mask volume, one byte per voxel, x-fastest.
    #[arg(long)]
    mask: PathBuf,
    /// Generator configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the dataset.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Grid header JSON.
    #[arg(long)]
    grid: PathBuf,
    /// Mask volume, one byte per voxel, x-fastest.
    #[arg(long)]
    mask: PathBuf,
    /// Foci CSV: study_id,x,y,z in mm.
    #[arg(long)]
    foci: PathBuf,
    /// Covariates CSV: study_id plus one column per covariate. Without it
    /// every study carries only the intercept.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Run configuration JSON (k_star, priors, sampler settings).
    #[arg(long)]
    config: PathBuf,
    /// Output draws directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the sampler seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Drop foci outside the grid or mask instead of failing.
    #[arg(long)]
    drop_outside_mask: bool,
}

#[derive(Args)]
pub struct SummarizeArgs {
    /// Draws directory produced by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Covariate values after the intercept, comma-separated; empty for an
    /// intercept-only model.
    #[arg(long, default_value = "")]
    profile: String,
    /// Quantile probabilities, comma-separated.
    #[arg(long, default_value = "0.025,0.5,0.975")]
    probs: String,
    /// Also write a voxelwise posterior probability that intensity exceeds
    /// this threshold (per mm^3).
    #[arg(long)]
    threshold: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct DiffArgs {
    /// Draws directory produced by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// First covariate profile (values after the intercept).
    #[arg(long)]
    profile_a: String,
    /// Second covariate profile.
    #[arg(long)]
    profile_b: String,
    /// Regions JSON: named voxel sets to contrast over.
    #[arg(long)]
    regions: PathBuf,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
pub struct PpcArgs {
    /// Draws directory produced by `fit`.
    #[arg(long)]
    draws: PathBuf,
    /// Regions JSON for the count check.
    #[arg(long)]
    regions: PathBuf,
    /// Largest pairwise distance (mm) for the second-order check.
    #[arg(long, default_value_t = 200.0)]
    d_max: f64,
    /// Distance step (mm).
    #[arg(long, default_value_t = 2.0)]
    d_step: f64,
    /// Seed for replicate patterns.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output report JSON.
    #[arg(long)]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| errors::CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(args) => simulate::run(args),
        Command::Fit(args) => fit::run(args),
        Command::Summarize(args) => summarize::run(args),
        Command::Diff(args) => diff::run(args),
        Command::Ppc(args) => ppc::run(args),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(errors::exit_code(&e) as u8)
        }
    }
}
