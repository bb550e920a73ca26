//! `simulate`: synthetic dataset generation.

use std::fs;

use coxmeta_core::pointgen::{simulate_lgcp_dataset, simulate_region_mixture};
use log::info;

use crate::config::SimSpec;
use crate::errors::{CliError, Result};
use crate::io::{self, DrawScalars};
use crate::SimulateArgs;

pub fn run(args: SimulateArgs) -> Result<()> {
    let grid = io::load_grid(&args.grid, &args.mask)?;
    let mut spec: SimSpec = io::read_json(&args.config)?;
    if let Some(seed) = args.seed {
        match &mut spec {
            SimSpec::Lgcp(c) => c.seed = seed,
            SimSpec::RegionMixture(c) => c.seed = seed,
        }
    }
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io { path: args.out.clone(), source: e })?;

    let (data, world) = match &spec {
        SimSpec::Lgcp(cfg) => {
            let sim = simulate_lgcp_dataset(&grid, cfg)?;
            let truth = DrawScalars {
                mu: sim.truth.mu.clone(),
                sigma: sim.truth.sigma.clone(),
                rho_scaled: sim.truth.rho_scaled.clone(),
                beta: sim.truth.beta.clone(),
            };
            io::write_json(&args.out.join("truth.json"), &truth)?;
            (sim.data, sim.foci_world)
        }
        SimSpec::RegionMixture(cfg) => simulate_region_mixture(&grid, cfg)?,
    };

    let n_cov = data.studies()[0].z.len() - 1;
    let names: Vec<String> = (1..=n_cov).map(|k| format!("z{k}")).collect();
    io::write_grid(&args.out, &grid)?;
    io::write_foci(&args.out.join("foci.csv"), data.studies(), &world)?;
    io::write_covariates(&args.out.join("covariates.csv"), &names, data.studies())?;
    io::write_json(&args.out.join("sim_config.json"), &spec)?;

    let total: usize = world.iter().map(Vec::len).sum();
    info!(
        "wrote {} studies with {} foci to {}",
        data.studies().len(),
        total,
        args.out.display()
    );
    Ok(())
}
