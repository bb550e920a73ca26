//! `fit`: run the sampler and store a draws directory.

use coxmeta_core::model::Model;
use coxmeta_core::sampler::run_chain;
use log::info;

use crate::config::RunConfig;
use crate::errors::Result;
use crate::io;
use crate::FitArgs;

pub fn run(args: FitArgs) -> Result<()> {
    let grid = io::load_grid(&args.grid, &args.mask)?;
    let cfg: RunConfig = io::read_json(&args.config)?;
    let mut sampler = cfg.sampler.clone();
    if let Some(seed) = args.seed {
        sampler.seed = seed;
    }

    let foci = io::read_foci(&args.foci)?;
    let covariates = args.covariates.as_deref().map(io::read_covariates).transpose()?;
    let (data, world, names) =
        io::assemble_studies(&grid, foci, covariates, cfg.k_star, args.drop_outside_mask)?;
    info!(
        "{} studies, {} foci, {} covariates, {} spatial fields on a {}x{}x{} grid ({} masked voxels)",
        data.studies().len(),
        world.iter().map(Vec::len).sum::<usize>(),
        names.len(),
        cfg.k_star + 1,
        grid.dims()[0],
        grid.dims()[1],
        grid.dims()[2],
        grid.n_masked(),
    );

    let model = Model::new(grid, data, cfg.priors)?;
    let mut init = model.default_init();
    if let Some(r) = cfg.init_rho_scaled {
        init.rho_scaled.iter_mut().for_each(|x| *x = r);
    }

    let chain = run_chain(&model, &init, &sampler)?;
    info!(
        "chain finished: accept rate {:.3}, {} divergent, step size {:.3e}, {} stored draws",
        chain.meta.accept_rate,
        chain.meta.n_divergent,
        chain.meta.eps_final,
        chain.draws.len(),
    );

    io::write_draws(&args.out, model.grid(), model.data(), &world, &names, cfg.priors, &chain)?;
    info!("wrote draws to {}", args.out.display());
    Ok(())
}
