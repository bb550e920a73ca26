//! `ppc`: posterior predictive checks against the fitted data.

use coxmeta_core::diagnostics::{l_diff_report, ppc_counts, LDiffReport, PpcCountReport};
use coxmeta_core::model::Model;
use log::info;
use serde::Serialize;

use crate::errors::{CliError, Result};
use crate::io;
use crate::PpcArgs;

#[derive(Serialize)]
struct PpcReport {
    counts: PpcCountReport,
    l_diff: LDiffReport,
}

pub fn run(args: PpcArgs) -> Result<()> {
    if !(args.d_max > 0.0) || !(args.d_step > 0.0) || args.d_step > args.d_max {
        return Err(CliError::Usage(format!(
            "need 0 < d-step <= d-max, got d-max {} d-step {}",
            args.d_max, args.d_step
        )));
    }
    let loaded = io::load_draws(&args.draws)?;
    let regions = io::read_regions(&args.regions)?;
    let model = Model::new(loaded.grid, loaded.data, loaded.manifest.priors)?;
    for r in &regions {
        r.validate(model.grid())?;
    }

    let counts = ppc_counts(&model, &loaded.states, &regions, args.seed)?;
    info!(
        "count check: {:.1}% of (type, region) cells covered by the 95% predictive interval",
        100.0 * counts.coverage
    );

    let mut d_grid = Vec::new();
    let mut d = 0.0;
    while d <= args.d_max + 1e-9 {
        d_grid.push(d);
        d += args.d_step;
    }
    let l_diff = l_diff_report(&model, &loaded.states, &loaded.world, &d_grid, args.seed)?;
    info!(
        "second-order check: {:.1}% of distances have zero inside the 95% interval of the L-difference",
        100.0 * l_diff.zero_coverage
    );

    io::write_json(&args.out, &PpcReport { counts, l_diff })?;
    info!("wrote {}", args.out.display());
    Ok(())
}
