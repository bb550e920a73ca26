//! `summarize`: posterior intensity maps and scalar tables for one profile.

use std::fs;

use coxmeta_core::model::Model;
use coxmeta_core::summaries::{exceedance_probs, intensity_draws, intensity_mean, intensity_quantiles, scalar_summary};
use log::info;

use crate::errors::{CliError, Result};
use crate::io;
use crate::SummarizeArgs;

fn parse_probs(arg: &str) -> Result<Vec<f64>> {
    let mut probs = Vec::new();
    for tok in arg.split(',') {
        let p: f64 = tok
            .trim()
            .parse()
            .map_err(|e| CliError::Usage(format!("probability '{tok}': {e}")))?;
        probs.push(p);
    }
    Ok(probs)
}

pub fn run(args: SummarizeArgs) -> Result<()> {
    let loaded = io::load_draws(&args.draws)?;
    let probs = parse_probs(&args.probs)?;
    let z = io::parse_profile(&args.profile, loaded.manifest.covariate_names.len())?;
    let names = loaded.manifest.covariate_names.clone();
    let k_star = loaded.manifest.k_star;
    let model = Model::new(loaded.grid, loaded.data, loaded.manifest.priors)?;
    fs::create_dir_all(&args.out).map_err(|e| CliError::Io { path: args.out.clone(), source: e })?;

    let per_draw = intensity_draws(&model, &loaded.states, &z)?;
    info!("{} draws evaluated at profile {:?}", per_draw.len(), &z[1..]);

    let grid = model.grid();
    let mean = intensity_mean(&per_draw)?;
    io::write_volume(&args.out, "mean", grid, &mean, "posterior mean intensity per mm^3")?;
    let qs = intensity_quantiles(&per_draw, &probs)?;
    for (p, q) in probs.iter().zip(&qs) {
        io::write_volume(&args.out, &format!("q{p}"), grid, q, &format!("posterior {p} quantile of intensity per mm^3"))?;
    }
    if let Some(thr) = args.threshold {
        let ex = exceedance_probs(&per_draw, thr)?;
        io::write_volume(&args.out, "exceedance", grid, &ex, &format!("posterior probability intensity exceeds {thr} per mm^3"))?;
    }

    // Scalar coordinates: one row per sampled scalar, labelled by the
    // covariate it multiplies.
    let shape = loaded.manifest.meta.shape;
    let covariate_label = |zi: usize| -> String {
        if zi == 0 { "intercept".into() } else { names.get(zi - 1).cloned().unwrap_or_else(|| format!("z{zi}")) }
    };
    let mut csv = String::from("param,covariate,mean,sd");
    for p in &probs {
        csv.push_str(&format!(",q{p}"));
    }
    csv.push('\n');
    let mut row = |name: String, xs: &[f64]| -> Result<()> {
        let s = scalar_summary(xs, &probs)?;
        csv.push_str(&format!("{name},{},{}", s.mean, s.sd));
        for (_, q) in &s.quantiles {
            csv.push_str(&format!(",{q}"));
        }
        csv.push('\n');
        Ok(())
    };
    let pull = |f: &dyn Fn(&coxmeta_core::model::ModelState) -> f64| -> Vec<f64> {
        loaded.states.iter().map(f).collect()
    };
    for l in 0..shape.n_spatial {
        row(format!("mu_{l} ({})", covariate_label(l)), &pull(&|st| st.mu[l]))?;
    }
    for l in 0..shape.n_spatial {
        row(format!("sigma_{l} ({})", covariate_label(l)), &pull(&|st| st.sigma[l]))?;
    }
    for l in 0..shape.n_spatial {
        row(format!("rho_scaled_{l} ({})", covariate_label(l)), &pull(&|st| st.rho_scaled[l]))?;
    }
    for k in 0..shape.n_global {
        row(format!("beta_{k} ({})", covariate_label(k_star + 1 + k)), &pull(&|st| st.beta[k]))?;
    }
    io::write_atomic(&args.out.join("scalars.csv"), csv.as_bytes())?;
    info!("wrote posterior volumes and scalars.csv to {}", args.out.display());
    Ok(())
}
