//! Synthetic point-pattern generators.
//!
//! Two families:
//!
//! * [`simulate_lgcp_dataset`] draws studies from the model itself (latent
//!   Gaussian fields, log-linear covariate effects, voxel-wise Poisson
//!   counts) so a fitted chain can be checked against known parameters.
//! * [`simulate_region_mixture`] draws studies from a deliberately different
//!   process: per-study focus counts follow a (possibly overdispersed)
//!   count model that is linear in the covariates, and each focus lands in
//!   one of a few regions at fixed probabilities. This gives predictive
//!   checks something to detect.
//!
//! All randomness flows from a single `u64` seed through ChaCha streams;
//! per-study sub-streams make the output independent of sampling order.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grid::VoxelGrid;
use crate::kernel::{KernelPlan, SpectralKernel};
use crate::model::{ModelState, StateShape, Study, StudySet, DELTA, RHO_SCALE};
use crate::Result;

/// How one covariate column is drawn, in declaration order.
///
/// `ComplementOf(j)` is `1 - z[j]`, with `j` indexing the full covariate
/// vector (0 is the intercept), and must point at an earlier column; it
/// builds the paired-group designs where each study belongs to exactly one
/// of two conditions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum CovariateSampler {
    Constant(f64),
    Bernoulli(f64),
    Uniform(f64, f64),
    ComplementOf(usize),
}

impl CovariateSampler {
    fn validate(&self, position: usize) -> Result<()> {
        let bad = |m: String| Err(Error::BadSimConfig(m));
        match *self {
            CovariateSampler::Constant(c) if !c.is_finite() => bad(format!("constant covariate {c} is not finite")),
            CovariateSampler::Bernoulli(p) if !(0.0..=1.0).contains(&p) => {
                bad(format!("Bernoulli probability {p} outside [0, 1]"))
            }
            CovariateSampler::Uniform(lo, hi) if !(lo.is_finite() && hi.is_finite() && lo <= hi) => {
                bad(format!("bad uniform range [{lo}, {hi}]"))
            }
            CovariateSampler::ComplementOf(j) if j >= position => {
                bad(format!("complement at column {position} refers to column {j}, which is not earlier"))
            }
            _ => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R, z_so_far: &[f64]) -> f64 {
        match *self {
            CovariateSampler::Constant(c) => c,
            CovariateSampler::Bernoulli(p) => {
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    0.0
                }
            }
            CovariateSampler::Uniform(lo, hi) => rng.random_range(lo..=hi),
            CovariateSampler::ComplementOf(j) => 1.0 - z_so_far[j],
        }
    }
}

/// Generating parameters for an LGCP dataset. Vector lengths follow the
/// model layout: one entry per spatial effect (intercept first), and one
/// beta per global covariate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthSpec {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_scaled: Vec<f64>,
    pub beta: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LgcpSimConfig {
    pub n_studies: usize,
    /// Leading covariates that carry their own spatial effect.
    pub k_star: usize,
    pub truth: TruthSpec,
    /// Samplers for every covariate after the intercept.
    pub covariates: Vec<CovariateSampler>,
    pub seed: u64,
}

/// A generated dataset: voxelized studies ready for fitting, the same foci
/// in world coordinates for serialization, and the exact generating state.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub data: StudySet,
    pub foci_world: Vec<Vec<[f64; 3]>>,
    pub truth: ModelState,
}

/// Draws one realization of a voxel-wise Poisson process with the given
/// masked intensity (per mm^3). Returns voxel indices and matching world
/// coordinates, uniform inside their voxel.
pub fn sample_poisson_process<R: Rng>(
    grid: &VoxelGrid,
    lam_masked: &[f64],
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<[f64; 3]>)> {
    if lam_masked.len() != grid.n_masked() {
        return Err(Error::BadSimConfig(format!(
            "intensity has {} values but the mask has {} voxels",
            lam_masked.len(),
            grid.n_masked()
        )));
    }
    let a = grid.voxel_size_mm();
    let vol = grid.voxel_volume();
    let mut voxels = Vec::new();
    let mut world = Vec::new();
    for (j, &v) in grid.masked_voxels().iter().enumerate() {
        let mean = lam_masked[j] * vol;
        if !(mean.is_finite() && mean >= 0.0) {
            return Err(Error::BadSimConfig(format!("intensity {} at voxel {v} is not usable", lam_masked[j])));
        }
        if mean == 0.0 {
            continue;
        }
        let n = Poisson::new(mean).map_err(|e| Error::BadSimConfig(format!("Poisson({mean}): {e}")))?.sample(rng);
        let center = grid.voxel_center(v);
        for _ in 0..n as usize {
            let p = [
                center[0] + (rng.random::<f64>() - 0.5) * a,
                center[1] + (rng.random::<f64>() - 0.5) * a,
                center[2] + (rng.random::<f64>() - 0.5) * a,
            ];
            voxels.push(v);
            world.push(p);
        }
    }
    Ok((voxels, world))
}

fn sample_covariates<R: Rng>(samplers: &[CovariateSampler], rng: &mut R) -> Vec<f64> {
    let mut z = Vec::with_capacity(samplers.len() + 1);
    z.push(1.0);
    for s in samplers {
        let v = s.sample(rng, &z);
        z.push(v);
    }
    z
}

/// Simulates a full multi-study dataset from the model.
///
/// Randomness order under the master stream: latent fields first, then each
/// study's covariates, then one sub-seed per study for its foci.
pub fn simulate_lgcp_dataset(grid: &VoxelGrid, cfg: &LgcpSimConfig) -> Result<SimulatedData> {
    let bad = |m: String| Err(Error::BadSimConfig(m));
    if cfg.n_studies == 0 {
        return bad("n_studies must be at least 1".into());
    }
    if cfg.k_star > cfg.covariates.len() {
        return bad(format!("k_star {} exceeds the {} covariates", cfg.k_star, cfg.covariates.len()));
    }
    let n_spatial = cfg.k_star + 1;
    let n_global = cfg.covariates.len() - cfg.k_star;
    let t = &cfg.truth;
    if t.mu.len() != n_spatial || t.sigma.len() != n_spatial || t.rho_scaled.len() != n_spatial {
        return bad(format!("spatial truth vectors must have length {n_spatial}"));
    }
    if t.beta.len() != n_global {
        return bad(format!("beta must have length {n_global}"));
    }
    for (pos, s) in cfg.covariates.iter().enumerate() {
        s.validate(pos + 1)?;
    }

    let plan = KernelPlan::new(grid, DELTA)?;
    let shape = StateShape { n_spatial, torus_len: grid.n_torus(), n_global };
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);

    let mut truth = ModelState::zeros(shape);
    truth.mu.copy_from_slice(&t.mu);
    truth.sigma.copy_from_slice(&t.sigma);
    truth.rho_scaled.copy_from_slice(&t.rho_scaled);
    truth.beta.copy_from_slice(&t.beta);
    for g in truth.gamma.iter_mut() {
        for x in g.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
    }

    // mu_l + sigma_l (R^{1/2} gamma_l) at masked voxels.
    let mut scratch = plan.make_scratch();
    let mut s_field = vec![0.0; grid.n_torus()];
    let mut b_masked = vec![vec![0.0; grid.n_masked()]; n_spatial];
    for l in 0..n_spatial {
        let kern = SpectralKernel::build(&plan, truth.rho_scaled[l] / RHO_SCALE, &mut scratch)?;
        kern.sqrt_apply(&plan, &truth.gamma[l], &mut s_field, &mut scratch);
        for (j, &v) in grid.masked_torus().iter().enumerate() {
            b_masked[l][j] = t.mu[l] + t.sigma[l] * s_field[v];
        }
    }

    let zs: Vec<Vec<f64>> = (0..cfg.n_studies).map(|_| sample_covariates(&cfg.covariates, &mut rng)).collect();
    let study_seeds: Vec<u64> = (0..cfg.n_studies).map(|_| rng.random()).collect();

    let mut studies = Vec::with_capacity(cfg.n_studies);
    let mut foci_world = Vec::with_capacity(cfg.n_studies);
    let mut lam = vec![0.0; grid.n_masked()];
    for (i, z) in zs.iter().enumerate() {
        let mut global = 0.0;
        for k in 0..n_global {
            global += t.beta[k] * z[n_spatial + k];
        }
        for (j, x) in lam.iter_mut().enumerate() {
            let mut eta = global;
            for l in 0..n_spatial {
                eta += z[l] * b_masked[l][j];
            }
            *x = eta.exp();
        }
        let id = format!("sim-{i:04}");
        if lam.iter().any(|&x| !(x <= 1e300)) {
            return Err(Error::IntensityOverflow { study_id: id });
        }
        let mut srng = ChaCha20Rng::seed_from_u64(study_seeds[i]);
        let (foci, world) = sample_poisson_process(grid, &lam, &mut srng)?;
        studies.push(Study { id, z: z.clone(), foci });
        foci_world.push(world);
    }

    let data = StudySet::new(studies, cfg.k_star, grid)?;
    Ok(SimulatedData { data, foci_world, truth })
}

/// One placement region: masked voxel indices plus the probability that a
/// focus lands there.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionSpec {
    pub voxels: Vec<usize>,
    pub prob: f64,
}

/// One study type: its covariate values (after the intercept), how many
/// studies to draw, and where its foci land.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyTypeSpec {
    pub name: String,
    pub z: Vec<f64>,
    pub n_studies: usize,
    pub regions: Vec<RegionSpec>,
}

/// Region-mixture generator: per-study counts are mean
/// `intercept + coefs . z`, with variance `mean^2 / dispersion` via a
/// gamma-Poisson mixture. When that variance does not exceed the mean the
/// counts fall back to plain Poisson (and say so in the log).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionMixtureConfig {
    pub types: Vec<StudyTypeSpec>,
    pub count_intercept: f64,
    pub count_coefs: Vec<f64>,
    pub dispersion: f64,
    /// Leading covariates modeled with spatial effects when fitted.
    pub k_star: usize,
    pub seed: u64,
}

fn sample_count<R: Rng>(mean: f64, dispersion: f64, rng: &mut R) -> Result<usize> {
    let var = mean * mean / dispersion;
    let lam = if var > mean {
        // Gamma-Poisson with size r = mean^2 / (var - mean) hits the target
        // mean and variance exactly.
        let r = mean * mean / (var - mean);
        Gamma::new(r, mean / r)
            .map_err(|e| Error::BadSimConfig(format!("Gamma({r}, {}): {e}", mean / r)))?
            .sample(rng)
    } else {
        mean
    };
    if lam <= 0.0 {
        return Ok(0);
    }
    let n = Poisson::new(lam).map_err(|e| Error::BadSimConfig(format!("Poisson({lam}): {e}")))?.sample(rng);
    Ok(n as usize)
}

/// Draws a dataset whose counts and placements do not come from the LGCP.
pub fn simulate_region_mixture(grid: &VoxelGrid, cfg: &RegionMixtureConfig) -> Result<(StudySet, Vec<Vec<[f64; 3]>>)> {
    let bad = |m: String| Err(Error::BadSimConfig(m));
    if cfg.types.is_empty() {
        return bad("at least one study type is required".into());
    }
    if !(cfg.dispersion.is_finite() && cfg.dispersion > 0.0) {
        return bad(format!("dispersion must be positive, got {}", cfg.dispersion));
    }
    let n_cov = cfg.types[0].z.len();
    if cfg.count_coefs.len() != n_cov {
        return bad(format!("{} count coefficients for {} covariates", cfg.count_coefs.len(), n_cov));
    }
    if cfg.k_star > n_cov {
        return bad(format!("k_star {} exceeds the {} covariates", cfg.k_star, n_cov));
    }
    for ty in &cfg.types {
        if ty.z.len() != n_cov {
            return Err(Error::CovariateLength { study_id: ty.name.clone(), got: ty.z.len(), want: n_cov });
        }
        if ty.n_studies == 0 {
            return bad(format!("type {} has no studies", ty.name));
        }
        let total: f64 = ty.regions.iter().map(|r| r.prob).sum();
        if ty.regions.is_empty() || (total - 1.0).abs() > 1e-9 {
            return bad(format!("type {} region probabilities sum to {total}, not 1", ty.name));
        }
        for (ri, r) in ty.regions.iter().enumerate() {
            if r.voxels.is_empty() {
                return Err(Error::EmptyRegion(format!("{}/{ri}", ty.name)));
            }
            if r.prob < 0.0 {
                return bad(format!("type {} has a negative region probability", ty.name));
            }
            if let Some(&v) = r.voxels.iter().find(|&&v| v >= grid.n_voxels() || !grid.is_masked(v)) {
                return Err(Error::RegionOutsideMask(format!("{}/{ri}", ty.name), v));
            }
        }
        let mean = cfg.count_intercept + crate::math::dot(&cfg.count_coefs, &ty.z);
        if !(mean.is_finite() && mean > 0.0) {
            return bad(format!("type {} has mean count {mean}", ty.name));
        }
        if mean * mean / cfg.dispersion <= mean {
            warn!("type {}: target variance {} does not exceed mean {mean}; counts fall back to Poisson", ty.name, mean * mean / cfg.dispersion);
        }
    }

    let a = grid.voxel_size_mm();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut studies = Vec::new();
    let mut foci_world = Vec::new();
    for ty in &cfg.types {
        let mean = cfg.count_intercept + crate::math::dot(&cfg.count_coefs, &ty.z);
        for j in 0..ty.n_studies {
            let n = sample_count(mean, cfg.dispersion, &mut rng)?;
            let mut foci = Vec::with_capacity(n);
            let mut world = Vec::with_capacity(n);
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut region = &ty.regions[ty.regions.len() - 1];
                for r in &ty.regions {
                    acc += r.prob;
                    if u < acc {
                        region = r;
                        break;
                    }
                }
                let v = region.voxels[rng.random_range(0..region.voxels.len())];
                let center = grid.voxel_center(v);
                foci.push(v);
                world.push([
                    center[0] + (rng.random::<f64>() - 0.5) * a,
                    center[1] + (rng.random::<f64>() - 0.5) * a,
                    center[2] + (rng.random::<f64>() - 0.5) * a,
                ]);
            }
            let mut z = Vec::with_capacity(n_cov + 1);
            z.push(1.0);
            z.extend_from_slice(&ty.z);
            studies.push(Study { id: format!("{}-{j:03}", ty.name), z, foci });
            foci_world.push(world);
        }
    }
    let data = StudySet::new(studies, cfg.k_star, grid)?;
    Ok((data, foci_world))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_grid(n: usize) -> VoxelGrid {
        VoxelGrid::build_unmasked([n, n, n], 2.0, [-(n as f64), -(n as f64), -(n as f64)]).unwrap()
    }

    #[test]
    fn poisson_process_total_count_matches_moments() {
        let grid = flat_grid(5);
        // lambda = 0.2 per mm^3, voxel volume 8: mean 1.6 per voxel, 200 total.
        let lam = vec![0.2; grid.n_masked()];
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let reps = 400;
        let mut counts = Vec::with_capacity(reps);
        for _ in 0..reps {
            let (v, w) = sample_poisson_process(&grid, &lam, &mut rng).unwrap();
            assert_eq!(v.len(), w.len());
            counts.push(v.len() as f64);
        }
        let n = reps as f64;
        let mean = crate::math::sum(&counts) / n;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let target = 0.2 * 8.0 * 125.0;
        // 4 standard errors on the mean; the variance gets a loose band.
        assert!((mean - target).abs() < 4.0 * (target / n).sqrt(), "mean {mean} vs {target}");
        assert!((var / target - 1.0).abs() < 0.25, "var {var} vs {target}");
    }

    #[test]
    fn sampled_points_stay_inside_their_voxel() {
        let grid = flat_grid(4);
        let lam = vec![1.0; grid.n_masked()];
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (voxels, world) = sample_poisson_process(&grid, &lam, &mut rng).unwrap();
        assert!(!voxels.is_empty());
        for (&v, &p) in voxels.iter().zip(&world) {
            assert_eq!(grid.world_to_voxel(p).unwrap(), v);
        }
    }

    #[test]
    fn constant_intensity_dataset_has_expected_totals() {
        let grid = flat_grid(5);
        // sigma = 0: intensity is exp(mu + beta z) = 0.05 * 2 = 0.1 everywhere.
        let cfg = LgcpSimConfig {
            n_studies: 40,
            k_star: 0,
            truth: TruthSpec {
                mu: vec![0.05f64.ln()],
                sigma: vec![0.0],
                rho_scaled: vec![60.0],
                beta: vec![2.0f64.ln()],
            },
            covariates: vec![CovariateSampler::Constant(1.0)],
            seed: 9,
        };
        let sim = simulate_lgcp_dataset(&grid, &cfg).unwrap();
        assert_eq!(sim.data.n_studies(), 40);
        assert_eq!(sim.foci_world.len(), 40);
        for s in sim.data.studies() {
            assert_eq!(s.z, vec![1.0, 1.0]);
        }
        // Expected 0.1 * 8 * 125 = 100 per study, 4000 total, sd ~ 63.
        let total = sim.data.total_foci() as f64;
        assert!((total - 4000.0).abs() < 4.0 * 4000.0f64.sqrt(), "total {total}");
        assert_eq!(sim.truth.beta[0], 2.0f64.ln());
    }

    #[test]
    fn complement_covariates_partition_the_studies() {
        let grid = flat_grid(3);
        let cfg = LgcpSimConfig {
            n_studies: 30,
            k_star: 0,
            truth: TruthSpec { mu: vec![-3.0], sigma: vec![0.0], rho_scaled: vec![60.0], beta: vec![0.1, 0.2] },
            covariates: vec![CovariateSampler::Bernoulli(0.5), CovariateSampler::ComplementOf(1)],
            seed: 5,
        };
        let sim = simulate_lgcp_dataset(&grid, &cfg).unwrap();
        let mut saw = [false, false];
        for s in sim.data.studies() {
            assert_eq!(s.z[1] + s.z[2], 1.0);
            saw[s.z[1] as usize] = true;
        }
        assert!(saw[0] && saw[1], "Bernoulli(0.5) over 30 studies hit only one group");
    }

    #[test]
    fn same_seed_reproduces_the_dataset() {
        let grid = flat_grid(4);
        let cfg = LgcpSimConfig {
            n_studies: 6,
            k_star: 1,
            truth: TruthSpec {
                mu: vec![-4.0, -1.0],
                sigma: vec![0.4, 0.3],
                rho_scaled: vec![60.0, 70.0],
                beta: vec![],
            },
            covariates: vec![CovariateSampler::Bernoulli(0.4)],
            seed: 31,
        };
        let a = simulate_lgcp_dataset(&grid, &cfg).unwrap();
        let b = simulate_lgcp_dataset(&grid, &cfg).unwrap();
        for (sa, sb) in a.data.studies().iter().zip(b.data.studies()) {
            assert_eq!(sa.foci, sb.foci);
            assert_eq!(sa.z, sb.z);
        }
        assert_eq!(a.truth.gamma, b.truth.gamma);
        let c = simulate_lgcp_dataset(&grid, &LgcpSimConfig { seed: 32, ..cfg }).unwrap();
        assert_ne!(
            a.data.studies().iter().map(|s| s.foci.len()).collect::<Vec<_>>(),
            c.data.studies().iter().map(|s| s.foci.len()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn bad_simulation_configs_are_rejected() {
        let grid = flat_grid(3);
        let base = LgcpSimConfig {
            n_studies: 2,
            k_star: 0,
            truth: TruthSpec { mu: vec![-3.0], sigma: vec![0.0], rho_scaled: vec![60.0], beta: vec![] },
            covariates: vec![],
            seed: 1,
        };
        let cases = [
            LgcpSimConfig { n_studies: 0, ..base.clone() },
            LgcpSimConfig { k_star: 1, ..base.clone() },
            LgcpSimConfig {
                truth: TruthSpec { mu: vec![-3.0, 0.0], ..base.truth.clone() },
                ..base.clone()
            },
            LgcpSimConfig { covariates: vec![CovariateSampler::Bernoulli(1.5)], ..base.clone() },
            LgcpSimConfig { covariates: vec![CovariateSampler::ComplementOf(1)], ..base.clone() },
        ];
        for cfg in cases {
            assert!(matches!(simulate_lgcp_dataset(&grid, &cfg), Err(Error::BadSimConfig(_))));
        }
    }

    #[test]
    fn overdispersed_counts_match_their_moments() {
        // mean 5, dispersion 2 -> variance 25/2.
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let n = 30_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_count(5.0, 2.0, &mut rng).unwrap() as f64).collect();
        let mean = crate::math::sum(&xs) / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 5.0).abs() < 0.15, "mean {mean}");
        assert!((var - 12.5).abs() < 0.8, "var {var}");
    }

    #[test]
    fn underdispersed_target_falls_back_to_poisson() {
        // Requested variance 2.5 is below the mean 5; counts come out Poisson.
        let mut rng = ChaCha20Rng::seed_from_u64(78);
        let n = 30_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_count(5.0, 10.0, &mut rng).unwrap() as f64).collect();
        let mean = crate::math::sum(&xs) / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - 5.0).abs() < 0.15, "mean {mean}");
        assert!((var - 5.0).abs() < 0.5, "var {var}");
    }

    #[test]
    fn region_mixture_counts_and_placement_follow_the_spec() {
        let grid = flat_grid(6);
        // A box in one corner and everything else.
        let corner: Vec<usize> = grid
            .masked_voxels()
            .iter()
            .copied()
            .filter(|&v| {
                let t = grid.triple_of(v);
                t[0] < 3 && t[1] < 3 && t[2] < 3
            })
            .collect();
        let rest: Vec<usize> = grid.masked_voxels().iter().copied().filter(|v| !corner.contains(v)).collect();
        let cfg = RegionMixtureConfig {
            types: vec![
                StudyTypeSpec {
                    name: "null".into(),
                    z: vec![0.0, 0.0],
                    n_studies: 1500,
                    regions: vec![RegionSpec { voxels: corner.clone(), prob: 1.0 }],
                },
                StudyTypeSpec {
                    name: "both".into(),
                    z: vec![1.0, 1.0],
                    n_studies: 1500,
                    regions: vec![
                        RegionSpec { voxels: corner.clone(), prob: 0.3 },
                        RegionSpec { voxels: rest, prob: 0.7 },
                    ],
                },
            ],
            count_intercept: 5.0,
            count_coefs: vec![2.0, 2.0],
            dispersion: 2.0,
            k_star: 0,
            seed: 12,
        };
        let (data, world) = simulate_region_mixture(&grid, &cfg).unwrap();
        assert_eq!(data.n_studies(), 3000);
        assert_eq!(world.len(), 3000);

        // Mean count 5 for (0,0), 9 for (1,1); 4 standard errors each.
        let counts = |name: &str| {
            data.studies()
                .iter()
                .filter(|s| s.id.starts_with(name))
                .map(|s| s.foci.len() as f64)
                .collect::<Vec<_>>()
        };
        let null = counts("null");
        let both = counts("both");
        let mean = |xs: &[f64]| crate::math::sum(xs) / xs.len() as f64;
        let se5 = (12.5f64 / 1500.0).sqrt();
        let se9 = (40.5f64 / 1500.0).sqrt();
        assert!((mean(&null) - 5.0).abs() < 4.0 * se5, "null mean {}", mean(&null));
        assert!((mean(&both) - 9.0).abs() < 4.0 * se9, "both mean {}", mean(&both));

        // All null-type foci live in the corner region.
        for s in data.studies().iter().filter(|s| s.id.starts_with("null")) {
            for &v in &s.foci {
                assert!(corner.contains(&v), "focus at voxel {v} escaped its region");
            }
        }
    }

    #[test]
    fn region_mixture_validation_catches_bad_specs() {
        let grid = flat_grid(3);
        let ok_region = RegionSpec { voxels: vec![0], prob: 1.0 };
        let base = RegionMixtureConfig {
            types: vec![StudyTypeSpec { name: "t".into(), z: vec![0.0], n_studies: 1, regions: vec![ok_region.clone()] }],
            count_intercept: 5.0,
            count_coefs: vec![2.0],
            dispersion: 2.0,
            k_star: 0,
            seed: 0,
        };
        // Probabilities off by more than the tolerance.
        let mut bad = base.clone();
        bad.types[0].regions[0].prob = 0.9;
        assert!(matches!(simulate_region_mixture(&grid, &bad), Err(Error::BadSimConfig(_))));
        // Empty region.
        let mut bad = base.clone();
        bad.types[0].regions[0].voxels.clear();
        assert!(matches!(simulate_region_mixture(&grid, &bad), Err(Error::EmptyRegion(_))));
        // Region voxel outside the grid.
        let mut bad = base.clone();
        bad.types[0].regions[0].voxels = vec![999];
        assert!(matches!(simulate_region_mixture(&grid, &bad), Err(Error::RegionOutsideMask(_, _))));
        // Nonpositive mean count.
        let mut bad = base.clone();
        bad.count_intercept = 0.0;
        bad.count_coefs = vec![0.0];
        assert!(matches!(simulate_region_mixture(&grid, &bad), Err(Error::BadSimConfig(_))));
        // The base itself is fine.
        assert!(simulate_region_mixture(&grid, &base).is_ok());
    }
}
