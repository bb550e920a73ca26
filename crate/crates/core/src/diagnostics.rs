//! Chain and fit diagnostics: autocorrelation, a second-order spatial
//! statistic, and posterior-predictive checks.
//!
//! The predictive checks compare the observed studies against replicates
//! drawn from the fitted intensity, one replicate set per posterior draw.
//! Studies are grouped into types by their full covariate row, since two
//! studies with the same covariates are exchangeable under the model.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::Error;
use crate::math;
use crate::model::{Model, ModelState};
use crate::pointgen::sample_poisson_process;
use crate::summaries::Region;
use crate::Result;

/// Sample autocorrelation at lags `0..=max_lag`, with the usual biased
/// (lag-0 normalized) estimator.
pub fn acf(xs: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if xs.len() < 2 || xs.len() <= max_lag {
        return Err(Error::SeriesTooShort { len: xs.len(), max_lag });
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return Err(Error::ConstantSeries);
    }
    let n = xs.len();
    let mean = math::sum(xs) / n as f64;
    let mut denom = math::CompensatedSum::new();
    for &x in xs {
        denom.add((x - mean) * (x - mean));
    }
    let denom = denom.value();
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut acc = math::CompensatedSum::new();
        for t in 0..n - k {
            acc.add((xs[t] - mean) * (xs[t + k] - mean));
        }
        out.push(acc.value() / denom);
    }
    Ok(out)
}

/// Ripley-style L-function of a 3D point pattern observed in a region of
/// volume `volume` (mm^3):
///
/// ```text
/// L(d) = [ 3 sum_{i != j} 1(d_ij <= d) / (4 pi lambda^2 volume) ]^(1/3)
/// ```
///
/// with `lambda = n / volume` and the sum over ordered distinct pairs. A
/// homogeneous Poisson pattern has `L(d) ~ d`. Patterns with fewer than two
/// points return zeros.
pub fn l_function(points: &[[f64; 3]], volume: f64, d_grid: &[f64]) -> Result<Vec<f64>> {
    check_distance_grid(d_grid)?;
    if !(volume.is_finite() && volume > 0.0) {
        return Err(Error::BadDistanceGrid);
    }
    let n = points.len();
    if n < 2 {
        return Ok(vec![0.0; d_grid.len()]);
    }
    // Sorted unordered pair distances; each contributes twice to the sum.
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let dz = points[i][2] - points[j][2];
            dists.push((dx * dx + dy * dy + dz * dz).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = 3.0 * volume / (4.0 * PI * (n * n) as f64);
    Ok(d_grid
        .iter()
        .map(|&d| {
            let cnt = 2 * dists.partition_point(|&x| x <= d);
            (scale * cnt as f64).powf(1.0 / 3.0)
        })
        .collect())
}

fn check_distance_grid(d_grid: &[f64]) -> Result<()> {
    if d_grid.is_empty() || d_grid.iter().any(|&d| !d.is_finite() || d < 0.0) {
        return Err(Error::BadDistanceGrid);
    }
    Ok(())
}

/// 0 to 200 mm in 2 mm steps.
pub fn default_distance_grid() -> Vec<f64> {
    (0..=100).map(|i| 2.0 * i as f64).collect()
}

/// Studies sharing one covariate row.
#[derive(Debug, Clone)]
pub struct StudyType {
    pub z: Vec<f64>,
    /// Indices into the study set, in input order.
    pub members: Vec<usize>,
}

/// Groups studies by their full covariate row, in order of first appearance.
pub fn study_types(model: &Model) -> Vec<StudyType> {
    let mut types: Vec<StudyType> = Vec::new();
    for (i, s) in model.data().studies().iter().enumerate() {
        match types.iter_mut().find(|t| t.z == s.z) {
            Some(t) => t.members.push(i),
            None => types.push(StudyType { z: s.z.clone(), members: vec![i] }),
        }
    }
    types
}

/// One predictive interval for a per-study mean count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpcCountRow {
    pub type_z: Vec<f64>,
    pub region: String,
    pub n_studies: usize,
    pub observed: f64,
    pub lo: f64,
    pub hi: f64,
    pub covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PpcCountReport {
    pub rows: Vec<PpcCountRow>,
    /// Fraction of (type, region) cells whose observed statistic falls
    /// inside its 95% predictive interval.
    pub coverage: f64,
}

/// Predictive check on focus counts: for every study type and region, the
/// observed mean count per study is compared against the central 95%
/// interval of the same statistic under replicates from the fitted model.
///
/// Counts in a region are Poisson with mean `Lambda(region)` under the
/// model, so replicates sample the counts directly instead of placing
/// points.
pub fn ppc_counts(model: &Model, draws: &[ModelState], regions: &[Region], seed: u64) -> Result<PpcCountReport> {
    if draws.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    let grid = model.grid();
    for r in regions {
        r.validate(grid)?;
    }
    let types = study_types(model);
    let a = grid.voxel_volume();
    let studies = model.data().studies();
    let mut ws = model.make_workspace();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    // Region membership as mask ranks for observed counting and for Lambda.
    let region_ranks: Vec<Vec<usize>> =
        regions.iter().map(|r| r.voxels.iter().map(|&v| grid.mask_rank(v).unwrap()).collect()).collect();
    let in_region: Vec<Vec<bool>> = regions
        .iter()
        .map(|r| {
            let mut m = vec![false; grid.n_voxels()];
            for &v in &r.voxels {
                m[v] = true;
            }
            m
        })
        .collect();

    let mut observed = vec![vec![0.0; regions.len()]; types.len()];
    for (ti, ty) in types.iter().enumerate() {
        for &i in &ty.members {
            for &v in &studies[i].foci {
                for (ri, m) in in_region.iter().enumerate() {
                    if m[v] {
                        observed[ti][ri] += 1.0;
                    }
                }
            }
        }
        for o in observed[ti].iter_mut() {
            *o /= ty.members.len() as f64;
        }
    }

    // Replicate statistic per draw, type and region.
    let mut rep = vec![vec![Vec::with_capacity(draws.len()); regions.len()]; types.len()];
    for draw in draws {
        for (ti, ty) in types.iter().enumerate() {
            let lam = model.profile_intensity(draw, &ty.z, &mut ws)?;
            for (ri, ranks) in region_ranks.iter().enumerate() {
                let mut lambda_r = math::CompensatedSum::new();
                for &j in ranks {
                    lambda_r.add(a * lam[j]);
                }
                let lambda_r = lambda_r.value();
                let mut total = 0.0;
                if lambda_r > 0.0 {
                    let pois = Poisson::new(lambda_r)
                        .map_err(|e| Error::BadSimConfig(format!("Poisson({lambda_r}): {e}")))?;
                    for _ in 0..ty.members.len() {
                        total += pois.sample(&mut rng);
                    }
                }
                rep[ti][ri].push(total / ty.members.len() as f64);
            }
        }
    }

    let mut rows = Vec::with_capacity(types.len() * regions.len());
    let mut hit = 0usize;
    for (ti, ty) in types.iter().enumerate() {
        for (ri, region) in regions.iter().enumerate() {
            let mut xs = rep[ti][ri].clone();
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let lo = math::quantile_sorted(&xs, 0.025);
            let hi = math::quantile_sorted(&xs, 0.975);
            let obs = observed[ti][ri];
            let covered = lo <= obs && obs <= hi;
            hit += covered as usize;
            rows.push(PpcCountRow {
                type_z: ty.z.clone(),
                region: region.name.clone(),
                n_studies: ty.members.len(),
                observed: obs,
                lo,
                hi,
                covered,
            });
        }
    }
    let coverage = hit as f64 / rows.len() as f64;
    Ok(PpcCountReport { rows, coverage })
}

/// Predictive interval for the L-function discrepancy at one distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LDiffRow {
    pub type_z: Vec<f64>,
    pub d: f64,
    /// Central 95% interval of `L_obs(d) - L_rep(d)` across draws.
    pub lo: f64,
    pub hi: f64,
    pub zero_covered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LDiffReport {
    pub rows: Vec<LDiffRow>,
    /// Fraction of (type, distance) cells whose interval contains zero.
    pub zero_coverage: f64,
}

/// Predictive check on second-order structure: per study type, the observed
/// pooled point pattern's L-function is compared with that of a replicate
/// pattern drawn from the fitted intensity, draw by draw; the report gives
/// the 95% interval of the difference at each distance.
///
/// `observed_world` holds each study's foci in mm, aligned with the study
/// set. Pass [`default_distance_grid`] for `d_grid` unless a specific range
/// is under scrutiny.
pub fn l_diff_report(
    model: &Model,
    draws: &[ModelState],
    observed_world: &[Vec<[f64; 3]>],
    d_grid: &[f64],
    seed: u64,
) -> Result<LDiffReport> {
    if draws.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    check_distance_grid(d_grid)?;
    let studies = model.data().studies();
    if observed_world.len() != studies.len() {
        return Err(Error::BadSimConfig(format!(
            "{} world-coordinate study records for {} studies",
            observed_world.len(),
            studies.len()
        )));
    }
    for (s, w) in studies.iter().zip(observed_world) {
        if s.foci.len() != w.len() {
            return Err(Error::BadSimConfig(format!(
                "study {}: {} voxel foci but {} world foci",
                s.id,
                s.foci.len(),
                w.len()
            )));
        }
    }

    let grid = model.grid();
    let volume = grid.n_masked() as f64 * grid.voxel_volume();
    let types = study_types(model);
    let mut ws = model.make_workspace();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);

    let l_obs: Vec<Vec<f64>> = types
        .iter()
        .map(|ty| {
            let pooled: Vec<[f64; 3]> =
                ty.members.iter().flat_map(|&i| observed_world[i].iter().copied()).collect();
            l_function(&pooled, volume, d_grid)
        })
        .collect::<Result<_>>()?;

    let mut diffs = vec![vec![Vec::with_capacity(draws.len()); d_grid.len()]; types.len()];
    for draw in draws {
        for (ti, ty) in types.iter().enumerate() {
            let lam = model.profile_intensity(draw, &ty.z, &mut ws)?;
            let mut pooled = Vec::new();
            for _ in 0..ty.members.len() {
                let (_, mut world) = sample_poisson_process(grid, &lam, &mut rng)?;
                pooled.append(&mut world);
            }
            let l_rep = l_function(&pooled, volume, d_grid)?;
            for (di, (&o, r)) in l_obs[ti].iter().zip(l_rep).enumerate() {
                diffs[ti][di].push(o - r);
            }
        }
    }

    let mut rows = Vec::with_capacity(types.len() * d_grid.len());
    let mut hit = 0usize;
    for (ti, ty) in types.iter().enumerate() {
        for (di, &d) in d_grid.iter().enumerate() {
            let mut xs = std::mem::take(&mut diffs[ti][di]);
            xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let lo = math::quantile_sorted(&xs, 0.025);
            let hi = math::quantile_sorted(&xs, 0.975);
            let zero_covered = lo <= 0.0 && 0.0 <= hi;
            hit += zero_covered as usize;
            rows.push(LDiffRow { type_z: ty.z.clone(), d, lo, hi, zero_covered });
        }
    }
    let zero_coverage = hit as f64 / rows.len() as f64;
    Ok(LDiffReport { rows, zero_coverage })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::VoxelGrid;
    use crate::model::{PriorConfig, Study, StudySet};

    #[test]
    fn acf_matches_hand_computation() {
        let r = acf(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(r[0], 1.0);
        assert!((r[1] - 0.25).abs() < 1e-15);
        assert!((r[2] - (-0.3)).abs() < 1e-15);
    }

    #[test]
    fn acf_rejects_degenerate_series() {
        assert!(matches!(acf(&[1.0, 1.0, 1.0], 1), Err(Error::ConstantSeries)));
        assert!(matches!(acf(&[1.0, 2.0], 2), Err(Error::SeriesTooShort { .. })));
        assert!(matches!(acf(&[1.0], 0), Err(Error::SeriesTooShort { .. })));
    }

    #[test]
    fn acf_of_alternating_series_is_negative_at_lag_one() {
        let xs: Vec<f64> = (0..100).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&xs, 1).unwrap();
        assert!(r[1] < -0.9, "lag-1 acf {} for an alternating series", r[1]);
    }

    #[test]
    fn l_function_of_two_points_in_closed_form() {
        let pts = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]];
        let vol = 1000.0;
        let l = l_function(&pts, vol, &[4.9, 5.0, 20.0]).unwrap();
        assert_eq!(l[0], 0.0);
        // Both ordered pairs count: (3 * 2 * vol / (4 pi n^2))^(1/3).
        let expect = (3.0 * 2.0 * vol / (4.0 * PI * 4.0)).powf(1.0 / 3.0);
        assert!((l[1] - expect).abs() < 1e-12);
        assert_eq!(l[1], l[2]);
    }

    #[test]
    fn l_function_agrees_with_direct_double_loop() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        use rand::Rng;
        let pts: Vec<[f64; 3]> =
            (0..40).map(|_| [rng.random::<f64>() * 30.0, rng.random::<f64>() * 30.0, rng.random::<f64>() * 30.0]).collect();
        let ds: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let vol = 27_000.0;
        let fast = l_function(&pts, vol, &ds).unwrap();
        let n = pts.len();
        for (di, &d) in ds.iter().enumerate() {
            let mut cnt = 0usize;
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let dist = ((pts[i][0] - pts[j][0]).powi(2)
                        + (pts[i][1] - pts[j][1]).powi(2)
                        + (pts[i][2] - pts[j][2]).powi(2))
                    .sqrt();
                    if dist <= d {
                        cnt += 1;
                    }
                }
            }
            let direct = (3.0 * cnt as f64 * vol / (4.0 * PI * (n * n) as f64)).powf(1.0 / 3.0);
            assert!((fast[di] - direct).abs() <= 1e-12, "d={d}: {} vs {direct}", fast[di]);
        }
    }

    #[test]
    fn l_function_edge_cases() {
        assert_eq!(l_function(&[], 100.0, &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(l_function(&[[0.0; 3]], 100.0, &[1.0]).unwrap(), vec![0.0]);
        assert!(matches!(l_function(&[], 100.0, &[]), Err(Error::BadDistanceGrid)));
        assert!(matches!(l_function(&[], 100.0, &[-1.0]), Err(Error::BadDistanceGrid)));
        assert!(matches!(l_function(&[], 0.0, &[1.0]), Err(Error::BadDistanceGrid)));
        let g = default_distance_grid();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 200.0);
    }

    fn fitted_like_setup() -> (Model, Vec<ModelState>, Vec<Vec<[f64; 3]>>) {
        let grid = VoxelGrid::build_unmasked([4, 4, 4], 2.0, [0.0; 3]).unwrap();
        // Two types; counts drawn at the model's own flat intensity so the
        // checks should pass.
        let lam: f64 = 0.05;
        let cfg = crate::pointgen::LgcpSimConfig {
            n_studies: 24,
            k_star: 0,
            truth: crate::pointgen::TruthSpec {
                mu: vec![lam.ln()],
                sigma: vec![0.0],
                rho_scaled: vec![60.0],
                beta: vec![0.5],
            },
            covariates: vec![crate::pointgen::CovariateSampler::Bernoulli(0.5)],
            seed: 60,
        };
        let sim = crate::pointgen::simulate_lgcp_dataset(&grid, &cfg).unwrap();
        let model = Model::new(grid, sim.data.clone(), PriorConfig::default()).unwrap();
        // A posterior centers on the data, not on the truth; mimic that by
        // matching the two scalars to the realized per-type rates.
        let rate = |want: f64| {
            let (mut n, mut tot) = (0.0, 0.0);
            for s in sim.data.studies() {
                if s.z[1] == want {
                    n += 1.0;
                    tot += s.foci.len() as f64;
                }
            }
            tot / n / (64.0 * 8.0)
        };
        let (r0, r1) = (rate(0.0), rate(1.0));
        let draws: Vec<ModelState> = (0..40)
            .map(|k| {
                let mut st = sim.truth.clone();
                st.mu[0] = r0.ln() + 0.01 * (k as f64 - 20.0) / 20.0;
                st.beta[0] = (r1 / r0).ln();
                st
            })
            .collect();
        (model, draws, sim.foci_world)
    }

    #[test]
    fn count_check_accepts_data_from_the_model() {
        let (model, draws, _) = fitted_like_setup();
        let grid = model.grid();
        let all: Vec<usize> = grid.masked_voxels().to_vec();
        let half: Vec<usize> = all.iter().copied().take(32).collect();
        let regions = vec![
            Region { name: "all".into(), voxels: all },
            Region { name: "half".into(), voxels: half },
        ];
        let report = ppc_counts(&model, &draws, &regions, 99).unwrap();
        // Two types times two regions.
        assert_eq!(report.rows.len(), 4);
        for row in &report.rows {
            assert!(row.lo <= row.hi);
            assert_eq!(row.covered, row.lo <= row.observed && row.observed <= row.hi);
        }
        assert!(report.coverage >= 0.75, "coverage {}", report.coverage);
        // Deterministic in the seed.
        let again = ppc_counts(&model, &draws, &regions, 99).unwrap();
        assert_eq!(report.rows.len(), again.rows.len());
        for (a, b) in report.rows.iter().zip(&again.rows) {
            assert_eq!(a.lo.to_bits(), b.lo.to_bits());
            assert_eq!(a.hi.to_bits(), b.hi.to_bits());
        }
    }

    #[test]
    fn count_check_flags_gross_mismatch() {
        let (model, draws, _) = fitted_like_setup();
        let grid = model.grid();
        let all: Vec<usize> = grid.masked_voxels().to_vec();
        let regions = vec![Region { name: "all".into(), voxels: all }];
        // Shrink the fitted intensity far below the data.
        let starved: Vec<ModelState> = draws
            .iter()
            .map(|d| {
                let mut st = d.clone();
                st.mu[0] -= 3.0;
                st
            })
            .collect();
        let report = ppc_counts(&model, &starved, &regions, 7).unwrap();
        assert!(report.rows.iter().all(|r| !r.covered));
        assert_eq!(report.coverage, 0.0);
    }

    #[test]
    fn l_diff_check_runs_and_covers_zero_for_model_data() {
        let (model, draws, world) = fitted_like_setup();
        let ds: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let report = l_diff_report(&model, &draws, &world, &ds, 17).unwrap();
        assert_eq!(report.rows.len(), 2 * ds.len());
        for row in &report.rows {
            assert!(row.lo <= row.hi);
        }
        assert!(report.zero_coverage >= 0.7, "zero coverage {}", report.zero_coverage);
    }

    #[test]
    fn l_diff_validates_input_alignment() {
        let (model, draws, mut world) = fitted_like_setup();
        world.pop();
        let ds = [1.0, 2.0];
        assert!(l_diff_report(&model, &draws, &world, &ds, 0).is_err());
    }

    #[test]
    fn study_types_split_on_every_covariate() {
        let grid = VoxelGrid::build_unmasked([3, 3, 3], 2.0, [0.0; 3]).unwrap();
        let studies = vec![
            Study { id: "a".into(), z: vec![1.0, 0.0, 1.0], foci: vec![0] },
            Study { id: "b".into(), z: vec![1.0, 0.0, 1.0], foci: vec![1] },
            Study { id: "c".into(), z: vec![1.0, 1.0, 1.0], foci: vec![2] },
            Study { id: "d".into(), z: vec![1.0, 0.0, 0.5], foci: vec![3] },
        ];
        let data = StudySet::new(studies, 1, &grid).unwrap();
        let model = Model::new(grid, data, PriorConfig::default()).unwrap();
        let types = study_types(&model);
        assert_eq!(types.len(), 3);
        assert_eq!(types[0].members, vec![0, 1]);
        assert_eq!(types[1].members, vec![2]);
        assert_eq!(types[2].members, vec![3]);
    }
}
