//! Posterior summaries built from a set of draws.
//!
//! Everything here works on intensities over the masked voxels (per mm^3)
//! and on per-draw scalar series. Counts over a region use the discretized
//! integral `sum_v A * lambda_v`, matching the likelihood, so a summary of a
//! fitted model is exact rather than re-discretized.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::grid::VoxelGrid;
use crate::math;
use crate::model::{Model, ModelState};
use crate::Result;

/// A named set of masked voxels (full-grid indices).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub voxels: Vec<usize>,
}

impl Region {
    pub fn validate(&self, grid: &VoxelGrid) -> Result<()> {
        if self.voxels.is_empty() {
            return Err(Error::EmptyRegion(self.name.clone()));
        }
        if let Some(&v) = self.voxels.iter().find(|&&v| v >= grid.n_voxels() || !grid.is_masked(v)) {
            return Err(Error::RegionOutsideMask(self.name.clone(), v));
        }
        Ok(())
    }
}

/// Intensity fields for one covariate profile, one row per draw.
pub fn intensity_draws(model: &Model, draws: &[ModelState], z: &[f64]) -> Result<Vec<Vec<f64>>> {
    if draws.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    let mut ws = model.make_workspace();
    draws.iter().map(|d| model.profile_intensity(d, z, &mut ws)).collect()
}

/// Posterior mean intensity per masked voxel.
pub fn intensity_mean(per_draw: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_draw.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    let vb = per_draw[0].len();
    let n = per_draw.len() as f64;
    let mut out = vec![0.0; vb];
    for (j, o) in out.iter_mut().enumerate() {
        let mut acc = math::CompensatedSum::new();
        for row in per_draw {
            acc.add(row[j]);
        }
        *o = acc.value() / n;
    }
    Ok(out)
}

/// Pointwise posterior quantiles of the intensity: one row per requested
/// probability, one column per masked voxel.
pub fn intensity_quantiles(per_draw: &[Vec<f64>], probs: &[f64]) -> Result<Vec<Vec<f64>>> {
    if per_draw.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::BadQuantile(p));
        }
    }
    let vb = per_draw[0].len();
    let mut out = vec![vec![0.0; vb]; probs.len()];
    let mut col = vec![0.0; per_draw.len()];
    for j in 0..vb {
        for (d, row) in per_draw.iter().enumerate() {
            col[d] = row[j];
        }
        col.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (pi, &p) in probs.iter().enumerate() {
            out[pi][j] = math::quantile_sorted(&col, p);
        }
    }
    Ok(out)
}

/// Expected focus count over a region: `sum_{v in B} A * lambda_v`.
pub fn expected_count(grid: &VoxelGrid, lam_masked: &[f64], region: &Region) -> Result<f64> {
    region.validate(grid)?;
    let a = grid.voxel_volume();
    let mut acc = math::CompensatedSum::new();
    for &v in &region.voxels {
        // validate() guarantees the rank exists.
        acc.add(a * lam_masked[grid.mask_rank(v).unwrap()]);
    }
    Ok(acc.value())
}

/// Probability that a study reports at least one focus in the region:
/// `1 - exp(-Lambda(B))`.
pub fn prob_at_least_one(grid: &VoxelGrid, lam_masked: &[f64], region: &Region) -> Result<f64> {
    Ok(1.0 - (-expected_count(grid, lam_masked, region)?).exp())
}

/// Probability that one focus, given that it occurred, fell in the region:
/// `Lambda(B) / Lambda(V)`.
pub fn conditional_focus_prob(grid: &VoxelGrid, lam_masked: &[f64], region: &Region) -> Result<f64> {
    region.validate(grid)?;
    let total: f64 = {
        let mut acc = math::CompensatedSum::new();
        for &x in lam_masked {
            acc.add(x);
        }
        acc.value() * grid.voxel_volume()
    };
    if !(total > 0.0) {
        return Err(Error::ZeroIntensityAtFocus(f64::NAN, f64::NAN, f64::NAN));
    }
    Ok(expected_count(grid, lam_masked, region)? / total)
}

/// Fraction of draws with `value > threshold`, per masked voxel. The
/// comparison is strict, so ties at the threshold count as not exceeding.
pub fn exceedance_probs(per_draw: &[Vec<f64>], threshold: f64) -> Result<Vec<f64>> {
    if per_draw.is_empty() {
        return Err(Error::TooFewDraws { got: 0, want: 1 });
    }
    let vb = per_draw[0].len();
    let n = per_draw.len() as f64;
    let mut out = vec![0.0; vb];
    for (j, o) in out.iter_mut().enumerate() {
        let hits = per_draw.iter().filter(|row| row[j] > threshold).count();
        *o = hits as f64 / n;
    }
    Ok(out)
}

/// Mean of paired per-draw differences over their sample standard deviation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct StdDiff {
    pub value: f64,
    /// True when the differences were (numerically) constant; `value` is 0
    /// then, rather than a 0/0.
    pub degenerate: bool,
}

/// Standardizes a series of per-draw differences.
pub fn standardized_difference(diffs: &[f64]) -> Result<StdDiff> {
    if diffs.len() < 2 {
        return Err(Error::TooFewDraws { got: diffs.len(), want: 2 });
    }
    let n = diffs.len() as f64;
    let mean = math::sum(diffs) / n;
    let mut acc = math::CompensatedSum::new();
    for &d in diffs {
        acc.add((d - mean) * (d - mean));
    }
    let sd = (acc.value() / (n - 1.0)).sqrt();
    if sd < 1e-12 {
        return Ok(StdDiff { value: 0.0, degenerate: true });
    }
    Ok(StdDiff { value: mean / sd, degenerate: false })
}

/// Mean, standard deviation and quantiles of one scalar series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarSummary {
    pub mean: f64,
    pub sd: f64,
    /// `(probability, value)` pairs in request order.
    pub quantiles: Vec<(f64, f64)>,
}

pub fn scalar_summary(xs: &[f64], probs: &[f64]) -> Result<ScalarSummary> {
    if xs.len() < 2 {
        return Err(Error::TooFewDraws { got: xs.len(), want: 2 });
    }
    for &p in probs {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::BadQuantile(p));
        }
    }
    let n = xs.len() as f64;
    let mean = math::sum(xs) / n;
    let mut acc = math::CompensatedSum::new();
    for &x in xs {
        acc.add((x - mean) * (x - mean));
    }
    let sd = (acc.value() / (n - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let quantiles = probs.iter().map(|&p| (p, math::quantile_sorted(&sorted, p))).collect();
    Ok(ScalarSummary { mean, sd, quantiles })
}
