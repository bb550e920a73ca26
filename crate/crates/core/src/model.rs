//! Discretized LGCP posterior: data structures, log-density and analytic
//! gradients in the packed parametrization used by the sampler.
//!
//! # Likelihood
//!
//! With `A` the voxel volume and `lambda_iv` the intensity of study `i` in
//! masked voxel `v`,
//!
//! ```text
//! log L = sum_i [ -sum_v A lambda_iv + sum_{foci x of i} log lambda_{i,v(x)} ]
//! log lambda_iv = sum_{l<=K*} (mu_l + sigma_l (R_l^{1/2} gamma_l)_v) z_il
//!               + sum_{k>K*} beta_k z_ik
//! ```
//!
//! Priors: `mu, sigma, beta ~ N(0, tau2)`, `gamma_l ~ N(0, I)` on the full
//! torus, `rho_l ~ Uniform(0, rho_max]` (flat inside, `-inf` outside). The
//! sampled scale for the correlation decay is `rho_scaled = 100 rho`.
//!
//! # Gradients
//!
//! Everything routes through the per-voxel residual
//! `c_lv = sum_i z_il (A lambda_iv - n_iv)` with `n_iv` the focus count:
//!
//! ```text
//! d/d mu_l    = -sum_v c_lv                               - mu_l / tau2
//! d/d sigma_l = -sum_v (R_l^{1/2} gamma_l)_v c_lv         - sigma_l / tau2
//! d/d gamma_l = -sigma_l R_l^{1/2} c_l                    - gamma_l
//! d/d rho_l   = (sigma_l / 2) sum_v (Q_l gamma_l)_v c_lv
//! d/d beta_k  = -sum_v c_kv                               - beta_k / tau2
//! ```
//!
//! `R^{1/2}` is self-adjoint, so the gamma line applies it to `c_l` zero-padded
//! onto the torus. The `rho_scaled` coordinate carries an extra factor 1/100.
//!
//! Studies sharing a spatial covariate profile share their exponentiated
//! field, so the heavy per-voxel work scales with the number of distinct
//! profiles rather than the number of studies. All reductions use compensated
//! summation in a fixed order; results do not depend on the thread count.

use serde::{Deserialize, Serialize};

use crate::grid::VoxelGrid;
use crate::kernel::{KernelPlan, KernelScratch, SpectralKernel};
use crate::math::{self, CompensatedSum};
use crate::{Error, Result};

/// Correlation shape exponent; fixed, not sampled.
pub const DELTA: f64 = 2.0;

/// Rescaling between the sampled coordinate and the kernel decay.
pub const RHO_SCALE: f64 = 100.0;

/// One study: identifier, covariate row (index 0 is the intercept, always 1)
/// and foci as linear voxel indices inside the mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub id: String,
    pub z: Vec<f64>,
    pub foci: Vec<usize>,
}

/// Validated collection of studies with a common covariate layout.
///
/// Covariates `0..=k_star` multiply spatially varying effects; the rest are
/// global scalars.
#[derive(Debug, Clone)]
pub struct StudySet {
    studies: Vec<Study>,
    k_star: usize,
}

impl StudySet {
    pub fn new(studies: Vec<Study>, k_star: usize, grid: &VoxelGrid) -> Result<Self> {
        if studies.is_empty() {
            return Err(Error::NoStudies);
        }
        let len = studies[0].z.len();
        if k_star + 1 > len {
            return Err(Error::KStarOutOfRange { k_star, n_covariates: len.saturating_sub(1) });
        }
        for s in &studies {
            if s.z.len() != len {
                return Err(Error::CovariateLength { study_id: s.id.clone(), got: s.z.len(), want: len });
            }
            if s.z[0] != 1.0 {
                return Err(Error::InterceptNotOne { study_id: s.id.clone(), got: s.z[0] });
            }
            for (f, &v) in s.foci.iter().enumerate() {
                if v >= grid.n_voxels() || !grid.is_masked(v) {
                    return Err(Error::FocusVoxelOutsideMask { study_id: s.id.clone(), focus: f, voxel: v });
                }
            }
        }
        Ok(Self { studies, k_star })
    }

    pub fn studies(&self) -> &[Study] {
        &self.studies
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn k_star(&self) -> usize {
        self.k_star
    }

    /// Number of covariates beyond the intercept (K).
    pub fn n_covariates(&self) -> usize {
        self.studies[0].z.len() - 1
    }

    /// Spatially varying effects, K* + 1 including the intercept field.
    pub fn n_spatial(&self) -> usize {
        self.k_star + 1
    }

    pub fn n_global(&self) -> usize {
        self.n_covariates() - self.k_star
    }

    pub fn total_foci(&self) -> usize {
        self.studies.iter().map(|s| s.foci.len()).sum()
    }

    /// Identity tag over grid geometry and study content, for chain metadata.
    pub fn fingerprint(&self, grid: &VoxelGrid) -> u64 {
        let mut h = math::Fnv1a::new();
        for d in grid.dims() {
            h.update(&(d as u64).to_le_bytes());
        }
        h.update_f64(grid.voxel_size_mm());
        for o in grid.origin_mm() {
            h.update_f64(o);
        }
        for &m in grid.mask() {
            h.update(&[m as u8]);
        }
        h.update(&(self.k_star as u64).to_le_bytes());
        for s in &self.studies {
            h.update(s.id.as_bytes());
            h.update(&[0xff]);
            for &z in &s.z {
                h.update_f64(z);
            }
            for &f in &s.foci {
                h.update(&(f as u64).to_le_bytes());
            }
        }
        h.finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorConfig {
    /// Variance of the normal priors on mu, sigma and beta.
    pub tau2: f64,
    /// Upper bound of the uniform prior on rho (decay in mm units, before
    /// the factor-100 sampling scale).
    pub rho_max: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self { tau2: 1e8, rho_max: 100.0 }
    }
}

/// Dimensions of a model state, enough to pack and unpack it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateShape {
    pub n_spatial: usize,
    pub torus_len: usize,
    pub n_global: usize,
}

impl StateShape {
    pub fn packed_len(&self) -> usize {
        self.n_spatial * (3 + self.torus_len) + self.n_global
    }
}

/// Model parameters in natural blocks. `gamma[l]` lives on the full
/// embedding torus; `rho_scaled` is 100 times the kernel decay.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_scaled: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
}

impl ModelState {
    pub fn zeros(shape: StateShape) -> Self {
        Self {
            mu: vec![0.0; shape.n_spatial],
            sigma: vec![0.0; shape.n_spatial],
            rho_scaled: vec![0.0; shape.n_spatial],
            gamma: vec![vec![0.0; shape.torus_len]; shape.n_spatial],
            beta: vec![0.0; shape.n_global],
        }
    }

    pub fn shape(&self) -> StateShape {
        StateShape {
            n_spatial: self.mu.len(),
            torus_len: self.gamma.first().map_or(0, Vec::len),
            n_global: self.beta.len(),
        }
    }

    pub(crate) fn check_shape(&self, shape: StateShape) -> Result<()> {
        let ok = self.mu.len() == shape.n_spatial
            && self.sigma.len() == shape.n_spatial
            && self.rho_scaled.len() == shape.n_spatial
            && self.gamma.len() == shape.n_spatial
            && self.gamma.iter().all(|g| g.len() == shape.torus_len)
            && self.beta.len() == shape.n_global;
        if ok {
            Ok(())
        } else {
            Err(Error::StateShape(format!("expected {shape:?}, got {:?}", self.shape())))
        }
    }

    /// Flattens to the sampler layout: all mu, all sigma, all rho_scaled,
    /// each gamma block, then the global betas.
    pub fn pack(&self) -> Vec<f64> {
        let shape = self.shape();
        let mut out = Vec::with_capacity(shape.packed_len());
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.sigma);
        out.extend_from_slice(&self.rho_scaled);
        for g in &self.gamma {
            out.extend_from_slice(g);
        }
        out.extend_from_slice(&self.beta);
        out
    }

    pub fn unpack(packed: &[f64], shape: StateShape) -> Result<Self> {
        if packed.len() != shape.packed_len() {
            return Err(Error::PackedLength { got: packed.len(), want: shape.packed_len() });
        }
        let s = shape.n_spatial;
        let v = shape.torus_len;
        let mut gamma = Vec::with_capacity(s);
        for l in 0..s {
            gamma.push(packed[3 * s + l * v..3 * s + (l + 1) * v].to_vec());
        }
        Ok(Self {
            mu: packed[0..s].to_vec(),
            sigma: packed[s..2 * s].to_vec(),
            rho_scaled: packed[2 * s..3 * s].to_vec(),
            gamma,
            beta: packed[3 * s + s * v..].to_vec(),
        })
    }
}

/// Studies grouped by identical spatial covariate profile; members index into
/// the study list.
struct Group {
    spatial_z: Vec<f64>,
    members: Vec<usize>,
}

/// Reusable buffers for one in-flight posterior/gradient evaluation.
pub struct Workspace {
    kernel: KernelScratch,
    /// Spectral kernel per spatial effect, reused while its rho is unchanged
    /// (repeated evaluations at the same state, and the within-evaluation
    /// reuse between the field build and the gamma gradient).
    kern: Vec<Option<SpectralKernel>>,
    /// R^{1/2} gamma_l on the torus, per spatial effect.
    s_field: Vec<Vec<f64>>,
    /// Q gamma_l on the torus, per spatial effect.
    q_field: Vec<Vec<f64>>,
    /// mu_l + sigma_l s_l at masked voxels.
    b_masked: Vec<Vec<f64>>,
    /// exp(eta) per spatial profile group, masked voxels.
    group_exp: Vec<Vec<f64>>,
    /// Residual c_l at masked voxels.
    resid: Vec<Vec<f64>>,
    /// Torus-padded residual and its smoothed image.
    pad: Vec<f64>,
    smoothed: Vec<f64>,
}

/// The LGCP posterior over one study set, ready for repeated evaluation.
pub struct Model {
    grid: VoxelGrid,
    data: StudySet,
    priors: PriorConfig,
    plan: KernelPlan,
    groups: Vec<Group>,
    /// Group index of each study.
    group_of: Vec<usize>,
    /// For spatial l: sum_i z_il n_iv, dense over masked voxels.
    focus_sums: Vec<Vec<f64>>,
    /// For global k: sum_i z_ik n_i.
    nz_global: Vec<f64>,
    /// For spatial l: sum_i z_il n_i (used for reporting/tests).
    nz_spatial: Vec<f64>,
}

impl Model {
    pub fn new(grid: VoxelGrid, data: StudySet, priors: PriorConfig) -> Result<Self> {
        if !(priors.tau2.is_finite() && priors.tau2 > 0.0) {
            return Err(Error::BadKernelParam(format!("tau2 must be positive, got {}", priors.tau2)));
        }
        if !(priors.rho_max.is_finite() && priors.rho_max > 0.0) {
            return Err(Error::BadKernelParam(format!("rho_max must be positive, got {}", priors.rho_max)));
        }
        let plan = KernelPlan::new(&grid, DELTA)?;
        let n_spatial = data.n_spatial();
        let vb = grid.n_masked();

        let mut groups: Vec<Group> = Vec::new();
        let mut group_of = vec![0usize; data.n_studies()];
        for (i, s) in data.studies().iter().enumerate() {
            let key = &s.z[..n_spatial];
            match groups.iter().position(|g| g.spatial_z == key) {
                Some(g) => {
                    groups[g].members.push(i);
                    group_of[i] = g;
                }
                None => {
                    groups.push(Group { spatial_z: key.to_vec(), members: vec![i] });
                    group_of[i] = groups.len() - 1;
                }
            }
        }

        let mut focus_sums = vec![vec![0.0; vb]; n_spatial];
        let mut nz_spatial = vec![0.0; n_spatial];
        let mut nz_global = vec![0.0; data.n_global()];
        for s in data.studies() {
            let n = s.foci.len() as f64;
            for l in 0..n_spatial {
                nz_spatial[l] += n * s.z[l];
            }
            for k in 0..data.n_global() {
                nz_global[k] += n * s.z[n_spatial + k];
            }
            for &v in &s.foci {
                let r = grid.mask_rank(v).expect("validated focus");
                for l in 0..n_spatial {
                    focus_sums[l][r] += s.z[l];
                }
            }
        }

        Ok(Self { grid, data, priors, plan, groups, group_of, focus_sums, nz_global, nz_spatial })
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn data(&self) -> &StudySet {
        &self.data
    }

    pub fn priors(&self) -> PriorConfig {
        self.priors
    }

    pub fn plan(&self) -> &KernelPlan {
        &self.plan
    }

    pub fn shape(&self) -> StateShape {
        StateShape {
            n_spatial: self.data.n_spatial(),
            torus_len: self.grid.n_torus(),
            n_global: self.data.n_global(),
        }
    }

    pub fn make_workspace(&self) -> Workspace {
        let s = self.data.n_spatial();
        let ve = self.grid.n_torus();
        let vb = self.grid.n_masked();
        Workspace {
            kernel: self.plan.make_scratch(),
            kern: (0..s).map(|_| None).collect(),
            s_field: vec![vec![0.0; ve]; s],
            q_field: vec![vec![0.0; ve]; s],
            b_masked: vec![vec![0.0; vb]; s],
            group_exp: vec![vec![0.0; vb]; self.groups.len()],
            resid: vec![vec![0.0; vb]; s],
            pad: vec![0.0; ve],
            smoothed: vec![0.0; ve],
        }
    }

    /// Chain starting point: intercept level matched to the observed mean
    /// count, unit field scales, flat fields, and the longest correlation
    /// range from a fixed ladder whose torus embedding is positive
    /// semidefinite (long ranges on small tori are not; starting there would
    /// make the initial posterior undefined).
    pub fn default_init(&self) -> ModelState {
        let shape = self.shape();
        let mut st = ModelState::zeros(shape);
        // A dataset with zero foci would put the matched intercept at -inf;
        // floor the count at one focus to stay finite.
        let total = self.data.total_foci().max(1) as f64;
        let denom = self.data.n_studies() as f64 * self.grid.n_masked() as f64 * self.grid.voxel_volume();
        st.mu[0] = (total / denom).ln();

        let max_scaled = RHO_SCALE * self.priors.rho_max;
        let mut scratch = self.plan.make_scratch();
        let mut chosen = max_scaled;
        for cand in [1.0f64, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 35.0, 60.0, 100.0, 1e3, 1e4] {
            let cand = cand.min(max_scaled);
            if SpectralKernel::build(&self.plan, cand / RHO_SCALE, &mut scratch).is_ok() {
                chosen = cand;
                break;
            }
        }
        for l in 0..shape.n_spatial {
            st.sigma[l] = 1.0;
            st.rho_scaled[l] = chosen;
        }
        st
    }

    /// Like [`Model::default_init`], but draws the field innovations from
    /// their prior instead of starting them flat. A flat start sits far from
    /// prior-typical field norms, and on grids with tens of thousands of
    /// torus sites the sampler spends thousands of iterations inflating the
    /// innovations before anything else mixes; a prior draw starts at typical
    /// norm. Deterministic in `seed`.
    pub fn prior_init(&self, seed: u64) -> ModelState {
        use rand::prelude::*;
        let mut st = self.default_init();
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        for g in st.gamma.iter_mut() {
            for x in g.iter_mut() {
                *x = rng.sample(rand_distr::StandardNormal);
            }
        }
        st
    }

    fn rho_in_bounds(&self, state: &ModelState) -> bool {
        state
            .rho_scaled
            .iter()
            .all(|&r| r.is_finite() && r > 0.0 && r <= RHO_SCALE * self.priors.rho_max)
    }

    /// Builds kernels and spatial fields for the current state. Returns false
    /// without touching the workspace when rho is outside its support.
    fn prepare_fields(&self, state: &ModelState, ws: &mut Workspace, want_q: bool) -> Result<bool> {
        state.check_shape(self.shape())?;
        if !self.rho_in_bounds(state) {
            return Ok(false);
        }
        for l in 0..self.data.n_spatial() {
            let rho = state.rho_scaled[l] / RHO_SCALE;
            if !ws.kern[l].as_ref().is_some_and(|k| k.rho() == rho) {
                ws.kern[l] = Some(SpectralKernel::build(&self.plan, rho, &mut ws.kernel)?);
            }
            let kern = ws.kern[l].as_ref().unwrap();
            if want_q {
                let (s, q) = (&mut ws.s_field[l], &mut ws.q_field[l]);
                kern.sqrt_and_drho_apply(&self.plan, &state.gamma[l], s, q, &mut ws.kernel);
            } else {
                kern.sqrt_apply(&self.plan, &state.gamma[l], &mut ws.s_field[l], &mut ws.kernel);
            }
            let (mu_l, sigma_l) = (state.mu[l], state.sigma[l]);
            let s_field = &ws.s_field[l];
            let torus = self.grid.masked_torus();
            let b = &mut ws.b_masked[l];
            for (j, &t) in torus.iter().enumerate() {
                b[j] = mu_l + sigma_l * s_field[t];
            }
        }
        // exp(eta) per spatial profile group.
        let n_spatial = self.data.n_spatial();
        let vb = self.grid.n_masked();
        for (g, group) in self.groups.iter().enumerate() {
            let e = &mut ws.group_exp[g];
            for j in 0..vb {
                let mut eta = 0.0;
                for l in 0..n_spatial {
                    eta += group.spatial_z[l] * ws.b_masked[l][j];
                }
                e[j] = eta.exp();
            }
        }
        Ok(true)
    }

    /// exp of the global covariate part per study.
    fn global_factors(&self, state: &ModelState) -> Vec<f64> {
        let n_spatial = self.data.n_spatial();
        self.data
            .studies()
            .iter()
            .map(|s| {
                let mut g = 0.0;
                for (k, &b) in state.beta.iter().enumerate() {
                    g += b * s.z[n_spatial + k];
                }
                g.exp()
            })
            .collect()
    }

    /// Per-study intensity over masked voxels, in study order.
    ///
    /// Errors if any value exceeds 1e300, naming the study.
    pub fn intensity(&self, state: &ModelState, ws: &mut Workspace) -> Result<Vec<Vec<f64>>> {
        if !self.prepare_fields(state, ws, false)? {
            return Err(Error::BadKernelParam(format!(
                "rho_scaled {:?} outside (0, {}]",
                state.rho_scaled,
                RHO_SCALE * self.priors.rho_max
            )));
        }
        let m = self.global_factors(state);
        let mut out = Vec::with_capacity(self.data.n_studies());
        for (i, s) in self.data.studies().iter().enumerate() {
            let row: Vec<f64> = ws.group_exp[self.group_of[i]].iter().map(|&e| e * m[i]).collect();
            if row.iter().any(|&v| !(v <= 1e300)) {
                return Err(Error::IntensityOverflow { study_id: s.id.clone() });
            }
            out.push(row);
        }
        Ok(out)
    }

    /// Intensity over masked voxels for one covariate profile `z` (full
    /// vector, intercept first), rather than for a stored study.
    pub fn profile_intensity(&self, state: &ModelState, z: &[f64], ws: &mut Workspace) -> Result<Vec<f64>> {
        let shape = self.shape();
        let want = shape.n_spatial + shape.n_global;
        if z.len() != want {
            return Err(Error::CovariateLength { study_id: "<profile>".into(), got: z.len(), want });
        }
        if z[0] != 1.0 {
            return Err(Error::InterceptNotOne { study_id: "<profile>".into(), got: z[0] });
        }
        if !self.prepare_fields(state, ws, false)? {
            return Err(Error::BadKernelParam(format!(
                "rho_scaled {:?} outside (0, {}]",
                state.rho_scaled,
                RHO_SCALE * self.priors.rho_max
            )));
        }
        let mut global = 0.0;
        for k in 0..shape.n_global {
            global += state.beta[k] * z[shape.n_spatial + k];
        }
        let vb = self.grid.n_masked();
        let mut out = vec![0.0; vb];
        for j in 0..vb {
            let mut eta = global;
            for l in 0..shape.n_spatial {
                eta += z[l] * ws.b_masked[l][j];
            }
            out[j] = eta.exp();
        }
        if out.iter().any(|&v| !(v <= 1e300)) {
            return Err(Error::IntensityOverflow { study_id: "<profile>".into() });
        }
        Ok(out)
    }

    /// Log-likelihood of the discretized process (no priors).
    pub fn log_likelihood(&self, state: &ModelState, ws: &mut Workspace) -> Result<f64> {
        if !self.prepare_fields(state, ws, false)? {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(self.log_likelihood_prepared(state, ws))
    }

    fn log_likelihood_prepared(&self, state: &ModelState, ws: &Workspace) -> f64 {
        let a = self.grid.voxel_volume();
        let m = self.global_factors(state);

        let mut acc = CompensatedSum::new();
        for (g, group) in self.groups.iter().enumerate() {
            let mut mg = CompensatedSum::new();
            for &i in &group.members {
                mg.add(m[i]);
            }
            let sg = math::par_sum(&ws.group_exp[g]);
            acc.add(-a * mg.value() * sg);
        }
        for l in 0..self.data.n_spatial() {
            acc.add(math::dot(&self.focus_sums[l], &ws.b_masked[l]));
        }
        for (k, &b) in state.beta.iter().enumerate() {
            acc.add(b * self.nz_global[k]);
        }
        acc.value()
    }

    /// Gaussian log-priors plus the flat-rho indicator; the additive constant
    /// is dropped.
    pub fn log_prior(&self, state: &ModelState) -> f64 {
        if !self.rho_in_bounds(state) {
            return f64::NEG_INFINITY;
        }
        let tau2 = self.priors.tau2;
        let mut acc = CompensatedSum::new();
        for l in 0..state.mu.len() {
            acc.add(-state.mu[l] * state.mu[l] / (2.0 * tau2));
            acc.add(-state.sigma[l] * state.sigma[l] / (2.0 * tau2));
            acc.add(-0.5 * math::dot(&state.gamma[l], &state.gamma[l]));
        }
        for &b in &state.beta {
            acc.add(-b * b / (2.0 * tau2));
        }
        acc.value()
    }

    /// Unnormalized log-posterior; `-inf` when rho is outside its support.
    pub fn log_posterior(&self, state: &ModelState, ws: &mut Workspace) -> Result<f64> {
        Ok(self.log_likelihood(state, ws)? + self.log_prior(state))
    }

    /// Gradient of the log-posterior with respect to the packed state.
    pub fn grad(&self, state: &ModelState, ws: &mut Workspace) -> Result<Vec<f64>> {
        self.log_posterior_and_grad(state, ws).map(|(_, g)| g)
    }

    /// Fused evaluation; the sampler calls this once per leapfrog step.
    ///
    /// When rho is outside its support the value is `-inf` and the gradient
    /// is zero (the proposal is doomed regardless).
    pub fn log_posterior_and_grad(&self, state: &ModelState, ws: &mut Workspace) -> Result<(f64, Vec<f64>)> {
        let shape = self.shape();
        if !self.prepare_fields(state, ws, true)? {
            return Ok((f64::NEG_INFINITY, vec![0.0; shape.packed_len()]));
        }
        let value = self.log_likelihood_prepared(state, ws) + self.log_prior(state);

        let a = self.grid.voxel_volume();
        let tau2 = self.priors.tau2;
        let n_spatial = shape.n_spatial;
        let vb = self.grid.n_masked();
        let m = self.global_factors(state);

        // Group weights: plain sums and global-covariate weighted sums.
        let mut mg = vec![0.0; self.groups.len()];
        let mut mg_global = vec![vec![0.0; self.groups.len()]; shape.n_global];
        for (g, group) in self.groups.iter().enumerate() {
            let mut acc = CompensatedSum::new();
            for &i in &group.members {
                acc.add(m[i]);
            }
            mg[g] = acc.value();
            for k in 0..shape.n_global {
                let mut acc = CompensatedSum::new();
                for &i in &group.members {
                    acc.add(m[i] * self.data.studies()[i].z[n_spatial + k]);
                }
                mg_global[k][g] = acc.value();
            }
        }
        let sg: Vec<f64> = ws.group_exp.iter().map(|e| math::par_sum(e)).collect();

        // Residuals c_l = A sum_g z_gl M_g e_g - focus_sums_l.
        for l in 0..n_spatial {
            let c = &mut ws.resid[l];
            c.copy_from_slice(&self.focus_sums[l]);
            for x in c.iter_mut() {
                *x = -*x;
            }
            for (g, group) in self.groups.iter().enumerate() {
                let w = a * group.spatial_z[l] * mg[g];
                if w == 0.0 {
                    continue;
                }
                let e = &ws.group_exp[g];
                for j in 0..vb {
                    c[j] += w * e[j];
                }
            }
        }

        let mut grad = vec![0.0; shape.packed_len()];
        let torus = self.grid.masked_torus();
        for l in 0..n_spatial {
            let c = &ws.resid[l];
            grad[l] = -math::par_sum(c) - state.mu[l] / tau2;

            let mut ds = CompensatedSum::new();
            let mut dr = CompensatedSum::new();
            let (s_f, q_f) = (&ws.s_field[l], &ws.q_field[l]);
            for (j, &t) in torus.iter().enumerate() {
                ds.add(s_f[t] * c[j]);
                dr.add(q_f[t] * c[j]);
            }
            grad[n_spatial + l] = -ds.value() - state.sigma[l] / tau2;
            grad[2 * n_spatial + l] = 0.5 * state.sigma[l] * dr.value() / RHO_SCALE;

            // gamma block: -sigma_l R^{1/2} pad(c_l) - gamma_l.
            ws.pad.iter_mut().for_each(|x| *x = 0.0);
            for (j, &t) in torus.iter().enumerate() {
                ws.pad[t] = c[j];
            }
            // prepare_fields cached the kernel for this rho above.
            let kern = ws.kern[l].as_ref().expect("fields prepared");
            kern.sqrt_apply(&self.plan, &ws.pad, &mut ws.smoothed, &mut ws.kernel);
            let out = &mut grad[3 * n_spatial + l * shape.torus_len..3 * n_spatial + (l + 1) * shape.torus_len];
            let sigma_l = state.sigma[l];
            let gamma_l = &state.gamma[l];
            for (o, (sm, gm)) in out.iter_mut().zip(ws.smoothed.iter().zip(gamma_l)) {
                *o = -sigma_l * sm - gm;
            }
        }
        let beta_off = 3 * n_spatial + n_spatial * shape.torus_len;
        for k in 0..shape.n_global {
            let mut acc = CompensatedSum::new();
            for g in 0..self.groups.len() {
                acc.add(mg_global[k][g] * sg[g]);
            }
            grad[beta_off + k] = -a * acc.value() + self.nz_global[k] - state.beta[k] / tau2;
        }
        Ok((value, grad))
    }

    /// sum_i z_il n_i for spatial effects; exposed for reporting.
    pub fn focus_totals_spatial(&self) -> &[f64] {
        &self.nz_spatial
    }
}
