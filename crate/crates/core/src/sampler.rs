//! Hamiltonian Monte Carlo over the packed model state.
//!
//! The integrator is a plain leapfrog with per-coordinate masses and
//! reflecting boundaries for the kernel-range coordinates, which live on a
//! bounded interval. Momenta are refreshed from `N(0, M)` each iteration and
//! the proposal is accepted with probability `min(1, exp(-dH))`.
//!
//! Step size is adapted during burn-in only: every `adapt_every` iterations
//! the trailing acceptance rate is compared against a 0.60..=0.70 target band
//! and the step size is scaled by 0.9 or 1.1 when outside it. After burn-in
//! the step size is frozen so the chain leaves detailed balance intact.
//!
//! A trajectory that produces a non-finite log-posterior or gradient is
//! treated as divergent: it is rejected outright and counted in
//! [`ChainMeta::n_divergent`]. This also covers range proposals whose
//! circulant embedding stops being positive semi-definite; those are mapped
//! to a `-inf` log-posterior rather than surfaced as errors.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::model::{Model, ModelState, StateShape, RHO_SCALE};
use crate::Result;

/// Tuning knobs for one HMC chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HmcConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    /// Iterations discarded before draws are collected.
    pub n_burnin: usize,
    /// Keep every `thin`-th post-burn-in state.
    pub thin: usize,
    /// Leapfrog steps per proposal.
    pub leapfrog_steps: usize,
    /// Initial step size.
    pub eps0: f64,
    /// Trailing window (in iterations) for the adaptation acceptance rate.
    pub adapt_window: usize,
    /// Adapt every this many iterations during burn-in.
    pub adapt_every: usize,
    /// Seed for the chain's own stream.
    pub seed: u64,
}

impl Default for HmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 6000,
            n_burnin: 1000,
            thin: 10,
            leapfrog_steps: 50,
            eps0: 1e-4,
            adapt_window: 100,
            adapt_every: 10,
            seed: 0,
        }
    }
}

impl HmcConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadSamplerConfig(m));
        if self.n_iter == 0 {
            return bad("n_iter must be at least 1".into());
        }
        if self.n_burnin >= self.n_iter {
            return bad(format!("n_burnin {} leaves no draws out of n_iter {}", self.n_burnin, self.n_iter));
        }
        if self.thin == 0 {
            return bad("thin must be at least 1".into());
        }
        if self.leapfrog_steps == 0 {
            return bad("leapfrog_steps must be at least 1".into());
        }
        if !(self.eps0.is_finite() && self.eps0 > 0.0) {
            return bad(format!("eps0 must be positive, got {}", self.eps0));
        }
        if self.adapt_window == 0 || self.adapt_every == 0 {
            return bad("adapt_window and adapt_every must be at least 1".into());
        }
        Ok(())
    }
}

/// One trace row per iteration; the field coefficients are left out to keep
/// the trace small.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iter: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_scaled: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_posterior: f64,
    pub accepted: bool,
    pub eps: f64,
}

/// Summary of a finished chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub n_iter: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub leapfrog_steps: usize,
    pub seed: u64,
    pub shape: StateShape,
    /// Fingerprint of grid plus data, for pairing draws with their inputs.
    pub data_fingerprint: u64,
    pub eps_final: f64,
    pub n_divergent: usize,
    /// Acceptance rate over post-burn-in iterations.
    pub accept_rate: f64,
}

/// Everything a chain produces: per-iteration trace, thinned full states,
/// and run metadata.
#[derive(Debug, Clone)]
pub struct Chain {
    pub trace: Vec<TraceRow>,
    /// Thinned post-burn-in states, each relabeled to the `sigma_l >= 0`
    /// representative of the model's sign symmetry (flipping `gamma_l` with
    /// it) so that scalar summaries are interpretable. The trace keeps raw
    /// coordinates.
    pub draws: Vec<ModelState>,
    pub meta: ChainMeta,
}

/// Reflecting bound for one coordinate: `(index, lo, hi)`.
pub type Bound = (usize, f64, f64);

/// Per-coordinate masses in packed order. Field coefficients get unit mass;
/// the handful of scalar coordinates are heavier so a step size tuned for
/// the fields does not fling them around.
fn mass_vector(shape: StateShape) -> Vec<f64> {
    let mut m = vec![1.0; shape.packed_len()];
    let ns = shape.n_spatial;
    for l in 0..ns {
        m[l] = 3.0; // mu
        m[ns + l] = 3.0; // sigma
        m[2 * ns + l] = 10.0; // rho_scaled
    }
    let beta_off = 3 * ns + ns * shape.torus_len;
    for k in 0..shape.n_global {
        m[beta_off + k] = 3.0;
    }
    m
}

/// Reflecting bounds for the kernel-range coordinates.
fn rho_bounds(shape: StateShape, rho_max: f64) -> Vec<Bound> {
    (0..shape.n_spatial).map(|l| (2 * shape.n_spatial + l, 0.0, RHO_SCALE * rho_max)).collect()
}

fn kinetic(p: &[f64], masses: &[f64]) -> f64 {
    let mut k = crate::math::CompensatedSum::new();
    for (pj, mj) in p.iter().zip(masses) {
        k.add(pj * pj / (2.0 * mj));
    }
    k.value()
}

fn reflect(q: &mut f64, p: &mut f64, lo: f64, hi: f64) {
    if (lo..=hi).contains(q) || !q.is_finite() {
        // Non-finite positions pass through; the next gradient evaluation
        // flags the trajectory as divergent.
        return;
    }
    // Fold the line into [lo, hi] as a triangle wave; an odd number of folds
    // flips the momentum. Closed form, so a wildly overshooting coordinate
    // (an exploding trajectory can move by 1e15 in one step) costs the same
    // as a small bounce instead of one loop turn per wall crossing.
    let width = hi - lo;
    let r = (*q - lo).rem_euclid(2.0 * width);
    if r <= width {
        *q = lo + r;
    } else {
        *q = hi - (r - width);
        *p = -*p;
    }
}

/// Runs `n_steps` of leapfrog integration in place and returns the
/// log-posterior at the final position, or `-inf` as soon as the trajectory
/// hits a non-finite value or gradient.
///
/// `grad` returns the log-posterior and its gradient at a position. The
/// integrator is time-reversible: negating the momentum and rerunning
/// retraces the path up to floating-point roundoff.
pub fn leapfrog<F>(
    q: &mut [f64],
    p: &mut [f64],
    masses: &[f64],
    bounds: &[Bound],
    eps: f64,
    n_steps: usize,
    mut grad: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let diverged = |lp: f64, g: &[f64]| !lp.is_finite() || g.iter().any(|x| !x.is_finite());
    let (lp0, mut g) = grad(q)?;
    if diverged(lp0, &g) {
        return Ok(f64::NEG_INFINITY);
    }
    for (pj, gj) in p.iter_mut().zip(&g) {
        *pj += 0.5 * eps * gj;
    }
    let mut lp = lp0;
    for step in 0..n_steps {
        for ((qj, pj), mj) in q.iter_mut().zip(p.iter()).zip(masses) {
            *qj += eps * pj / mj;
        }
        for &(idx, lo, hi) in bounds {
            reflect(&mut q[idx], &mut p[idx], lo, hi);
        }
        let out = grad(q)?;
        lp = out.0;
        g = out.1;
        if diverged(lp, &g) {
            return Ok(f64::NEG_INFINITY);
        }
        let half = if step + 1 == n_steps { 0.5 } else { 1.0 };
        for (pj, gj) in p.iter_mut().zip(&g) {
            *pj += half * eps * gj;
        }
    }
    Ok(lp)
}

/// Outcome of one HMC transition.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub accepted: bool,
    pub divergent: bool,
    /// Log-posterior of the retained state.
    pub log_posterior: f64,
}

/// One HMC transition: refresh momentum, integrate, accept or reject.
///
/// `q` and `lp` hold the current position and its log-posterior and are
/// updated in place on acceptance.
pub fn hmc_step<F>(
    q: &mut [f64],
    lp: &mut f64,
    masses: &[f64],
    bounds: &[Bound],
    eps: f64,
    n_steps: usize,
    rng: &mut ChaCha20Rng,
    grad: F,
) -> Result<StepOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut p: Vec<f64> = masses
        .iter()
        .map(|&m| {
            let z: f64 = rng.sample(StandardNormal);
            z * m.sqrt()
        })
        .collect();
    let h0 = -*lp + kinetic(&p, masses);

    let mut q_new = q.to_vec();
    let lp_new = leapfrog(&mut q_new, &mut p, masses, bounds, eps, n_steps, grad)?;
    // The uniform draw happens even on divergence so the RNG stream does not
    // depend on trajectory outcomes.
    let u: f64 = rng.random();
    if !lp_new.is_finite() {
        return Ok(StepOutcome { accepted: false, divergent: true, log_posterior: *lp });
    }
    let h1 = -lp_new + kinetic(&p, masses);
    let log_accept = h0 - h1;
    if !log_accept.is_finite() {
        return Ok(StepOutcome { accepted: false, divergent: true, log_posterior: *lp });
    }
    if log_accept >= 0.0 || u < log_accept.exp() {
        q.copy_from_slice(&q_new);
        *lp = lp_new;
        Ok(StepOutcome { accepted: true, divergent: false, log_posterior: lp_new })
    } else {
        Ok(StepOutcome { accepted: false, divergent: false, log_posterior: *lp })
    }
}

/// Scales the step size by the trailing acceptance rate: shrink below 0.60,
/// grow above 0.70, hold inside the band.
pub fn adapt_stepsize(eps: f64, accept_rate: f64) -> f64 {
    if accept_rate < 0.60 {
        0.9 * eps
    } else if accept_rate > 0.70 {
        1.1 * eps
    } else {
        eps
    }
}

/// Runs one HMC chain from `init`.
///
/// The step size adapts during burn-in from the trailing acceptance rate,
/// then freezes for the sampling phase at the geometric mean of the step
/// sizes used over the second half of burn-in.
///
/// The chain's randomness comes entirely from `cfg.seed`, and every
/// arithmetic path in the model is deterministic, so two runs with the same
/// inputs produce bitwise-identical output regardless of thread count.
///
/// Fails with [`Error::BadInit`] when the initial state has a non-finite
/// log-posterior. On a coarse grid this can happen because the initial
/// kernel range embeds indefinitely; start from a shorter range (larger
/// `rho_scaled`) in that case.
pub fn run_chain(model: &Model, init: &ModelState, cfg: &HmcConfig) -> Result<Chain> {
    cfg.validate()?;
    init.check_shape(model.shape())?;
    let shape = model.shape();
    let masses = mass_vector(shape);
    let bounds = rho_bounds(shape, model.priors().rho_max);
    let mut ws = model.make_workspace();

    let mut eval = |packed: &[f64]| -> Result<(f64, Vec<f64>)> {
        let st = ModelState::unpack(packed, shape)?;
        match model.log_posterior_and_grad(&st, &mut ws) {
            Ok(out) => Ok(out),
            Err(Error::NonPsdEmbedding { rho, .. }) => {
                warn!("rejecting range proposal rho={rho}: embedding not positive semi-definite");
                Ok((f64::NEG_INFINITY, vec![0.0; shape.packed_len()]))
            }
            Err(e) => Err(e),
        }
    };

    let mut q = init.pack();
    let (mut lp, _) = eval(&q)?;
    if !lp.is_finite() {
        return Err(Error::BadInit(lp));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut eps = cfg.eps0;
    let mut accepts: Vec<bool> = Vec::with_capacity(cfg.n_iter);
    let mut trace = Vec::with_capacity(cfg.n_iter);
    let mut draws = Vec::new();
    let mut n_divergent = 0usize;

    for t in 0..cfg.n_iter {
        let out = hmc_step(&mut q, &mut lp, &masses, &bounds, eps, cfg.leapfrog_steps, &mut rng, &mut eval)?;
        if out.divergent {
            n_divergent += 1;
            warn!("iteration {t}: divergent trajectory rejected (eps={eps:.3e})");
        }
        accepts.push(out.accepted);

        let mut st = ModelState::unpack(&q, shape)?;
        trace.push(TraceRow {
            iter: t,
            mu: st.mu.clone(),
            sigma: st.sigma.clone(),
            rho_scaled: st.rho_scaled.clone(),
            beta: st.beta.clone(),
            log_posterior: lp,
            accepted: out.accepted,
            eps,
        });
        if t >= cfg.n_burnin && (t - cfg.n_burnin) % cfg.thin == 0 {
            // The posterior is exactly invariant under (sigma_l, gamma_l) ->
            // (-sigma_l, -gamma_l), so the sign of sigma_l is an arbitrary
            // label. Store the sigma_l >= 0 representative of each kept draw
            // so that scalar summaries are interpretable; the trace keeps the
            // raw coordinates so mode flips stay visible.
            for l in 0..shape.n_spatial {
                if st.sigma[l] < 0.0 {
                    st.sigma[l] = -st.sigma[l];
                    for x in st.gamma[l].iter_mut() {
                        *x = -*x;
                    }
                }
            }
            draws.push(st);
        }

        // Burn-in adaptation on the trailing window; early windows use
        // whatever history exists.
        let done = t + 1;
        if done <= cfg.n_burnin && done % cfg.adapt_every == 0 {
            let w = cfg.adapt_window.min(done);
            let hits = accepts[done - w..].iter().filter(|&&a| a).count();
            eps = adapt_stepsize(eps, hits as f64 / w as f64);
        }
        // Freeze the sampling step size to the geometric mean over the second
        // half of burn-in rather than the instantaneous last value. On stiff
        // posteriors the multiplicative rule rides a slow limit cycle around
        // the divergence threshold, and the final value is a random phase of
        // that cycle; the running mean is its center. On smooth targets the
        // trajectory is flat by then and the mean changes nothing.
        if done == cfg.n_burnin {
            let w = cfg.adapt_window.max(cfg.n_burnin / 2).min(cfg.n_burnin);
            let mean_log = trace[cfg.n_burnin - w..].iter().map(|r| r.eps.ln()).sum::<f64>() / w as f64;
            eps = mean_log.exp();
        }
    }

    let post: &[bool] = &accepts[cfg.n_burnin..];
    let accept_rate = post.iter().filter(|&&a| a).count() as f64 / post.len() as f64;
    Ok(Chain {
        trace,
        draws,
        meta: ChainMeta {
            n_iter: cfg.n_iter,
            n_burnin: cfg.n_burnin,
            thin: cfg.thin,
            leapfrog_steps: cfg.leapfrog_steps,
            seed: cfg.seed,
            shape,
            data_fingerprint: model.data().fingerprint(model.grid()),
            eps_final: eps,
            n_divergent,
            accept_rate,
        },
    })
}
