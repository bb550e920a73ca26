//! Circulant embedding of the power-exponential correlation
//! `r(x, x') = exp(-rho |x - x'|^delta)` on the padded torus, and the FFT
//! operators derived from it.
//!
//! For a stationary correlation on the torus the covariance matrix is
//! block-circulant, so its eigenvalues are the DFT of the first column (the
//! base vector) and every matrix function is a Fourier multiplier:
//!
//! ```text
//! R x        = IDFT( phi          . DFT(x) ),   phi = DFT(base)
//! R^{1/2} x  = IDFT( sqrt(phi)    . DFT(x) )
//! Q x        = IDFT( psi/sqrt(phi). DFT(x) ),   psi = DFT(d^delta . base)
//! ```
//!
//! `d` is the minimum-image torus distance in mm. Differentiating the base in
//! rho gives `d phi / d rho = -psi`, hence `d(R^{1/2} x)/d rho = -Q x / 2`,
//! which is what the sampler's rho gradient consumes.
//!
//! Tiny negative eigenvalues from the truncated embedding are clamped to zero
//! when they are within `1e-6` of the spectral maximum; anything larger is a
//! hard error, since sampling from such an embedding would be wrong.

use rustfft::num_complex::Complex64;

use crate::fft::{Fft3, FftScratch};
use crate::grid::VoxelGrid;
use crate::{Error, Result};

/// Relative tolerance for clamping round-off negatives in the spectrum.
const PSD_REL_TOL: f64 = 1e-6;

/// Per-grid data shared by every kernel built on the same torus: the FFT
/// plans and the `d^delta` table over torus offsets.
pub struct KernelPlan {
    delta: f64,
    fft: Fft3,
    dpow: Vec<f64>,
}

impl KernelPlan {
    pub fn new(grid: &VoxelGrid, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= 2.0) {
            return Err(Error::BadKernelParam(format!("delta must lie in (0, 2], got {delta}")));
        }
        let ext = grid.ext_dims();
        let a = grid.voxel_size_mm();
        let mut dpow = vec![0.0; ext[0] * ext[1] * ext[2]];
        for k in 0..ext[2] {
            let wk = k.min(ext[2] - k) as f64;
            for j in 0..ext[1] {
                let wj = j.min(ext[1] - j) as f64;
                for i in 0..ext[0] {
                    let wi = i.min(ext[0] - i) as f64;
                    let d = a * (wi * wi + wj * wj + wk * wk).sqrt();
                    dpow[i + ext[0] * (j + ext[1] * k)] = d.powf(delta);
                }
            }
        }
        Ok(Self { delta, fft: Fft3::new(ext), dpow })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn fft(&self) -> &Fft3 {
        &self.fft
    }

    pub fn torus_len(&self) -> usize {
        self.fft.len()
    }

    pub fn make_scratch(&self) -> KernelScratch {
        KernelScratch {
            a: vec![Complex64::default(); self.torus_len()],
            fft: self.fft.make_scratch(),
        }
    }
}

/// Work buffers for kernel operator applications; one per thread.
pub struct KernelScratch {
    a: Vec<Complex64>,
    fft: FftScratch,
}

/// First column of the embedded correlation: `exp(-rho d^delta)` at every
/// torus offset, with `d` the minimum-image distance in mm.
pub fn base_vector(grid: &VoxelGrid, rho: f64, delta: f64) -> Result<Vec<f64>> {
    let plan = KernelPlan::new(grid, delta)?;
    base_from_plan(&plan, rho)
}

fn base_from_plan(plan: &KernelPlan, rho: f64) -> Result<Vec<f64>> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::BadKernelParam(format!("rho must be positive and finite, got {rho}")));
    }
    let mut base = vec![0.0; plan.torus_len()];
    crate::math::par_map_inplace(&mut base, |i, x| *x = (-rho * plan.dpow[i]).exp());
    Ok(base)
}

/// Validated circulant spectrum: eigenvalues after round-off clamping plus
/// the raw minimum for reporting.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub phi: Vec<f64>,
    pub min_phi: f64,
}

/// Eigenvalues of the circulant embedding with the given base vector.
///
/// Fails if the embedding has a genuinely negative eigenvalue (beyond DFT
/// round-off); `rho` only labels the error message.
pub fn spectrum(grid: &VoxelGrid, base: &[f64], rho: f64) -> Result<Spectrum> {
    let fft = Fft3::new(grid.ext_dims());
    let mut scratch = fft.make_scratch();
    spectrum_with(&fft, &mut scratch, base, rho)
}

fn spectrum_with(fft: &Fft3, scratch: &mut FftScratch, base: &[f64], rho: f64) -> Result<Spectrum> {
    assert_eq!(base.len(), fft.len(), "base length does not match the torus");
    let mut buf: Vec<Complex64> = base.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.forward(&mut buf, scratch);
    let mut phi = vec![0.0; base.len()];
    let mut min_phi = f64::INFINITY;
    let mut max_phi = f64::NEG_INFINITY;
    let mut max_im = 0.0f64;
    for (p, c) in phi.iter_mut().zip(&buf) {
        *p = c.re;
        min_phi = min_phi.min(c.re);
        max_phi = max_phi.max(c.re);
        max_im = max_im.max(c.im.abs());
    }
    debug_assert!(max_im <= 1e-8 * max_phi.max(1.0), "spectrum has imaginary mass {max_im}");
    if !(max_phi.is_finite() && max_phi > 0.0) {
        return Err(Error::NonPsdEmbedding { rho, min_phi, max_phi });
    }
    if min_phi < 0.0 {
        if -min_phi > PSD_REL_TOL * max_phi {
            return Err(Error::NonPsdEmbedding { rho, min_phi, max_phi });
        }
        for p in phi.iter_mut() {
            if *p < 0.0 {
                *p = 0.0;
            }
        }
    }
    Ok(Spectrum { phi, min_phi })
}

/// Correlation kernel fixed at one `rho`, ready to apply `R^{1/2}` and its
/// rho-derivative companion `Q` as Fourier multipliers.
pub struct SpectralKernel {
    rho: f64,
    /// sqrt of the clamped eigenvalues.
    sqrt_phi: Vec<f64>,
    /// psi / sqrt(phi), zero wherever the spectrum was clamped.
    quot: Vec<f64>,
    min_phi: f64,
}

impl SpectralKernel {
    pub fn build(plan: &KernelPlan, rho: f64, scratch: &mut KernelScratch) -> Result<Self> {
        let base = base_from_plan(plan, rho)?;
        let spec = spectrum_with(plan.fft(), &mut scratch.fft, &base, rho)?;

        // psi = DFT(d^delta . base); real by the same symmetry as phi.
        for ((c, &b), &dp) in scratch.a.iter_mut().zip(&base).zip(&plan.dpow) {
            *c = Complex64::new(b * dp, 0.0);
        }
        plan.fft().forward(&mut scratch.a, &mut scratch.fft);

        let mut sqrt_phi = spec.phi;
        let mut quot = vec![0.0; sqrt_phi.len()];
        for (i, p) in sqrt_phi.iter_mut().enumerate() {
            let s = p.sqrt();
            quot[i] = if s > 0.0 { scratch.a[i].re / s } else { 0.0 };
            *p = s;
        }
        Ok(Self { rho, sqrt_phi, quot, min_phi: spec.min_phi })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Raw spectral minimum before clamping; diagnostic only.
    pub fn min_phi(&self) -> f64 {
        self.min_phi
    }

    /// `out = R^{1/2} x` on the torus. Self-adjoint since the multiplier is
    /// real and symmetric.
    pub fn sqrt_apply(&self, plan: &KernelPlan, x: &[f64], out: &mut [f64], scratch: &mut KernelScratch) {
        self.apply_multiplier(plan, &self.sqrt_phi, x, out, scratch);
    }

    /// `out = Q x` where `d(R^{1/2} x)/d rho = -Q x / 2`.
    pub fn drho_apply(&self, plan: &KernelPlan, x: &[f64], out: &mut [f64], scratch: &mut KernelScratch) {
        self.apply_multiplier(plan, &self.quot, x, out, scratch);
    }

    /// One forward and one inverse transform feeding both multipliers; the
    /// sampler gradient needs `R^{1/2} gamma` and `Q gamma` at every leapfrog
    /// step. Both results are real, so the single inverse of
    /// `X . (sqrt(phi) + i psi/sqrt(phi))` returns them as real and imaginary
    /// parts.
    pub fn sqrt_and_drho_apply(
        &self,
        plan: &KernelPlan,
        x: &[f64],
        sqrt_out: &mut [f64],
        drho_out: &mut [f64],
        scratch: &mut KernelScratch,
    ) {
        let fft = plan.fft();
        load_real(&mut scratch.a, x);
        fft.forward(&mut scratch.a, &mut scratch.fft);
        for (c, (&sp, &qt)) in scratch.a.iter_mut().zip(self.sqrt_phi.iter().zip(&self.quot)) {
            *c *= Complex64::new(sp, qt);
        }
        fft.inverse(&mut scratch.a, &mut scratch.fft);
        assert_eq!(sqrt_out.len(), drho_out.len());
        assert_eq!(sqrt_out.len(), scratch.a.len());
        for ((s, q), c) in sqrt_out.iter_mut().zip(drho_out.iter_mut()).zip(&scratch.a) {
            *s = c.re;
            *q = c.im;
        }
    }

    fn apply_multiplier(
        &self,
        plan: &KernelPlan,
        mult: &[f64],
        x: &[f64],
        out: &mut [f64],
        scratch: &mut KernelScratch,
    ) {
        let fft = plan.fft();
        load_real(&mut scratch.a, x);
        fft.forward(&mut scratch.a, &mut scratch.fft);
        weight(&mut scratch.a, mult);
        fft.inverse(&mut scratch.a, &mut scratch.fft);
        store_real(out, &scratch.a);
    }
}

fn load_real(buf: &mut [Complex64], x: &[f64]) {
    assert_eq!(buf.len(), x.len(), "operand length does not match the torus");
    for (c, &v) in buf.iter_mut().zip(x) {
        *c = Complex64::new(v, 0.0);
    }
}

fn weight(buf: &mut [Complex64], mult: &[f64]) {
    for (c, &m) in buf.iter_mut().zip(mult) {
        *c *= m;
    }
}

fn store_real(out: &mut [f64], buf: &[Complex64]) {
    assert_eq!(out.len(), buf.len());
    for (o, c) in out.iter_mut().zip(buf) {
        *o = c.re;
    }
}
