//! 3D FFT on flattened arrays (x fastest, then y, then z), built from 1D
//! rustfft plans. Used for all circulant operator applications.
//!
//! Axis passes over y and z go through an explicit transpose into a scratch
//! buffer so every 1D transform runs on contiguous memory. Lines are
//! independent, so parallelism over lines cannot change results: outputs are
//! bitwise identical for any thread count.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

/// Below this total size the passes run sequentially; parallel overhead
/// dominates for small tori.
const PAR_MIN_LEN: usize = 1 << 15;

/// Reusable buffers for one in-flight 3D transform.
///
/// Callers that run transforms concurrently need one scratch per thread.
pub struct FftScratch {
    /// Transpose target, same length as the data.
    trans: Vec<Complex64>,
    /// rustfft inplace scratch for the sequential path.
    line: Vec<Complex64>,
}

pub struct Fft3 {
    dims: [usize; 3],
    len: usize,
    fwd: [Arc<dyn Fft<f64>>; 3],
    inv: [Arc<dyn Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = dims.map(|n| planner.plan_fft(n, FftDirection::Forward));
        let inv = dims.map(|n| planner.plan_fft(n, FftDirection::Inverse));
        Self { dims, len: dims[0] * dims[1] * dims[2], fwd, inv }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn make_scratch(&self) -> FftScratch {
        let line = self
            .fwd
            .iter()
            .chain(self.inv.iter())
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        FftScratch {
            trans: vec![Complex64::default(); self.len],
            line: vec![Complex64::default(); line],
        }
    }

    /// Unnormalized forward DFT, in place.
    pub fn forward(&self, data: &mut [Complex64], scratch: &mut FftScratch) {
        self.transform(data, scratch, &self.fwd);
    }

    /// Inverse DFT including the 1/n normalization, in place.
    pub fn inverse(&self, data: &mut [Complex64], scratch: &mut FftScratch) {
        self.transform(data, scratch, &self.inv);
        let scale = 1.0 / self.len as f64;
        if self.len >= PAR_MIN_LEN && rayon::current_num_threads() > 1 {
            data.par_chunks_mut(4096).for_each(|c| {
                for x in c {
                    *x *= scale;
                }
            });
        } else {
            for x in data.iter_mut() {
                *x *= scale;
            }
        }
    }

    fn transform(&self, data: &mut [Complex64], scratch: &mut FftScratch, plans: &[Arc<dyn Fft<f64>>; 3]) {
        assert_eq!(data.len(), self.len, "data length does not match dims");
        let [nx, ny, nz] = self.dims;
        let par = self.len >= PAR_MIN_LEN && rayon::current_num_threads() > 1;

        // x: already contiguous.
        fft_lines(data, &plans[0], par, &mut scratch.line);

        // y: gather lines (y fastest), transform, scatter back.
        if ny > 1 {
            let buf = &mut scratch.trans;
            gather(data, buf, par, ny, |c, j| {
                let (i, k) = (c % nx, c / nx);
                i + nx * (j + ny * k)
            });
            fft_lines(buf, &plans[1], par, &mut scratch.line);
            scatter(data, buf, par, nx, |c, i| {
                let (j, k) = (c % ny, c / ny);
                j + ny * (i + nx * k)
            });
        }

        // z: same with z fastest.
        if nz > 1 {
            let buf = &mut scratch.trans;
            gather(data, buf, par, nz, |c, k| {
                let (i, j) = (c % nx, c / nx);
                i + nx * (j + ny * k)
            });
            fft_lines(buf, &plans[2], par, &mut scratch.line);
            scatter(data, buf, par, nx, |c, i| {
                let (j, k) = (c % ny, c / ny);
                k + nz * (i + nx * j)
            });
        }
    }
}

fn fft_lines(data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>, par: bool, line_scratch: &mut Vec<Complex64>) {
    let n = plan.len();
    if par {
        data.par_chunks_mut(n).for_each_init(
            || vec![Complex64::default(); plan.get_inplace_scratch_len()],
            |sc, line| plan.process_with_scratch(line, sc),
        );
    } else {
        line_scratch.resize(plan.get_inplace_scratch_len().max(line_scratch.len()), Complex64::default());
        for line in data.chunks_mut(n) {
            plan.process_with_scratch(line, line_scratch);
        }
    }
}

/// `buf` chunk `c` element `t` takes `data[src_index(c, t)]`.
fn gather<F>(data: &[Complex64], buf: &mut [Complex64], par: bool, chunk: usize, src_index: F)
where
    F: Fn(usize, usize) -> usize + Sync,
{
    if par {
        buf.par_chunks_mut(chunk).enumerate().for_each(|(c, out)| {
            for (t, x) in out.iter_mut().enumerate() {
                *x = data[src_index(c, t)];
            }
        });
    } else {
        for (c, out) in buf.chunks_mut(chunk).enumerate() {
            for (t, x) in out.iter_mut().enumerate() {
                *x = data[src_index(c, t)];
            }
        }
    }
}

/// `data` chunk `c` element `t` takes `buf[src_index(c, t)]`.
fn scatter<F>(data: &mut [Complex64], buf: &[Complex64], par: bool, chunk: usize, src_index: F)
where
    F: Fn(usize, usize) -> usize + Sync,
{
    if par {
        data.par_chunks_mut(chunk).enumerate().for_each(|(c, out)| {
            for (t, x) in out.iter_mut().enumerate() {
                *x = buf[src_index(c, t)];
            }
        });
    } else {
        for (c, out) in data.chunks_mut(chunk).enumerate() {
            for (t, x) in out.iter_mut().enumerate() {
                *x = buf[src_index(c, t)];
            }
        }
    }
}
