//! Small numeric helpers: compensated summation with a thread-count
//! independent parallel layout, and empirical quantiles.

use rayon::prelude::*;

/// Chunk width for parallel reductions. Fixed so the split of work, and with
/// it every floating-point rounding, does not depend on the thread count.
const PAR_CHUNK: usize = 8192;

/// Neumaier variant of Kahan summation.
///
/// Keeps a running compensation term so long likelihood sums do not drift
/// with accumulation order inside a chunk.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice, sequential.
pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Compensated dot product, sequential.
pub fn dot(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let mut acc = CompensatedSum::new();
    for (&x, &y) in xs.iter().zip(ys) {
        acc.add(x * y);
    }
    acc.value()
}

/// Parallel compensated sum over fixed-size chunks.
///
/// Chunk partials are computed in parallel but combined sequentially in chunk
/// order, so the result is identical for any number of threads.
pub fn par_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAR_CHUNK {
        return sum(xs);
    }
    // The sequential fallback walks the same chunk layout, so a one-thread
    // pool produces the same bits without the scheduling overhead.
    let partials: Vec<f64> = if rayon::current_num_threads() > 1 {
        xs.par_chunks(PAR_CHUNK).map(sum).collect()
    } else {
        xs.chunks(PAR_CHUNK).map(sum).collect()
    };
    sum(&partials)
}

/// Parallel `map` + compensated sum over fixed-size index chunks; `f` maps an
/// index to a term. Deterministic for the same reason as [`par_sum`].
pub fn par_sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n <= PAR_CHUNK {
        let mut acc = CompensatedSum::new();
        for i in 0..n {
            acc.add(f(i));
        }
        return acc.value();
    }
    let starts: Vec<usize> = (0..n).step_by(PAR_CHUNK).collect();
    let chunk_sum = |&s: &usize| {
        let mut acc = CompensatedSum::new();
        for i in s..(s + PAR_CHUNK).min(n) {
            acc.add(f(i));
        }
        acc.value()
    };
    let partials: Vec<f64> = if rayon::current_num_threads() > 1 {
        starts.par_iter().map(chunk_sum).collect()
    } else {
        starts.iter().map(chunk_sum).collect()
    };
    sum(&partials)
}

/// Applies `f` elementwise in parallel over fixed-size chunks.
pub fn par_map_inplace<F>(xs: &mut [f64], f: F)
where
    F: Fn(usize, &mut f64) + Sync + Send,
{
    let chunk = PAR_CHUNK;
    let body = |(ci, c): (usize, &mut [f64])| {
        let base = ci * chunk;
        for (o, x) in c.iter_mut().enumerate() {
            f(base + o, x);
        }
    };
    if rayon::current_num_threads() > 1 {
        xs.par_chunks_mut(chunk).enumerate().for_each(body);
    } else {
        xs.chunks_mut(chunk).enumerate().for_each(body);
    }
}

/// Empirical quantile with linear interpolation between order statistics
/// (the "type 7" rule: index `h = (n-1) q`).
///
/// `sorted` must be ascending; `q` in `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q), "quantile level {q} outside [0, 1]");
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let w = h - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Convenience wrapper that sorts a copy.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in quantile input"));
    quantile_sorted(&v, q)
}

/// FNV-1a over bytes; used to fingerprint datasets in chain metadata.
/// An identity tag for reproducibility checks, not a cryptographic hash.
#[derive(Debug, Clone, Copy)]
pub struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf29ce484222325)
    }
}

impl Fnv1a {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    pub fn update_f64(&mut self, x: f64) {
        self.update(&x.to_le_bytes());
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}
