//! Checks the FFT-based kernel operators and the model intensity against
//! dense linear algebra on a torus small enough to eigendecompose.

use coxmeta_core::grid::VoxelGrid;
use coxmeta_core::kernel::{base_vector, KernelPlan, SpectralKernel};
use coxmeta_core::model::{Model, ModelState, PriorConfig, Study, StudySet, DELTA, RHO_SCALE};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn wrap_diff(i: usize, j: usize, m: usize) -> usize {
    (i + m - j) % m
}

/// Dense circulant matrix whose first column is `first` on the embedding
/// torus of `grid`.
fn dense_circulant(grid: &VoxelGrid, first: &[f64]) -> DMatrix<f64> {
    let [ex, ey, ez] = grid.ext_dims();
    let n = ex * ey * ez;
    let at = |x: usize, y: usize, z: usize| x + ex * (y + ey * z);
    let mut m = DMatrix::zeros(n, n);
    for zi in 0..ez {
        for yi in 0..ey {
            for xi in 0..ex {
                let row = at(xi, yi, zi);
                for zj in 0..ez {
                    for yj in 0..ey {
                        for xj in 0..ex {
                            let col = at(xj, yj, zj);
                            m[(row, col)] =
                                first[at(wrap_diff(xi, xj, ex), wrap_diff(yi, yj, ey), wrap_diff(zi, zj, ez))];
                        }
                    }
                }
            }
        }
    }
    m
}

/// Symmetric square root (and, optionally, inverse square root) via a full
/// eigendecomposition.
fn dense_sqrt(m: &DMatrix<f64>, invert: bool) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let n = m.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        let lam = eig.eigenvalues[i].max(0.0);
        d[(i, i)] = if invert {
            if lam > 1e-12 {
                1.0 / lam.sqrt()
            } else {
                0.0
            }
        } else {
            lam.sqrt()
        };
    }
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
}

#[test]
fn spectral_sqrt_matches_dense_eigendecomposition() {
    let grid = VoxelGrid::build_unmasked([4, 4, 4], 2.0, [0.0; 3]).unwrap();
    let rho = 1.0;
    let plan = KernelPlan::new(&grid, DELTA).unwrap();
    let mut scratch = plan.make_scratch();
    let kern = SpectralKernel::build(&plan, rho, &mut scratch).unwrap();

    let base = base_vector(&grid, rho, DELTA).unwrap();
    let r = dense_circulant(&grid, &base);
    let r_sqrt = dense_sqrt(&r, false);

    let n = grid.n_torus();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for _ in 0..3 {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let mut fft_out = vec![0.0; n];
        kern.sqrt_apply(&plan, &x, &mut fft_out, &mut scratch);

        let xv = nalgebra::DVector::from_column_slice(&x);
        let dense_out = &r_sqrt * xv;
        let scale = max_abs(dense_out.as_slice()).max(1.0);
        for i in 0..n {
            let diff = (fft_out[i] - dense_out[i]).abs();
            assert!(diff <= 1e-8 * scale, "component {i}: fft {} vs dense {}", fft_out[i], dense_out[i]);
        }
    }
}

#[test]
fn spectral_range_derivative_matches_dense_product() {
    // d(R^{1/2} x)/drho = -(1/2) Q x with Q = (dR/drho) R^{-1/2}; build the
    // right-hand side densely. dR/drho has first column -d^delta * base.
    let grid = VoxelGrid::build_unmasked([4, 4, 4], 2.0, [0.0; 3]).unwrap();
    let rho = 1.0;
    let plan = KernelPlan::new(&grid, DELTA).unwrap();
    let mut scratch = plan.make_scratch();
    let kern = SpectralKernel::build(&plan, rho, &mut scratch).unwrap();

    let base = base_vector(&grid, rho, DELTA).unwrap();
    // base at rho has entries exp(-rho d^delta); recover d^delta from a
    // reference at rho = 0 being all ones: d^delta = -ln(base)/rho.
    let dpow_base: Vec<f64> = base.iter().map(|&b| -b.ln() / rho * b).collect();
    let r = dense_circulant(&grid, &base);
    let r_inv_sqrt = dense_sqrt(&r, true);
    let d = dense_circulant(&grid, &dpow_base);
    let q_dense = &d * &r_inv_sqrt;

    let n = grid.n_torus();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let mut fft_out = vec![0.0; n];
    kern.drho_apply(&plan, &x, &mut fft_out, &mut scratch);
    let dense_out = q_dense * nalgebra::DVector::from_column_slice(&x);
    let scale = max_abs(dense_out.as_slice()).max(1.0);
    for i in 0..n {
        let diff = (fft_out[i] - dense_out[i]).abs();
        assert!(diff <= 1e-8 * scale, "component {i}: fft {} vs dense {}", fft_out[i], dense_out[i]);
    }
}

#[test]
fn model_intensity_matches_densely_built_fields() {
    let grid = VoxelGrid::build_unmasked([4, 4, 4], 2.0, [-4.0, -4.0, -4.0]).unwrap();
    let studies = vec![
        Study { id: "s0".into(), z: vec![1.0, 0.0, 1.0], foci: vec![0, 17, 33] },
        Study { id: "s1".into(), z: vec![1.0, 1.0, 0.0], foci: vec![5, 5] },
        Study { id: "s2".into(), z: vec![1.0, 1.0, 1.0], foci: vec![60] },
    ];
    let data = StudySet::new(studies.clone(), 1, &grid).unwrap();
    let model = Model::new(grid.clone(), data, PriorConfig::default()).unwrap();

    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut st = ModelState::zeros(model.shape());
    st.mu = vec![-3.2, 0.4];
    st.sigma = vec![0.7, 0.3];
    st.rho_scaled = vec![RHO_SCALE * 1.0, RHO_SCALE * 0.8];
    st.beta = vec![0.25];
    for g in st.gamma.iter_mut() {
        for x in g.iter_mut() {
            *x = rng.random::<f64>() * 2.0 - 1.0;
        }
    }

    let mut ws = model.make_workspace();
    let got = model.intensity(&st, &mut ws).unwrap();

    // Dense reference: fields from the eigendecomposed square root.
    let mut b = Vec::new();
    for l in 0..2 {
        let base = base_vector(&grid, st.rho_scaled[l] / RHO_SCALE, DELTA).unwrap();
        let r_sqrt = dense_sqrt(&dense_circulant(&grid, &base), false);
        let s = &r_sqrt * nalgebra::DVector::from_column_slice(&st.gamma[l]);
        let field: Vec<f64> = grid
            .masked_torus()
            .iter()
            .map(|&t| st.mu[l] + st.sigma[l] * s[t])
            .collect();
        b.push(field);
    }
    for (i, s) in studies.iter().enumerate() {
        for j in 0..grid.n_masked() {
            let eta = s.z[0] * b[0][j] + s.z[1] * b[1][j] + st.beta[0] * s.z[2];
            let want = eta.exp();
            let rel = (got[i][j] - want).abs() / want.max(1e-300);
            assert!(rel <= 1e-8, "study {i} voxel {j}: {} vs {want}", got[i][j]);
        }
    }
}
