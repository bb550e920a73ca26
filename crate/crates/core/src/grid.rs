//! Axis-aligned voxel grid with a brain mask and its padded embedding torus.
//!
//! Voxels are cubes of side `voxel_size_mm`. `origin_mm` is the center of
//! voxel (0, 0, 0). Linear indexing is x fastest, then y, then z:
//! `v = i + nx * (j + ny * k)`. Voxel (i, j, k) owns the half-open cube
//! `[center - a/2, center + a/2)` per axis, so points on a shared face belong
//! to the higher-index voxel.
//!
//! The embedding torus doubles each axis and rounds up to a power of two,
//! which keeps the circulant spectra of stationary correlations well behaved
//! and the FFTs fast.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// On-disk description of a grid; the mask bytes live in a separate raw file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub dims: [usize; 3],
    pub voxel_size_mm: f64,
    pub origin_mm: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    dims: [usize; 3],
    ext_dims: [usize; 3],
    voxel_size_mm: f64,
    origin_mm: [f64; 3],
    mask: Vec<bool>,
    /// Linear indices of masked voxels, ascending.
    masked: Vec<usize>,
    /// Torus index of each masked voxel, parallel to `masked`.
    masked_torus: Vec<usize>,
    /// For each grid voxel, its position in `masked`, or `u32::MAX`.
    mask_rank: Vec<u32>,
}

impl VoxelGrid {
    /// Validates the mask against the header and precomputes index maps.
    ///
    /// Mask bytes must be 0 or 1, one byte per voxel in linear order, and at
    /// least one voxel must be selected.
    pub fn build(header: &GridHeader, mask_bytes: &[u8]) -> Result<Self> {
        let dims = header.dims;
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::ZeroDim(dims));
        }
        if !(header.voxel_size_mm.is_finite() && header.voxel_size_mm > 0.0) {
            return Err(Error::BadVoxelSize(header.voxel_size_mm));
        }
        let n = dims[0] * dims[1] * dims[2];
        if mask_bytes.len() != n {
            return Err(Error::MaskSizeMismatch { got: mask_bytes.len(), want: n });
        }
        let mut mask = vec![false; n];
        for (i, &b) in mask_bytes.iter().enumerate() {
            match b {
                0 => {}
                1 => mask[i] = true,
                v => return Err(Error::MaskByte { index: i, value: v }),
            }
        }
        let ext_dims = dims.map(|d| (2 * d).next_power_of_two());
        let masked: Vec<usize> = (0..n).filter(|&v| mask[v]).collect();
        if masked.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mut mask_rank = vec![u32::MAX; n];
        for (r, &v) in masked.iter().enumerate() {
            mask_rank[v] = r as u32;
        }
        let masked_torus = {
            let g = Grid3 { dims, ext_dims };
            masked.iter().map(|&v| g.torus_of(v)).collect()
        };
        Ok(Self {
            dims,
            ext_dims,
            voxel_size_mm: header.voxel_size_mm,
            origin_mm: header.origin_mm,
            mask,
            masked,
            masked_torus,
            mask_rank,
        })
    }

    /// Grid with every voxel masked in; convenient for tests and simulation.
    pub fn build_unmasked(dims: [usize; 3], voxel_size_mm: f64, origin_mm: [f64; 3]) -> Result<Self> {
        let n = dims.iter().product();
        Self::build(&GridHeader { dims, voxel_size_mm, origin_mm }, &vec![1u8; n])
    }

    pub fn header(&self) -> GridHeader {
        GridHeader { dims: self.dims, voxel_size_mm: self.voxel_size_mm, origin_mm: self.origin_mm }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Torus dimensions: per axis the next power of two at or above twice the
    /// grid extent.
    pub fn ext_dims(&self) -> [usize; 3] {
        self.ext_dims
    }

    /// Total voxel count V.
    pub fn n_voxels(&self) -> usize {
        self.mask.len()
    }

    /// Masked voxel count V_B.
    pub fn n_masked(&self) -> usize {
        self.masked.len()
    }

    /// Torus length V_E.
    pub fn n_torus(&self) -> usize {
        self.ext_dims.iter().product()
    }

    pub fn voxel_size_mm(&self) -> f64 {
        self.voxel_size_mm
    }

    pub fn origin_mm(&self) -> [f64; 3] {
        self.origin_mm
    }

    /// Voxel volume A in mm^3.
    pub fn voxel_volume(&self) -> f64 {
        self.voxel_size_mm.powi(3)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_masked(&self, v: usize) -> bool {
        self.mask[v]
    }

    /// Linear indices of masked voxels, ascending.
    pub fn masked_voxels(&self) -> &[usize] {
        &self.masked
    }

    /// Torus index of each masked voxel, parallel to [`Self::masked_voxels`].
    pub fn masked_torus(&self) -> &[usize] {
        &self.masked_torus
    }

    /// Position of voxel `v` in the masked ordering, if masked.
    pub fn mask_rank(&self, v: usize) -> Option<usize> {
        let r = self.mask_rank[v];
        (r != u32::MAX).then_some(r as usize)
    }

    pub fn triple_of(&self, v: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [v % nx, (v / nx) % ny, v / (nx * ny)]
    }

    pub fn index_of(&self, t: [usize; 3]) -> usize {
        let [nx, ny, _] = self.dims;
        t[0] + nx * (t[1] + ny * t[2])
    }

    /// Torus index of grid voxel `v` (same triple, torus strides).
    pub fn torus_of(&self, v: usize) -> usize {
        Grid3 { dims: self.dims, ext_dims: self.ext_dims }.torus_of(v)
    }

    pub fn voxel_center(&self, v: usize) -> [f64; 3] {
        let t = self.triple_of(v);
        [
            self.origin_mm[0] + t[0] as f64 * self.voxel_size_mm,
            self.origin_mm[1] + t[1] as f64 * self.voxel_size_mm,
            self.origin_mm[2] + t[2] as f64 * self.voxel_size_mm,
        ]
    }

    /// Maps a world coordinate (mm) to the linear index of the voxel whose
    /// cube contains it. Errors if the point lies outside the grid box.
    pub fn world_to_voxel(&self, p: [f64; 3]) -> Result<usize> {
        let a = self.voxel_size_mm;
        let mut t = [0usize; 3];
        for d in 0..3 {
            let f = ((p[d] - self.origin_mm[d] + 0.5 * a) / a).floor();
            if !(f >= 0.0 && f < self.dims[d] as f64) {
                return Err(Error::PointOutsideGrid(p[0], p[1], p[2]));
            }
            t[d] = f as usize;
        }
        Ok(self.index_of(t))
    }
}

struct Grid3 {
    dims: [usize; 3],
    ext_dims: [usize; 3],
}

impl Grid3 {
    fn torus_of(&self, v: usize) -> usize {
        let [nx, ny, _] = self.dims;
        let [mx, my, _] = self.ext_dims;
        let (i, j, k) = (v % nx, (v / nx) % ny, v / (nx * ny));
        i + mx * (j + my * k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn header(dims: [usize; 3], a: f64) -> GridHeader {
        GridHeader { dims, voxel_size_mm: a, origin_mm: [0.0, 0.0, 0.0] }
    }

    #[test]
    fn builds_and_pads_to_powers_of_two() {
        let g = VoxelGrid::build(&header([4, 4, 4], 2.0), &[1; 64]).unwrap();
        assert_eq!(g.n_voxels(), 64);
        assert_eq!(g.n_masked(), 64);
        assert_eq!(g.ext_dims(), [8, 8, 8]);

        let g = VoxelGrid::build(&header([3, 3, 3], 2.0), &[1; 27]).unwrap();
        assert_eq!(g.ext_dims(), [8, 8, 8]);

        let g = VoxelGrid::build(&header([5, 3, 2], 1.0), &vec![1; 30]).unwrap();
        assert_eq!(g.ext_dims(), [16, 8, 4]);
    }

    #[test]
    fn rejects_bad_masks() {
        assert!(matches!(
            VoxelGrid::build(&header([4, 4, 4], 2.0), &[1; 63]),
            Err(Error::MaskSizeMismatch { got: 63, want: 64 })
        ));
        assert!(matches!(
            VoxelGrid::build(&header([2, 2, 2], 2.0), &[0; 8]),
            Err(Error::EmptyMask)
        ));
        let mut m = [1u8; 8];
        m[3] = 2;
        assert!(matches!(
            VoxelGrid::build(&header([2, 2, 2], 2.0), &m),
            Err(Error::MaskByte { index: 3, value: 2 })
        ));
        assert!(VoxelGrid::build(&header([0, 2, 2], 2.0), &[]).is_err());
        assert!(VoxelGrid::build(&header([2, 2, 2], 0.0), &[1; 8]).is_err());
    }

    #[test]
    fn world_to_voxel_half_open_cells() {
        let g = VoxelGrid::build_unmasked([4, 4, 4], 2.0, [0.0; 3]).unwrap();
        // Cell 0 on x covers [-1, 1): 0.9 stays, 1.0 moves up.
        assert_eq!(g.world_to_voxel([0.9, 0.0, 0.0]).unwrap(), g.index_of([0, 0, 0]));
        assert_eq!(g.world_to_voxel([1.0, 0.0, 0.0]).unwrap(), g.index_of([1, 0, 0]));
        assert!(matches!(
            g.world_to_voxel([-5.0, 0.0, 0.0]),
            Err(Error::PointOutsideGrid(..))
        ));
        // Top face of the last cell is exclusive.
        assert!(g.world_to_voxel([7.0, 0.0, 0.0]).is_err());
        assert!(g.world_to_voxel([6.999999, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn index_round_trips_and_center_containment() {
        let g = VoxelGrid::build_unmasked([5, 4, 3], 1.5, [-2.0, 3.0, 0.5]).unwrap();
        for v in 0..g.n_voxels() {
            assert_eq!(g.index_of(g.triple_of(v)), v);
            assert_eq!(g.world_to_voxel(g.voxel_center(v)).unwrap(), v);
        }
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(11);
        for _ in 0..500 {
            let p = [
                rng.random_range(-2.75..4.75),
                rng.random_range(2.25..8.25),
                rng.random_range(-0.25..3.25),
            ];
            let v = g.world_to_voxel(p).unwrap();
            let c = g.voxel_center(v);
            for d in 0..3 {
                assert!(p[d] >= c[d] - 0.75 && p[d] < c[d] + 0.75, "point {p:?} center {c:?}");
            }
        }
    }

    #[test]
    fn masked_lists_line_up() {
        let mut mask = vec![0u8; 27];
        for v in [0usize, 4, 13, 26] {
            mask[v] = 1;
        }
        let g = VoxelGrid::build(&header([3, 3, 3], 2.0), &mask).unwrap();
        assert_eq!(g.masked_voxels(), &[0, 4, 13, 26]);
        assert_eq!(g.mask_rank(4), Some(1));
        assert_eq!(g.mask_rank(5), None);
        // Torus index preserves the triple under the wider strides.
        for (&v, &e) in g.masked_voxels().iter().zip(g.masked_torus()) {
            let t = g.triple_of(v);
            assert_eq!(e, t[0] + 8 * (t[1] + 8 * t[2]));
        }
    }
}
