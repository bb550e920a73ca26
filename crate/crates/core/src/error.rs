use thiserror::Error;

/// Errors shared across the crate. Variants carry enough context to be
/// reported to an end user without a backtrace.
#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("mask has {got} bytes but the grid has {want} voxels")]
    MaskSizeMismatch { got: usize, want: usize },

    #[error("mask byte at voxel {index} is {value}; mask bytes must be 0 or 1")]
    MaskByte { index: usize, value: u8 },

    #[error("mask selects no voxels")]
    EmptyMask,

    #[error("grid dims must all be positive, got {0:?}")]
    ZeroDim([usize; 3]),

    #[error("voxel size must be positive, got {0}")]
    BadVoxelSize(f64),

    #[error("point ({0}, {1}, {2}) mm lies outside the grid box")]
    PointOutsideGrid(f64, f64, f64),

    #[error(
        "circulant embedding of the correlation (rho={rho}) is not positive \
         semidefinite: min eigenvalue {min_phi:.6e} vs max {max_phi:.6e}; \
         the correlation range is too long for the padded torus"
    )]
    NonPsdEmbedding { rho: f64, min_phi: f64, max_phi: f64 },

    #[error("kernel parameter out of range: {0}")]
    BadKernelParam(String),

    #[error("study {study_id}: focus {focus} at ({x}, {y}, {z}) mm falls outside the mask")]
    FocusOutsideMask { study_id: String, focus: usize, x: f64, y: f64, z: f64 },

    #[error("study {study_id}: focus {focus} is in voxel {voxel} which is outside the mask")]
    FocusVoxelOutsideMask { study_id: String, focus: usize, voxel: usize },

    #[error("study {study_id}: covariate row has {got} entries, expected {want}")]
    CovariateLength { study_id: String, got: usize, want: usize },

    #[error("study {study_id}: covariate 0 must be 1 (intercept), got {got}")]
    InterceptNotOne { study_id: String, got: f64 },

    #[error("k_star={k_star} but studies carry only {n_covariates} covariates after the intercept")]
    KStarOutOfRange { k_star: usize, n_covariates: usize },

    #[error("study set is empty")]
    NoStudies,

    #[error("intensity overflow (> 1e300) for study {study_id}")]
    IntensityOverflow { study_id: String },

    #[error("state shape mismatch: {0}")]
    StateShape(String),

    #[error("packed vector has length {got}, expected {want}")]
    PackedLength { got: usize, want: usize },

    #[error("log-posterior is not finite at the initial state ({0})")]
    BadInit(f64),

    #[error("invalid sampler configuration: {0}")]
    BadSamplerConfig(String),

    #[error("invalid simulation configuration: {0}")]
    BadSimConfig(String),

    #[error("region '{0}' contains voxel {1} which is outside the mask")]
    RegionOutsideMask(String, usize),

    #[error("region '{0}' is empty")]
    EmptyRegion(String),

    #[error("quantile {0} is outside [0, 1]")]
    BadQuantile(f64),

    #[error("need at least {want} posterior draws, got {got}")]
    TooFewDraws { got: usize, want: usize },

    #[error("spatial effect index {0} is out of range (K*={1})")]
    SpatialIndexOutOfRange(usize, usize),

    #[error("series of length {len} is too short for max_lag {max_lag}")]
    SeriesTooShort { len: usize, max_lag: usize },

    #[error("series is constant; autocorrelation is undefined")]
    ConstantSeries,

    #[error("focus at ({0}, {1}, {2}) mm sits in a voxel with zero intensity")]
    ZeroIntensityAtFocus(f64, f64, f64),

    #[error("distance grid must be non-empty, finite and non-negative")]
    BadDistanceGrid,
}
