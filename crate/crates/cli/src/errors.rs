use coxmeta_core::Error as CoreError;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} line {line}: {message}")]
    Csv { path: PathBuf, line: u64, message: String },

    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Exit codes: 2 for configuration problems, 3 for unreadable or invalid
/// data, 4 for numeric failure during a run.
pub fn exit_code(e: &CliError) -> i32 {
    match e {
        CliError::Usage(_) => 2,
        CliError::Io { .. } | CliError::Csv { .. } | CliError::Json { .. } => 3,
        CliError::Core(c) => match c {
            CoreError::BadKernelParam(_)
            | CoreError::KStarOutOfRange { .. }
            | CoreError::StateShape(_)
            | CoreError::PackedLength { .. }
            | CoreError::BadSamplerConfig(_)
            | CoreError::BadSimConfig(_)
            | CoreError::BadQuantile(_)
            | CoreError::TooFewDraws { .. }
            | CoreError::SpatialIndexOutOfRange(_, _)
            | CoreError::SeriesTooShort { .. }
            | CoreError::ConstantSeries
            | CoreError::BadDistanceGrid => 2,

            CoreError::MaskSizeMismatch { .. }
            | CoreError::MaskByte { .. }
            | CoreError::EmptyMask
            | CoreError::ZeroDim(_)
            | CoreError::BadVoxelSize(_)
            | CoreError::PointOutsideGrid(_, _, _)
            | CoreError::FocusOutsideMask { .. }
            | CoreError::FocusVoxelOutsideMask { .. }
            | CoreError::CovariateLength { .. }
            | CoreError::InterceptNotOne { .. }
            | CoreError::NoStudies
            | CoreError::RegionOutsideMask(_, _)
            | CoreError::EmptyRegion(_)
            | CoreError::ZeroIntensityAtFocus(_, _, _) => 3,

            CoreError::NonPsdEmbedding { .. } | CoreError::IntensityOverflow { .. } | CoreError::BadInit(_) => 4,
        },
    }
}
