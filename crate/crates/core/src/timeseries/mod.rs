//! Numerical kernels: series container, sliding window statistics,
//! z-normalized distance profiles and the matrix profile.

mod distance;
mod profile;
mod series;
mod stats;

pub use distance::{distance_profile, znorm_distance};
pub use profile::{
    default_exclusion_radius, matrix_profile, matrix_profile_bruteforce,
    matrix_profile_with_exclusion, MatrixProfile,
};
pub use series::{Series, SeriesId};
pub use stats::{SlidingStats, FLAT_STD};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimeseriesError {
    #[error("series {series_id} has {len} samples, need at least {needed}")]
    SeriesTooShort {
        series_id: String,
        len: usize,
        needed: usize,
    },
    #[error("window length {0} is invalid, must be at least 2")]
    InvalidWindow(usize),
    #[error("query start {start} out of range, last valid window starts at {last}")]
    IndexOutOfRange { start: usize, last: usize },
    #[error("series {series_id} has a non-finite value at sample {index}")]
    NonFiniteValue { series_id: String, index: usize },
    #[error("sampling interval must be positive, got {0}")]
    InvalidSamplingInterval(f64),
    #[error("exclusion radius {radius} leaves no candidate neighbours for {windows} windows")]
    InvalidExclusion { radius: usize, windows: usize },
    #[error("sliding statistics were computed for m={stats_m}, requested m={m}")]
    StatsMismatch { stats_m: usize, m: usize },
}
