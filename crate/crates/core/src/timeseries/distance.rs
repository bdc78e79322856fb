use super::stats::FLAT_STD;
use super::{Series, SlidingStats, TimeseriesError};

/// Distance between two windows given their Pearson correlation, with the
/// flat-window convention: flat vs flat is 0, flat vs anything else is
/// `sqrt(2m)`.
#[inline]
pub(crate) fn distance_from_dot(
    dot: f64,
    m: usize,
    mean_a: f64,
    std_a: f64,
    mean_b: f64,
    std_b: f64,
) -> f64 {
    let mf = m as f64;
    let flat_a = std_a < FLAT_STD;
    let flat_b = std_b < FLAT_STD;
    match (flat_a, flat_b) {
        (true, true) => 0.0,
        (true, false) | (false, true) => (2.0 * mf).sqrt(),
        (false, false) => {
            let corr = ((dot - mf * mean_a * mean_b) / (mf * std_a * std_b)).clamp(-1.0, 1.0);
            (2.0 * mf * (1.0 - corr)).max(0.0).sqrt()
        }
    }
}

fn mean_std(window: &[f64]) -> (f64, f64) {
    let m = window.len() as f64;
    let mean = window.iter().sum::<f64>() / m;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var.sqrt())
}

/// Euclidean distance between the explicitly z-normalized windows `a` and `b`.
///
/// Used to report exact distances; O(m).
pub fn znorm_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mean_a, std_a) = mean_std(a);
    let (mean_b, std_b) = mean_std(b);
    let flat_a = std_a < FLAT_STD;
    let flat_b = std_b < FLAT_STD;
    if flat_a && flat_b {
        return 0.0;
    }
    if flat_a || flat_b {
        return (2.0 * a.len() as f64).sqrt();
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - mean_a) / std_a - (y - mean_b) / std_b;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Distances from the window starting at `query_start` to every window of
/// the series, through the dot-product/correlation identity
/// `d = sqrt(2m(1 - corr))`.
pub fn distance_profile(
    series: &Series,
    query_start: usize,
    m: usize,
    stats: &SlidingStats,
) -> Result<Vec<f64>, TimeseriesError> {
    if stats.m != m {
        return Err(TimeseriesError::StatsMismatch { stats_m: stats.m, m });
    }
    let values = series.values();
    if m < 2 {
        return Err(TimeseriesError::InvalidWindow(m));
    }
    if values.len() < m || stats.len() != values.len() - m + 1 {
        return Err(TimeseriesError::SeriesTooShort {
            series_id: series.series_id.0.clone(),
            len: values.len(),
            needed: m,
        });
    }
    let windows = stats.len();
    if query_start >= windows {
        return Err(TimeseriesError::IndexOutOfRange {
            start: query_start,
            last: windows - 1,
        });
    }
    let query = &values[query_start..query_start + m];
    let (qm, qs) = (stats.means[query_start], stats.stds[query_start]);
    Ok((0..windows)
        .map(|j| {
            if j == query_start {
                return 0.0;
            }
            let dot: f64 = query.iter().zip(&values[j..j + m]).map(|(a, b)| a * b).sum();
            distance_from_dot(dot, m, qm, qs, stats.means[j], stats.stds[j])
        })
        .collect())
}
