use serde::{Deserialize, Serialize};

use super::distance::{distance_from_dot, znorm_distance};
use super::{Series, SlidingStats, TimeseriesError};

/// Cells walked along one diagonal before its running dot product is
/// recomputed from scratch.
const REFRESH_CELLS: usize = 4096;

/// Nearest-neighbour distances and indices for every length-`m` window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixProfile {
    pub m: usize,
    pub distances: Vec<f64>,
    pub indices: Vec<usize>,
    pub exclusion_radius: usize,
}

impl MatrixProfile {
    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }
}

/// `ceil(m / 2)`.
pub fn default_exclusion_radius(m: usize) -> usize {
    m.div_ceil(2)
}

fn check_shape(series: &Series, m: usize, radius: usize) -> Result<usize, TimeseriesError> {
    series.require_profile_length(m)?;
    let windows = series.len() - m + 1;
    // every window needs at least one candidate farther than `radius`
    if windows < 2 * radius + 2 {
        return Err(TimeseriesError::SeriesTooShort {
            series_id: series.series_id.0.clone(),
            len: series.len(),
            needed: m + 2 * radius + 1,
        });
    }
    Ok(windows)
}

#[inline]
fn offer(dist: &mut [f64], idx: &mut [usize], at: usize, d: f64, cand: usize) {
    if d < dist[at] || (d == dist[at] && cand < idx[at]) {
        dist[at] = d;
        idx[at] = cand;
    }
}

/// Matrix profile with the default exclusion radius `ceil(m/2)`.
pub fn matrix_profile(series: &Series, m: usize) -> Result<MatrixProfile, TimeseriesError> {
    matrix_profile_with_exclusion(series, m, default_exclusion_radius(m))
}

/// Diagonal-order streaming dot-product profile (STOMP-style), O(n^2) with
/// O(1) work per cell.
///
/// Each cell `(i, j)` with `j - i > radius` updates both `i` and `j`; ties
/// go to the lower index. The reported distance for each window is then
/// recomputed exactly from the z-normalized windows so that it matches the
/// explicit definition to rounding error.
pub fn matrix_profile_with_exclusion(
    series: &Series,
    m: usize,
    exclusion_radius: usize,
) -> Result<MatrixProfile, TimeseriesError> {
    let windows = check_shape(series, m, exclusion_radius)?;
    let raw = series.values();
    let center = raw.iter().sum::<f64>() / raw.len() as f64;
    let x: Vec<f64> = raw.iter().map(|v| v - center).collect();
    let stats = SlidingStats::from_values(&x, m)?;

    let exact_dot = |i: usize, j: usize| -> f64 {
        x[i..i + m].iter().zip(&x[j..j + m]).map(|(a, b)| a * b).sum()
    };

    let mut dist = vec![f64::INFINITY; windows];
    let mut idx = vec![usize::MAX; windows];

    for offset in (exclusion_radius + 1)..windows {
        let mut dot = exact_dot(0, offset);
        let mut since_refresh = 0usize;
        for i in 0..windows - offset {
            let j = i + offset;
            if i > 0 {
                if since_refresh >= REFRESH_CELLS {
                    dot = exact_dot(i, j);
                    since_refresh = 0;
                } else {
                    dot += x[i + m - 1] * x[j + m - 1] - x[i - 1] * x[j - 1];
                }
            }
            since_refresh += 1;
            let d = distance_from_dot(
                dot,
                m,
                stats.means[i],
                stats.stds[i],
                stats.means[j],
                stats.stds[j],
            );
            offer(&mut dist, &mut idx, i, d, j);
            offer(&mut dist, &mut idx, j, d, i);
        }
    }

    for (i, d) in dist.iter_mut().enumerate() {
        let j = idx[i];
        *d = znorm_distance(&raw[i..i + m], &raw[j..j + m]);
    }

    Ok(MatrixProfile {
        m,
        distances: dist,
        indices: idx,
        exclusion_radius,
    })
}

/// Direct O(n^2 m) evaluation with explicit per-window z-normalization.
/// Intended as a reference for short series.
pub fn matrix_profile_bruteforce(series: &Series, m: usize) -> Result<MatrixProfile, TimeseriesError> {
    let radius = default_exclusion_radius(m);
    let windows = check_shape(series, m, radius)?;
    let raw = series.values();
    let mut distances = Vec::with_capacity(windows);
    let mut indices = Vec::with_capacity(windows);
    for i in 0..windows {
        let mut best = (f64::INFINITY, usize::MAX);
        for j in 0..windows {
            if i.abs_diff(j) <= radius {
                continue;
            }
            let d = znorm_distance(&raw[i..i + m], &raw[j..j + m]);
            if d < best.0 {
                best = (d, j);
            }
        }
        distances.push(best.0);
        indices.push(best.1);
    }
    Ok(MatrixProfile {
        m,
        distances,
        indices,
        exclusion_radius: radius,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<f64>) -> Series {
        Series::new("t", 6.0, 0, values).unwrap()
    }

    #[test]
    fn ramp_is_all_zero() {
        let s = series((0..64).map(f64::from).collect());
        let mp = matrix_profile(&s, 8).unwrap();
        assert_eq!(mp.len(), 57);
        assert!(mp.distances.iter().all(|&d| d < 1e-8));
        let bf = matrix_profile_bruteforce(&series((0..32).map(f64::from).collect()), 4).unwrap();
        assert!(bf.distances.iter().all(|&d| d < 1e-8));
    }

    #[test]
    fn constant_is_all_zero() {
        let mp = matrix_profile(&series(vec![3.5; 64]), 8).unwrap();
        assert!(mp.distances.iter().all(|&d| d == 0.0));
        // flat ties resolve to the lowest admissible index
        assert_eq!(mp.indices[0], 5);
        assert_eq!(mp.indices[56], 0);
    }

    #[test]
    fn too_short() {
        let s = series(vec![1.0; 15]);
        assert!(matches!(
            matrix_profile(&s, 8),
            Err(TimeseriesError::SeriesTooShort { needed: 16, .. })
        ));
        // n = 2m leaves the middle window without an admissible neighbour
        let s = series((0..16).map(|i| (i as f64).sin()).collect());
        assert!(matches!(
            matrix_profile(&s, 8),
            Err(TimeseriesError::SeriesTooShort { needed: 17, .. })
        ));
        assert!(matrix_profile(&series((0..17).map(|i| (i as f64).sin()).collect()), 8).is_ok());
    }

    #[test]
    fn exclusion_respected() {
        let values: Vec<f64> = (0..200).map(|i| ((i as f64) * 0.37).sin() + ((i * i) % 7) as f64 * 0.1).collect();
        let mp = matrix_profile(&series(values), 10).unwrap();
        for (i, &j) in mp.indices.iter().enumerate() {
            assert!(i.abs_diff(j) > mp.exclusion_radius);
        }
    }
}
