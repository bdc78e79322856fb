use super::{Series, TimeseriesError};

/// Windows whose population standard deviation falls below this value are
/// treated as flat: they z-normalize to the all-zero vector.
pub const FLAT_STD: f64 = 1e-12;

/// Above this ratio between the mean square of the (shifted) window and its
/// variance, the running-sum variance has lost too many digits and the window
/// is recomputed with a two-pass pass.
const CANCELLATION_RATIO: f64 = 1e6;

/// Per-window mean and population standard deviation for windows of length `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SlidingStats {
    pub m: usize,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

/// Neumaier compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.carry += (self.sum - t) + x;
        } else {
            self.carry += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

fn two_pass(window: &[f64]) -> (f64, f64) {
    let m = window.len() as f64;
    let mean = window.iter().sum::<f64>() / m;
    let var = window.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
    (mean, var.sqrt())
}

impl SlidingStats {
    /// Running-sum computation over `values`, O(n) apart from windows that
    /// trip the cancellation guard.
    pub fn from_values(values: &[f64], m: usize) -> Result<Self, TimeseriesError> {
        if m < 2 {
            return Err(TimeseriesError::InvalidWindow(m));
        }
        let n = values.len();
        if n < m {
            return Err(TimeseriesError::SeriesTooShort {
                series_id: String::new(),
                len: n,
                needed: m,
            });
        }
        let windows = n - m + 1;
        let shift = values.iter().sum::<f64>() / n as f64;
        let mf = m as f64;

        let mut s1 = CompensatedSum::default();
        let mut s2 = CompensatedSum::default();
        for &v in &values[..m] {
            let d = v - shift;
            s1.add(d);
            s2.add(d * d);
        }

        let mut means = Vec::with_capacity(windows);
        let mut stds = Vec::with_capacity(windows);
        for i in 0..windows {
            if i > 0 {
                let out = values[i - 1] - shift;
                let inn = values[i + m - 1] - shift;
                s1.add(-out);
                s1.add(inn);
                s2.add(-(out * out));
                s2.add(inn * inn);
            }
            let shifted_mean = s1.value() / mf;
            let mean_square = (s2.value() / mf).max(0.0);
            let var = mean_square - shifted_mean * shifted_mean;
            if var <= 0.0 || mean_square > CANCELLATION_RATIO * var {
                let (mean, std) = two_pass(&values[i..i + m]);
                means.push(mean);
                stds.push(std);
            } else {
                means.push(shifted_mean + shift);
                stds.push(var.sqrt());
            }
        }
        Ok(SlidingStats { m, means, stds })
    }

    pub fn compute(series: &Series, m: usize) -> Result<Self, TimeseriesError> {
        Self::from_values(series.values(), m).map_err(|e| match e {
            TimeseriesError::SeriesTooShort { len, needed, .. } => {
                TimeseriesError::SeriesTooShort {
                    series_id: series.series_id.0.clone(),
                    len,
                    needed,
                }
            }
            other => other,
        })
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    pub fn is_flat(&self, window: usize) -> bool {
        self.stds[window] < FLAT_STD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series() {
        let s = SlidingStats::from_values(&[1.0, 1.0, 1.0, 1.0], 2).unwrap();
        assert_eq!(s.means, vec![1.0, 1.0, 1.0]);
        assert_eq!(s.stds, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn small_ramp() {
        let s = SlidingStats::from_values(&[0.0, 1.0, 2.0, 3.0], 2).unwrap();
        assert_eq!(s.means, vec![0.5, 1.5, 2.5]);
        assert_eq!(s.stds, vec![0.5, 0.5, 0.5]);
    }

    #[test]
    fn window_errors() {
        assert_eq!(
            SlidingStats::from_values(&[1.0, 2.0], 1),
            Err(TimeseriesError::InvalidWindow(1))
        );
        assert!(matches!(
            SlidingStats::from_values(&[1.0, 2.0], 3),
            Err(TimeseriesError::SeriesTooShort { len: 2, needed: 3, .. })
        ));
    }

    #[test]
    fn flat_stretch_inside_large_offset_series() {
        // a floor of zeros embedded in values around 1e3: the running sums
        // would leave a spurious ~1e-6 std without the cancellation guard
        let mut values: Vec<f64> = (0..60).map(|i| 1000.0 + (i as f64 * 0.7).sin()).collect();
        for v in &mut values[20..45] {
            *v = 0.0;
        }
        let s = SlidingStats::from_values(&values, 10).unwrap();
        for i in 20..=35 {
            assert!(s.is_flat(i), "window {i} std {}", s.stds[i]);
        }
    }
}
