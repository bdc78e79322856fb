//! Semantic segmentation of a single series.
//!
//! Every window `i` of a matrix profile points at its nearest neighbour
//! `indices[i]`; the arc between the two spans every position strictly in
//! between. A behavioural boundary is a place few arcs cross. The corrected
//! arc curve divides the raw crossing count by the count expected from
//! uniformly random arcs, giving a score in `[0, 1]` where dips mark regime
//! changes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeseries::{matrix_profile_with_exclusion, MatrixProfile, Series, SeriesId, TimeseriesError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SegmentationError {
    #[error("profile index {index} at position {position} is outside the {len} windows")]
    InvalidProfile {
        position: usize,
        index: usize,
        len: usize,
    },
    #[error("arc curve needs at least 3 positions, got {0}")]
    CurveTooShort(usize),
    #[error("threshold must lie strictly between 0 and 1, got {0}")]
    InvalidThreshold(f64),
    #[error("regime exclusion must be at least 1 sample")]
    InvalidRegimeExclusion,
    #[error("scan horizon {horizon} with hop {hop} cannot hold a matrix profile")]
    InvalidHorizon { horizon: usize, hop: usize },
    #[error(transparent)]
    Timeseries(#[from] TimeseriesError),
}

/// Raw nearest-neighbour arc crossings per window position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcCurve {
    pub m: usize,
    pub raw_crossings: Vec<u64>,
}

impl ArcCurve {
    pub fn len(&self) -> usize {
        self.raw_crossings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw_crossings.is_empty()
    }
}

/// Normalized crossing score; positions within `edge_exclusion` of either
/// end are pinned to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedArcCurve {
    pub values: Vec<f64>,
    pub edge_exclusion: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeChange {
    pub series_id: SeriesId,
    pub position: usize,
    pub timestamp: i64,
    pub salience: f64,
}

/// Knobs for [`segment_series`] and [`scan_series`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentationParams {
    pub m: usize,
    pub exclusion_radius: usize,
    pub edge_exclusion: usize,
    pub threshold: f64,
    pub regime_exclusion: usize,
    /// Length of each segment scanned by [`scan_series`].
    pub horizon: usize,
    /// Step between consecutive scan segments.
    pub hop: usize,
}

/// Default subsequence length in samples.
pub const DEFAULT_M: usize = 15;

impl SegmentationParams {
    /// Defaults derived from the window length: exclusion `ceil(m/2)`, edge
    /// exclusion `m`, threshold 0.45, regime exclusion `2m`, horizon `6m`
    /// scanned every `m` samples.
    pub fn for_window(m: usize) -> Self {
        SegmentationParams {
            m,
            exclusion_radius: m.div_ceil(2),
            edge_exclusion: m,
            threshold: 0.45,
            regime_exclusion: 2 * m,
            horizon: 6 * m,
            hop: m.max(1),
        }
    }

    pub fn validate(&self) -> Result<(), SegmentationError> {
        if self.m < 2 {
            return Err(TimeseriesError::InvalidWindow(self.m).into());
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(SegmentationError::InvalidThreshold(self.threshold));
        }
        if self.regime_exclusion == 0 {
            return Err(SegmentationError::InvalidRegimeExclusion);
        }
        if self.hop == 0 || self.horizon < self.m + 2 * self.exclusion_radius + 1 || self.horizon < 2 * self.m {
            return Err(SegmentationError::InvalidHorizon {
                horizon: self.horizon,
                hop: self.hop,
            });
        }
        Ok(())
    }
}

impl Default for SegmentationParams {
    fn default() -> Self {
        SegmentationParams::for_window(DEFAULT_M)
    }
}

/// Counts, for every position `k`, the arcs `i -> indices[i]` with
/// `min < k < max`, via a difference array.
pub fn arc_curve(profile: &MatrixProfile) -> Result<ArcCurve, SegmentationError> {
    let len = profile.indices.len();
    let mut diff = vec![0i64; len + 1];
    for (position, &index) in profile.indices.iter().enumerate() {
        if index >= len {
            return Err(SegmentationError::InvalidProfile { position, index, len });
        }
        let (lo, hi) = if position < index { (position, index) } else { (index, position) };
        if hi > lo + 1 {
            diff[lo + 1] += 1;
            diff[hi] -= 1;
        }
    }
    let mut running = 0i64;
    let raw_crossings = diff[..len]
        .iter()
        .map(|d| {
            running += d;
            running as u64
        })
        .collect();
    Ok(ArcCurve {
        m: profile.m,
        raw_crossings,
    })
}

/// Expected crossings at position `i` of a length-`len` curve under
/// uniformly random arcs: `2 i (len - i) / len`.
pub fn ideal_crossings(i: usize, len: usize) -> f64 {
    let (i, l) = (i as f64, len as f64);
    2.0 * i * (l - i) / l
}

/// Corrected arc curve with the default edge exclusion of `m` samples.
pub fn corrected_arc_curve(arcs: &ArcCurve) -> Result<CorrectedArcCurve, SegmentationError> {
    corrected_arc_curve_with_edge(arcs, arcs.m)
}

pub fn corrected_arc_curve_with_edge(
    arcs: &ArcCurve,
    edge_exclusion: usize,
) -> Result<CorrectedArcCurve, SegmentationError> {
    let len = arcs.len();
    if len < 3 {
        return Err(SegmentationError::CurveTooShort(len));
    }
    let values = arcs
        .raw_crossings
        .iter()
        .enumerate()
        .map(|(i, &raw)| {
            if i < edge_exclusion || i + edge_exclusion >= len {
                return 1.0;
            }
            let ideal = ideal_crossings(i, len);
            if ideal <= 0.0 {
                1.0
            } else {
                (raw as f64 / ideal).min(1.0)
            }
        })
        .collect();
    Ok(CorrectedArcCurve {
        values,
        edge_exclusion,
    })
}

/// Greedy lowest-first extraction: repeatedly take the lowest unmasked value
/// below `threshold`, then mask every position closer than
/// `regime_exclusion`. Returns `(position, value)` pairs sorted by position.
pub fn extract_minima(
    cac: &CorrectedArcCurve,
    threshold: f64,
    regime_exclusion: usize,
) -> Result<Vec<(usize, f64)>, SegmentationError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(SegmentationError::InvalidThreshold(threshold));
    }
    if regime_exclusion == 0 {
        return Err(SegmentationError::InvalidRegimeExclusion);
    }
    let mut candidates: Vec<(usize, f64)> = cac
        .values
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v < threshold)
        .collect();
    // lowest value first, earliest position on ties
    candidates.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let mut picked: Vec<(usize, f64)> = Vec::new();
    for (position, value) in candidates {
        if picked.iter().all(|&(p, _)| p.abs_diff(position) >= regime_exclusion) {
            picked.push((position, value));
        }
    }
    picked.sort_by_key(|&(p, _)| p);
    Ok(picked)
}

/// Regime changes for one series; salience is `1 - cac value`.
pub fn extract_regimes(
    cac: &CorrectedArcCurve,
    series_id: &SeriesId,
    start_timestamp: i64,
    threshold: f64,
    regime_exclusion: usize,
) -> Result<Vec<RegimeChange>, SegmentationError> {
    Ok(extract_minima(cac, threshold, regime_exclusion)?
        .into_iter()
        .map(|(position, value)| RegimeChange {
            series_id: series_id.clone(),
            position,
            timestamp: start_timestamp + position as i64,
            salience: 1.0 - value,
        })
        .collect())
}

/// Output of the full per-series chain.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub profile: MatrixProfile,
    pub arcs: ArcCurve,
    pub cac: CorrectedArcCurve,
    pub regimes: Vec<RegimeChange>,
}

/// Profile, arc curve, corrected arc curve and regime extraction for one series.
pub fn segment_series(series: &Series, params: &SegmentationParams) -> Result<Segmentation, SegmentationError> {
    let profile = matrix_profile_with_exclusion(series, params.m, params.exclusion_radius)?;
    let arcs = arc_curve(&profile)?;
    let cac = corrected_arc_curve_with_edge(&arcs, params.edge_exclusion)?;
    let regimes = extract_regimes(
        &cac,
        &series.series_id,
        series.start_timestamp,
        params.threshold,
        params.regime_exclusion,
    )?;
    Ok(Segmentation {
        profile,
        arcs,
        cac,
        regimes,
    })
}

/// Gaussian log-likelihood ratio of splitting `x` at `at` against no split,
/// both sides modelled with their own mean and variance.
fn split_gain(x: &[f64], at: usize, floor: f64) -> f64 {
    let nll = |w: &[f64]| {
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        n * (var + floor).ln()
    };
    nll(x) - nll(&x[..at]) - nll(&x[at..])
}

/// Sample index at which the regime around CAC dip `k` most likely starts.
///
/// A dip at window `k` means the windows left of it and right of it match
/// within their own side; the change itself lies somewhere in
/// `k + 1 ..= k + m`. Each candidate split is scored on `m` samples either
/// side and the best one wins, earliest on ties.
pub fn localize_change(values: &[f64], k: usize, m: usize) -> usize {
    let n = values.len();
    let half = m / 2;
    let lo = (k + 1).saturating_sub(half).max(2);
    let hi = (k + m + half).min(n.saturating_sub(2));
    if lo > hi {
        return (k + 1).min(n.saturating_sub(1));
    }
    let (mut best_at, mut best_gain) = (lo, f64::NEG_INFINITY);
    for at in lo..=hi {
        let a = at.saturating_sub(m);
        let b = (at + m).min(n);
        let x = &values[a..b];
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
        let floor = 1e-9 * var + f64::MIN_POSITIVE;
        let gain = split_gain(x, at - a, floor);
        if gain > best_gain {
            best_gain = gain;
            best_at = at;
        }
    }
    best_at
}

/// Regime changes of a long series, scanned in overlapping segments.
///
/// A single corrected arc curve over the whole series only dips where the
/// two sides never resemble each other; a regime that ends and returns to
/// the earlier behaviour lets arcs jump across it. Scanning segments of
/// `horizon` samples every `hop` samples keeps each change close to a
/// segment edge. CAC values below `threshold` from all segments are merged,
/// selected greedily lowest-first with `regime_exclusion`, then each is
/// moved to the sample where the change most likely happened.
pub fn scan_series(series: &Series, params: &SegmentationParams) -> Result<Vec<RegimeChange>, SegmentationError> {
    params.validate()?;
    let n = series.len();
    let horizon = params.horizon.min(n);
    let mut starts: Vec<usize> = (0..).map(|k| k * params.hop).take_while(|&c| c + horizon <= n).collect();
    if starts.last().is_none_or(|&c| c + horizon < n) {
        starts.push(n - horizon);
    }

    let mut best: BTreeMap<usize, f64> = BTreeMap::new();
    for &c in &starts {
        let chunk = Series::new(
            series.series_id.clone(),
            series.sampling_interval,
            series.start_timestamp + c as i64,
            series.values()[c..c + horizon].to_vec(),
        )?;
        let profile = matrix_profile_with_exclusion(&chunk, params.m, params.exclusion_radius)?;
        let cac = corrected_arc_curve_with_edge(&arc_curve(&profile)?, params.edge_exclusion)?;
        for (i, &v) in cac.values.iter().enumerate() {
            if v < params.threshold {
                let slot = best.entry(c + i).or_insert(v);
                *slot = slot.min(v);
            }
        }
    }

    let mut dips: Vec<(usize, f64)> = best.into_iter().collect();
    dips.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut picked: Vec<(usize, f64)> = Vec::new();
    let mut kept: Vec<usize> = Vec::new();
    for (k, v) in dips {
        if kept.iter().any(|&q| q.abs_diff(k) < params.regime_exclusion) {
            continue;
        }
        kept.push(k);
        let at = localize_change(series.values(), k, params.m);
        if picked.iter().all(|&(p, _)| p.abs_diff(at) >= params.regime_exclusion) {
            picked.push((at, v));
        }
    }
    picked.sort_by_key(|&(p, _)| p);
    Ok(picked
        .into_iter()
        .map(|(position, value)| RegimeChange {
            series_id: series.series_id.clone(),
            position,
            timestamp: series.start_timestamp + position as i64,
            salience: 1.0 - value,
        })
        .collect())
}
