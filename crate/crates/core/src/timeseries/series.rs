use std::fmt;

use serde::{Deserialize, Serialize};

use super::TimeseriesError;

/// Opaque identifier of one device metric.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeriesId(pub String);

impl SeriesId {
    pub fn new(id: impl Into<String>) -> Self {
        SeriesId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SeriesId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SeriesId {
    fn from(s: &str) -> Self {
        SeriesId(s.to_owned())
    }
}

/// One uniformly sampled metric.
///
/// `start_timestamp` is an epoch index: sample `k` sits at timestamp
/// `start_timestamp + k`, i.e. `(start_timestamp + k) * sampling_interval`
/// seconds on the fleet clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub series_id: SeriesId,
    pub sampling_interval: f64,
    pub start_timestamp: i64,
    values: Vec<f64>,
}

impl Series {
    pub fn new(
        series_id: impl Into<SeriesId>,
        sampling_interval: f64,
        start_timestamp: i64,
        values: Vec<f64>,
    ) -> Result<Self, TimeseriesError> {
        let series_id = series_id.into();
        if !(sampling_interval > 0.0 && sampling_interval.is_finite()) {
            return Err(TimeseriesError::InvalidSamplingInterval(sampling_interval));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(TimeseriesError::NonFiniteValue {
                series_id: series_id.0,
                index,
            });
        }
        Ok(Series {
            series_id,
            sampling_interval,
            start_timestamp,
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Timestamp (epoch index) of sample `position`.
    pub fn timestamp_at(&self, position: usize) -> i64 {
        self.start_timestamp + position as i64
    }

    pub fn end_timestamp(&self) -> i64 {
        self.start_timestamp + self.values.len() as i64
    }

    /// Replaces the values, re-checking finiteness.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, TimeseriesError> {
        Series::new(
            self.series_id.clone(),
            self.sampling_interval,
            self.start_timestamp,
            values,
        )
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub(crate) fn require_profile_length(&self, m: usize) -> Result<(), TimeseriesError> {
        if m < 2 {
            return Err(TimeseriesError::InvalidWindow(m));
        }
        if self.values.len() < 2 * m {
            return Err(TimeseriesError::SeriesTooShort {
                series_id: self.series_id.0.clone(),
                len: self.values.len(),
                needed: 2 * m,
            });
        }
        Ok(())
    }
}

impl From<String> for SeriesId {
    fn from(s: String) -> Self {
        SeriesId(s)
    }
}
