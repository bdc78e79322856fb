use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::SpikeParams;
use crate::segmentation::{SegmentationParams, DEFAULT_M};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} = {value} is out of range: {expected}")]
    OutOfRange {
        field: &'static str,
        value: String,
        expected: &'static str,
    },
    #[error("invalid config file: {0}")]
    Parse(String),
}

/// Every tunable of a pipeline run. Fields left as `None` follow `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Subsequence length in samples.
    pub m: usize,
    /// Trivial-match exclusion; `ceil(m/2)` when unset.
    pub exclusion_radius: Option<usize>,
    /// CAC positions pinned to 1 at each segment end; `m` when unset.
    pub edge_exclusion: Option<usize>,
    pub cac_threshold: f64,
    /// Minimum spacing of regime changes within a series; `2m` when unset.
    pub regime_exclusion: Option<usize>,
    /// Scan segment length; `6m` when unset.
    pub horizon: Option<usize>,
    /// Scan step; `m` when unset.
    pub hop: Option<usize>,
    pub bin_width: u64,
    pub k_mad: f64,
    pub min_fraction: f64,
    pub baseline_window: usize,
    pub spike_window: usize,
    pub release_fraction: f64,
    /// Bins within which a recovery may pair with its onset.
    pub recovery_horizon: i64,
    pub no_interest_threshold: u64,
    /// Seconds between samples; used for reporting and for series whose
    /// interval cannot be inferred.
    pub sampling_interval: f64,
    /// Longest gap, in samples, that ingestion interpolates.
    pub max_gap: usize,
    /// Worker threads; all cores when unset.
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let spikes = SpikeParams::default();
        PipelineConfig {
            m: DEFAULT_M,
            exclusion_radius: None,
            edge_exclusion: None,
            cac_threshold: 0.45,
            regime_exclusion: None,
            horizon: None,
            hop: None,
            bin_width: 1,
            k_mad: spikes.k_mad,
            min_fraction: spikes.min_fraction,
            baseline_window: spikes.baseline_window,
            spike_window: spikes.spike_window,
            release_fraction: spikes.release_fraction,
            recovery_horizon: 200,
            no_interest_threshold: 3,
            sampling_interval: 6.0,
            max_gap: 3,
            threads: None,
        }
    }
}

fn out_of_range(field: &'static str, value: impl ToString, expected: &'static str) -> ConfigError {
    ConfigError::OutOfRange {
        field,
        value: value.to_string(),
        expected,
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn segmentation(&self) -> SegmentationParams {
        let d = SegmentationParams::for_window(self.m);
        SegmentationParams {
            m: self.m,
            exclusion_radius: self.exclusion_radius.unwrap_or(d.exclusion_radius),
            edge_exclusion: self.edge_exclusion.unwrap_or(d.edge_exclusion),
            threshold: self.cac_threshold,
            regime_exclusion: self.regime_exclusion.unwrap_or(d.regime_exclusion),
            horizon: self.horizon.unwrap_or(d.horizon),
            hop: self.hop.unwrap_or(d.hop),
        }
    }

    pub fn spikes(&self) -> SpikeParams {
        SpikeParams {
            baseline_window: self.baseline_window,
            k_mad: self.k_mad,
            min_fraction: self.min_fraction,
            spike_window: self.spike_window,
            release_fraction: self.release_fraction,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.m < 2 {
            return Err(out_of_range("m", self.m, "at least 2"));
        }
        let seg = self.segmentation();
        if seg.exclusion_radius >= seg.horizon {
            return Err(out_of_range("exclusion_radius", seg.exclusion_radius, "below the horizon"));
        }
        if !(self.cac_threshold > 0.0 && self.cac_threshold < 1.0) {
            return Err(out_of_range("cac_threshold", self.cac_threshold, "strictly between 0 and 1"));
        }
        if seg.regime_exclusion == 0 {
            return Err(out_of_range("regime_exclusion", 0, "at least 1"));
        }
        if seg.horizon < 2 * self.m || seg.horizon < self.m + 2 * seg.exclusion_radius + 1 {
            return Err(out_of_range(
                "horizon",
                seg.horizon,
                "at least max(2m, m + 2 * exclusion_radius + 1)",
            ));
        }
        if seg.hop == 0 {
            return Err(out_of_range("hop", 0, "at least 1"));
        }
        if self.bin_width == 0 {
            return Err(out_of_range("bin_width", 0, "at least 1"));
        }
        if !(self.k_mad >= 0.0 && self.k_mad.is_finite()) {
            return Err(out_of_range("k_mad", self.k_mad, "a finite number >= 0"));
        }
        if !(0.0..=1.0).contains(&self.min_fraction) {
            return Err(out_of_range("min_fraction", self.min_fraction, "within [0, 1]"));
        }
        if self.baseline_window == 0 {
            return Err(out_of_range("baseline_window", 0, "at least 1"));
        }
        if self.spike_window == 0 {
            return Err(out_of_range("spike_window", 0, "at least 1"));
        }
        if !(0.0..=1.0).contains(&self.release_fraction) {
            return Err(out_of_range("release_fraction", self.release_fraction, "within [0, 1]"));
        }
        if self.recovery_horizon < 1 {
            return Err(out_of_range("recovery_horizon", self.recovery_horizon, "at least 1"));
        }
        if !(self.sampling_interval > 0.0 && self.sampling_interval.is_finite()) {
            return Err(out_of_range("sampling_interval", self.sampling_interval, "a positive number of seconds"));
        }
        if self.threads == Some(0) {
            return Err(out_of_range("threads", 0, "at least 1"));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON rendering of this config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
