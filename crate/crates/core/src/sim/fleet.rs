use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::timeseries::{Series, SeriesId};

/// Baseline behaviour of one simulated metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineProfile {
    StationaryNoise,
    PeriodicNoise,
    DriftNoise,
}

impl BaselineProfile {
    pub const ALL: [BaselineProfile; 3] = [
        BaselineProfile::StationaryNoise,
        BaselineProfile::PeriodicNoise,
        BaselineProfile::DriftNoise,
    ];
}

/// Which baselines a fleet draws from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMix {
    /// Each series draws uniformly from the listed profiles.
    Uniform(Vec<BaselineProfile>),
    /// Every series uses the same profile.
    Only(BaselineProfile),
}

impl Default for ProfileMix {
    fn default() -> Self {
        ProfileMix::Uniform(BaselineProfile::ALL.to_vec())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetSpec {
    pub n_series: usize,
    pub length: usize,
    pub sampling_interval: f64,
    #[serde(default)]
    pub profiles: ProfileMix,
    /// Amplitude of the component shared by every series, relative to each
    /// series' own noise level.
    #[serde(default = "default_common_amplitude")]
    pub common_amplitude: f64,
    pub seed: u64,
}

fn default_common_amplitude() -> f64 {
    0.3
}

/// Smallest length accepted by [`generate_fleet`]: four default windows.
pub const MIN_FLEET_LENGTH: usize = 4 * 25;

impl FleetSpec {
    /// 50 series of 300 samples at 6 s, mixed baselines.
    pub fn desk_scale(seed: u64) -> Self {
        FleetSpec {
            n_series: 50,
            length: 300,
            sampling_interval: 6.0,
            profiles: ProfileMix::default(),
            common_amplitude: default_common_amplitude(),
            seed,
        }
    }

    /// 10,000 series of 150 samples.
    pub fn throughput(seed: u64) -> Self {
        FleetSpec {
            n_series: 10_000,
            length: 150,
            ..FleetSpec::desk_scale(seed)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_series == 0 {
            return Err(SimError::InvalidSpec("n_series must be at least 1".into()));
        }
        if self.length < MIN_FLEET_LENGTH {
            return Err(SimError::InvalidSpec(format!(
                "length {} is below the minimum of {MIN_FLEET_LENGTH}",
                self.length
            )));
        }
        if !(self.sampling_interval > 0.0 && self.sampling_interval.is_finite()) {
            return Err(SimError::InvalidSpec("sampling_interval must be positive".into()));
        }
        if !(self.common_amplitude >= 0.0 && self.common_amplitude.is_finite()) {
            return Err(SimError::InvalidSpec("common_amplitude must be non-negative".into()));
        }
        if let ProfileMix::Uniform(list) = &self.profiles {
            if list.is_empty() {
                return Err(SimError::InvalidSpec("profile mix is empty".into()));
            }
        }
        Ok(())
    }
}

/// Identifier of the `index`-th series of a fleet of `n` series.
pub fn series_name(index: usize, n: usize) -> SeriesId {
    let width = n.saturating_sub(1).to_string().len().max(3);
    SeriesId(format!("s{index:0width$}"))
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Deterministic synthetic fleet. Every series is its own baseline plus a
/// low-amplitude component common to the whole fleet, so the metrics are
/// weakly related.
pub fn generate_fleet(spec: &FleetSpec) -> Result<Vec<Series>, SimError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let common: Vec<f64> = (0..spec.length).map(|_| normal(&mut rng)).collect();

    let mut fleet = Vec::with_capacity(spec.n_series);
    for index in 0..spec.n_series {
        let profile = match &spec.profiles {
            ProfileMix::Only(p) => *p,
            ProfileMix::Uniform(list) => list[rng.random_range(0..list.len())],
        };
        let level: f64 = rng.random_range(50.0..500.0);
        let noise = level * rng.random_range(0.02..0.08);
        let mut values: Vec<f64> = match profile {
            BaselineProfile::StationaryNoise => vec![level; spec.length],
            BaselineProfile::PeriodicNoise => {
                let period: f64 = rng.random_range(12.0..60.0);
                let amplitude = noise * rng.random_range(1.0..3.0);
                let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                (0..spec.length)
                    .map(|t| level + amplitude * (std::f64::consts::TAU * t as f64 / period + phase).sin())
                    .collect()
            }
            BaselineProfile::DriftNoise => {
                let total = noise * rng.random_range(1.0..4.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let slope = total / spec.length as f64;
                (0..spec.length).map(|t| level + slope * t as f64).collect()
            }
        };
        for (t, v) in values.iter_mut().enumerate() {
            *v += noise * (normal(&mut rng) + spec.common_amplitude * common[t]);
        }
        let id = series_name(index, spec.n_series);
        let series = Series::new(id, spec.sampling_interval, 0, values)
            .map_err(|e| SimError::InvalidSpec(e.to_string()))?;
        fleet.push(series);
    }
    Ok(fleet)
}
