use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::timeseries::{Series, SeriesId};

/// Effect archetypes. Magnitudes are expressed in units of the affected
/// series' own baseline standard deviation so one scenario fits every
/// series regardless of level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    /// Values pinned to `floor` (absolute units, typically 0).
    DropToFloor { floor: f64 },
    /// Additive square wave of `amplitude` std units and `period` samples.
    Oscillate { amplitude: f64, period: usize },
    /// Additive ramp of `slope` std units per sample from the local onset.
    RampDrift { slope: f64 },
    /// Additive step of `shift` std units.
    LevelShift { shift: f64 },
    /// Microbursts: an impulse of `factor` std units every `period` samples.
    /// Rescaling the noise itself would vanish under z-normalization.
    VarianceBurst { factor: f64, period: usize },
}

impl Effect {
    pub fn archetype(&self) -> &'static str {
        match self {
            Effect::DropToFloor { .. } => "drop_to_floor",
            Effect::Oscillate { .. } => "oscillate",
            Effect::RampDrift { .. } => "ramp_drift",
            Effect::LevelShift { .. } => "level_shift",
            Effect::VarianceBurst { .. } => "variance_burst",
        }
    }

    /// Weakest calibrated form of an archetype that still leaves a regime
    /// change near its onset at the default window length. A level shift
    /// alone has none: it does not alter any z-normalized window.
    pub fn minimum_detectable(archetype: &str) -> Option<Effect> {
        match archetype {
            "drop_to_floor" => Some(Effect::DropToFloor { floor: 0.0 }),
            "oscillate" => Some(Effect::Oscillate { amplitude: 3.0, period: 6 }),
            "ramp_drift" => Some(Effect::RampDrift { slope: 0.5 }),
            "variance_burst" => Some(Effect::VarianceBurst { factor: 5.0, period: 4 }),
            _ => None,
        }
    }

    /// True when the effect leaves values untouched.
    pub fn is_identity(&self) -> bool {
        match *self {
            Effect::DropToFloor { .. } => false,
            Effect::Oscillate { amplitude, .. } => amplitude == 0.0,
            Effect::RampDrift { slope } => slope == 0.0,
            Effect::LevelShift { shift } => shift == 0.0,
            Effect::VarianceBurst { factor, .. } => factor == 0.0,
        }
    }

    fn validate(&self) -> Result<(), String> {
        let finite = |x: f64, what: &str| {
            if x.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        };
        match *self {
            Effect::DropToFloor { floor } => finite(floor, "floor"),
            Effect::Oscillate { amplitude, period } => {
                finite(amplitude, "amplitude")?;
                if period < 2 {
                    return Err("oscillation period must be at least 2".into());
                }
                Ok(())
            }
            Effect::RampDrift { slope } => finite(slope, "slope"),
            Effect::LevelShift { shift } => finite(shift, "shift"),
            Effect::VarianceBurst { factor, period } => {
                finite(factor, "factor")?;
                if period < 2 {
                    return Err("burst period must be at least 2".into());
                }
                Ok(())
            }
        }
    }

    /// Applies the effect in place to `window`, whose first sample is the
    /// local onset. `scale` is the pre-onset baseline std.
    fn apply(&self, window: &mut [f64], scale: f64) {
        match *self {
            Effect::DropToFloor { floor } => window.iter_mut().for_each(|v| *v = floor),
            Effect::Oscillate { amplitude, period } => {
                let half = period / 2;
                for (k, v) in window.iter_mut().enumerate() {
                    let sign = if (k % period) < half { 1.0 } else { -1.0 };
                    *v += sign * amplitude * scale;
                }
            }
            Effect::RampDrift { slope } => {
                for (k, v) in window.iter_mut().enumerate() {
                    *v += slope * scale * (k + 1) as f64;
                }
            }
            Effect::LevelShift { shift } => window.iter_mut().for_each(|v| *v += shift * scale),
            Effect::VarianceBurst { factor, period } => {
                for v in window.iter_mut().step_by(period) {
                    *v += factor * scale;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionScenario {
    pub scenario_id: String,
    pub event_kind: String,
    pub affected_series: Vec<SeriesId>,
    pub start_ts: i64,
    pub end_ts: i64,
    /// Effects applied in order; most kinds use a single archetype.
    pub effects: Vec<Effect>,
    /// Each affected series is offset by an integer drawn uniformly from
    /// `[0, onset_jitter]` timestamps, shifting both its onset and end.
    #[serde(default)]
    pub onset_jitter: u32,
    #[serde(default)]
    pub jitter_seed: u64,
}

impl InjectionScenario {
    pub fn validate_against(&self, fleet: &[Series]) -> Result<(), SimError> {
        let out = |reason: String| SimError::ScenarioOutOfRange {
            scenario_id: self.scenario_id.clone(),
            reason,
        };
        if self.affected_series.is_empty() {
            return Err(out("no affected series".into()));
        }
        if self.start_ts >= self.end_ts {
            return Err(out(format!("start {} is not before end {}", self.start_ts, self.end_ts)));
        }
        if self.effects.is_empty() {
            return Err(out("no effects".into()));
        }
        for effect in &self.effects {
            effect.validate().map_err(out)?;
        }
        let by_id: HashMap<&SeriesId, &Series> = fleet.iter().map(|s| (&s.series_id, s)).collect();
        let mut seen = BTreeSet::new();
        for id in &self.affected_series {
            let Some(series) = by_id.get(id) else {
                return Err(out(format!("series {id} is not in the fleet")));
            };
            if !seen.insert(id) {
                return Err(out(format!("series {id} listed twice")));
            }
            if self.start_ts < series.start_timestamp || self.end_ts > series.end_timestamp() {
                return Err(out(format!(
                    "window [{}, {}) exceeds series {id} span [{}, {})",
                    self.start_ts,
                    self.end_ts,
                    series.start_timestamp,
                    series.end_timestamp()
                )));
            }
        }
        Ok(())
    }

    /// Per-series onset offsets, in the order of `affected_series`.
    pub fn offsets(&self) -> Vec<i64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.jitter_seed);
        self.affected_series
            .iter()
            .map(|_| rng.random_range(0..=self.onset_jitter) as i64)
            .collect()
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt()
}

/// Applies `scenario` to a copy of `fleet`. Each affected series is modified
/// over `[start + offset, end + offset)` (clipped to the series) and left
/// untouched afterwards, so it returns to its baseline at the end. Series not
/// listed are returned bit-identical.
pub fn inject(fleet: &[Series], scenario: &InjectionScenario) -> Result<Vec<Series>, SimError> {
    scenario.validate_against(fleet)?;
    let offsets: HashMap<&SeriesId, i64> = scenario
        .affected_series
        .iter()
        .zip(scenario.offsets())
        .collect();
    let mut out = fleet.to_vec();
    for series in &mut out {
        let Some(&offset) = offsets.get(&series.series_id) else {
            continue;
        };
        let len = series.len() as i64;
        let lo = (scenario.start_ts + offset - series.start_timestamp).clamp(0, len) as usize;
        let hi = (scenario.end_ts + offset - series.start_timestamp).clamp(0, len) as usize;
        if lo >= hi {
            continue;
        }
        let baseline = if lo >= 8 { &series.values()[..lo] } else { series.values() };
        let std = std_dev(baseline);
        let scale = if std > 0.0 { std } else { 1.0 };
        let values = series.values_mut();
        for effect in &scenario.effects {
            effect.apply(&mut values[lo..hi], scale);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_fleet, FleetSpec};

    fn scenario(effects: Vec<Effect>, affected: usize, jitter: u32) -> InjectionScenario {
        InjectionScenario {
            scenario_id: "t".into(),
            event_kind: "port_shut_down".into(),
            affected_series: (0..affected).map(|i| crate::sim::series_name(i, 50)).collect(),
            start_ts: 50,
            end_ts: 100,
            effects,
            onset_jitter: jitter,
            jitter_seed: 3,
        }
    }

    #[test]
    fn shutdown_pins_floor_and_isolates() {
        let fleet = generate_fleet(&FleetSpec::desk_scale(11)).unwrap();
        let sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 40, 0);
        let out = inject(&fleet, &sc).unwrap();
        for (before, after) in fleet.iter().zip(&out).take(40) {
            assert!(after.values()[50..100].iter().all(|&v| v == 0.0));
            assert_eq!(before.values()[..50], after.values()[..50]);
            assert_eq!(before.values()[100..], after.values()[100..]);
        }
        for (before, after) in fleet.iter().zip(&out).skip(40) {
            assert_eq!(before, after);
        }
    }

    #[test]
    fn zero_magnitude_is_identity() {
        let fleet = generate_fleet(&FleetSpec::desk_scale(2)).unwrap();
        for effect in [
            Effect::LevelShift { shift: 0.0 },
            Effect::RampDrift { slope: 0.0 },
            Effect::Oscillate { amplitude: 0.0, period: 6 },
            Effect::VarianceBurst { factor: 0.0, period: 4 },
        ] {
            assert!(effect.is_identity());
            let out = inject(&fleet, &scenario(vec![effect], 50, 8)).unwrap();
            assert_eq!(out, fleet);
        }
    }

    #[test]
    fn ramp_drift_is_strictly_increasing_at_slope() {
        let fleet = generate_fleet(&FleetSpec::desk_scale(5)).unwrap();
        let out = inject(&fleet, &scenario(vec![Effect::RampDrift { slope: 0.5 }], 10, 0)).unwrap();
        for (before, after) in fleet.iter().zip(&out).take(10) {
            let scale = std_dev(&before.values()[..50]);
            let delta: Vec<f64> = (50..100).map(|t| after.values()[t] - before.values()[t]).collect();
            for (k, d) in delta.iter().enumerate() {
                assert!((d - 0.5 * scale * (k + 1) as f64).abs() < 1e-9);
            }
            assert!(delta.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn jitter_shifts_window_within_bound() {
        let fleet = generate_fleet(&FleetSpec::desk_scale(9)).unwrap();
        let sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 40, 8);
        let offsets = sc.offsets();
        assert!(offsets.iter().all(|&o| (0..=8).contains(&o)));
        assert!(offsets.iter().any(|&o| o != offsets[0]));
        let out = inject(&fleet, &sc).unwrap();
        for (series, &o) in out.iter().zip(&offsets) {
            let o = o as usize;
            assert!(series.values()[50 + o..100 + o].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn out_of_range_scenarios() {
        let fleet = generate_fleet(&FleetSpec::desk_scale(1)).unwrap();
        let mut sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 5, 0);
        sc.end_ts = 301;
        assert!(matches!(inject(&fleet, &sc), Err(SimError::ScenarioOutOfRange { .. })));
        let mut sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 5, 0);
        sc.affected_series.push(SeriesId::from("nope"));
        assert!(inject(&fleet, &sc).is_err());
        let mut sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 5, 0);
        sc.start_ts = 100;
        assert!(inject(&fleet, &sc).is_err());
        let sc = scenario(vec![Effect::DropToFloor { floor: 0.0 }], 0, 0);
        assert!(inject(&fleet, &sc).is_err());
    }
}
