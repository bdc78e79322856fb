//! Synthetic telemetry fleets and fault injection.

mod fleet;
mod inject;
mod scenarios;

pub use fleet::{generate_fleet, series_name, BaselineProfile, FleetSpec, ProfileMix, MIN_FLEET_LENGTH};
pub use inject::{inject, Effect, InjectionScenario};
pub use scenarios::{
    run_scenarios, standard_catalog, DetectionReport, DetectionSummary, ScenarioResult, CATALOG_JITTER, DELAY_BOUND,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid fleet spec: {0}")]
    InvalidSpec(String),
    #[error("scenario {scenario_id} out of range: {reason}")]
    ScenarioOutOfRange { scenario_id: String, reason: String },
    #[error("pipeline failed: {0}")]
    Pipeline(String),
}
