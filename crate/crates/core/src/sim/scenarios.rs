use serde::{Deserialize, Serialize};

use super::{generate_fleet, inject, series_name, Effect, FleetSpec, InjectionScenario, SimError};
use crate::aggregate::{EventKind, EventOfInterest, PatternMemory};
use crate::config::PipelineConfig;
use crate::pipeline::{run_pipeline, SCHEMA_VERSION};

/// Bound on detection and recovery delay, in timestamps.
pub const DELAY_BOUND: i64 = 10;

/// Onset jitter used by the standard catalog.
pub const CATALOG_JITTER: u32 = 8;

struct Variant {
    kind: &'static str,
    effects: Vec<Effect>,
    affected: usize,
    start: i64,
    end: i64,
}

fn v(kind: &'static str, effects: Vec<Effect>, affected: usize, start: i64, end: i64) -> Variant {
    Variant {
        kind,
        effects,
        affected,
        start,
        end,
    }
}

fn floor() -> Vec<Effect> {
    vec![Effect::DropToFloor { floor: 0.0 }]
}

fn osc(amplitude: f64, period: usize) -> Vec<Effect> {
    vec![Effect::Oscillate { amplitude, period }]
}

fn ramp(slope: f64) -> Vec<Effect> {
    vec![Effect::RampDrift { slope }]
}

fn shift(shift: f64, factor: f64, period: usize) -> Vec<Effect> {
    vec![Effect::LevelShift { shift }, Effect::VarianceBurst { factor, period }]
}

fn burst(factor: f64, period: usize) -> Vec<Effect> {
    vec![Effect::VarianceBurst { factor, period }]
}

/// The 30 event kinds: six variants of each of the five effect archetypes,
/// sized for 50-series fleets of 300 samples.
///
/// A pure level shift leaves every z-normalized window unchanged, so the
/// level-shift variants carry a burst component, as a pulled transceiver
/// does.
pub fn standard_catalog() -> Vec<InjectionScenario> {
    let variants = vec![
        v("port_shut_down", floor(), 40, 50, 100),
        v("link_down", floor(), 35, 120, 180),
        v("power_supply_failure", floor(), 45, 80, 150),
        v("interface_admin_down", floor(), 30, 150, 200),
        v("line_card_reset", floor(), 25, 60, 110),
        v("bgp_session_drop", floor(), 20, 100, 160),
        v("port_flap", osc(4.0, 6), 40, 50, 100),
        v("route_flap", osc(4.0, 10), 35, 90, 150),
        v("spanning_tree_loop", osc(5.0, 4), 45, 140, 200),
        v("duplex_mismatch", osc(4.0, 8), 35, 70, 130),
        v("fan_cycling", osc(5.0, 8), 30, 110, 170),
        v("cpu_contention", osc(4.0, 6), 35, 160, 220),
        v("memory_leak", ramp(1.0), 40, 60, 120),
        v("buffer_exhaustion", ramp(1.5), 35, 100, 150),
        v("route_table_growth", ramp(0.8), 30, 130, 190),
        v("temperature_rise", ramp(0.6), 45, 80, 140),
        v("queue_buildup", ramp(2.0), 25, 150, 200),
        v("session_leak", ramp(1.2), 35, 50, 110),
        v("transceiver_pull", shift(-4.0, 6.0, 4), 40, 70, 120),
        v("optic_degradation", shift(-3.0, 6.0, 4), 35, 120, 180),
        v("traffic_reroute", shift(5.0, 6.0, 3), 45, 60, 110),
        v("qos_policy_change", shift(3.0, 5.0, 4), 30, 140, 200),
        v("mtu_mismatch", shift(-5.0, 7.0, 5), 25, 90, 150),
        v("vlan_misconfiguration", shift(4.0, 6.0, 3), 35, 170, 230),
        v("microburst", burst(6.0, 4), 40, 80, 130),
        v("ddos_onset", burst(8.0, 3), 45, 110, 170),
        v("broadcast_storm", burst(7.0, 5), 35, 60, 120),
        v("crc_error_burst", burst(6.0, 3), 30, 150, 210),
        v("retransmission_storm", burst(7.0, 4), 30, 100, 150),
        v("packet_loss_bursts", burst(6.0, 3), 35, 130, 190),
    ];
    variants
        .into_iter()
        .enumerate()
        .map(|(i, var)| InjectionScenario {
            scenario_id: format!("sc{:02}-{}", i + 1, var.kind),
            event_kind: var.kind.to_string(),
            affected_series: (0..var.affected).map(|k| series_name((k * 7 + i) % 50, 50)).collect(),
            start_ts: var.start,
            end_ts: var.end,
            effects: var.effects,
            onset_jitter: CATALOG_JITTER,
            jitter_seed: 1000 + i as u64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub event_kind: String,
    /// An interest event majority-made of affected series fired between
    /// the onset and the end of the injection.
    pub detected: bool,
    /// Detection bin minus injection start.
    pub detection_delay: Option<i64>,
    /// The onset event was paired with a recovery. When several were,
    /// the one closest to the injection end counts.
    pub recovery_detected: bool,
    /// Recovery detection bin minus injection end.
    pub recovery_delay: Option<i64>,
    /// Detected and recovered, both within [`DELAY_BOUND`].
    pub within_bound: bool,
    /// Other interest events of the run.
    pub unmatched_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub scenarios: usize,
    pub detected: usize,
    pub recovered: usize,
    pub unmatched_events: usize,
    pub line: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub schema_version: u32,
    pub seed: u64,
    pub fleet: FleetSpec,
    pub config_hash: String,
    pub results: Vec<ScenarioResult>,
    pub summary: DetectionSummary,
}

impl DetectionReport {
    /// One line per scenario followed by the summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.results {
            let mut v = serde_json::to_value(r).expect("result serializes");
            v["type"] = "scenario".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let mut v = serde_json::to_value(&self.summary).expect("summary serializes");
        v["type"] = "summary".into();
        v["schema_version"] = self.schema_version.into();
        v["seed"] = self.seed.into();
        v["config_hash"] = self.config_hash.clone().into();
        out.push_str(&v.to_string());
        out.push('\n');
        out
    }
}

fn score(scenario: &InjectionScenario, events: &[EventOfInterest], spike_window: usize) -> ScenarioResult {
    let affected: std::collections::BTreeSet<_> = scenario.affected_series.iter().collect();
    let earliest = scenario.start_ts - spike_window as i64;
    let onset = events.iter().find(|e| {
        e.kind == EventKind::Interest
            && (earliest..scenario.end_ts).contains(&e.detection_bin)
            && 2 * e.participants.iter().filter(|p| affected.contains(p)).count() > e.participants.len()
    });
    let recovery = onset.and_then(|o| {
        events
            .iter()
            .filter(|e| e.kind == EventKind::Recovery && e.paired_event == Some(o.event_id))
            .min_by_key(|e| (e.detection_bin - scenario.end_ts).abs())
    });
    let detection_delay = onset.map(|e| e.detection_bin - scenario.start_ts);
    let recovery_delay = recovery.map(|e| e.detection_bin - scenario.end_ts);
    let in_bound = |d: Option<i64>| d.is_some_and(|d| d.abs() <= DELAY_BOUND);
    let unmatched = events
        .iter()
        .filter(|e| e.kind == EventKind::Interest && Some(e.event_id) != onset.map(|o| o.event_id))
        .count();
    ScenarioResult {
        scenario_id: scenario.scenario_id.clone(),
        event_kind: scenario.event_kind.clone(),
        detected: onset.is_some(),
        detection_delay,
        recovery_detected: recovery.is_some(),
        recovery_delay,
        within_bound: in_bound(detection_delay) && in_bound(recovery_delay),
        unmatched_events: unmatched,
    }
}

/// Runs each scenario on its own fleet: generate, inject, run the full
/// pipeline with fresh pattern memory, and score the events against the
/// injected window. Scenario `i` uses fleet seed `spec.seed + i` and mixes
/// `spec.seed` into its jitter seed.
pub fn run_scenarios(
    catalog: &[InjectionScenario],
    spec: &FleetSpec,
    config: &PipelineConfig,
) -> Result<DetectionReport, SimError> {
    let mut results = Vec::with_capacity(catalog.len());
    for (i, scenario) in catalog.iter().enumerate() {
        let fleet_spec = FleetSpec {
            seed: spec.seed.wrapping_add(i as u64),
            ..spec.clone()
        };
        let fleet = generate_fleet(&fleet_spec)?;
        let mut sc = scenario.clone();
        sc.jitter_seed ^= spec.seed;
        let fleet = inject(&fleet, &sc)?;
        let mut memory = PatternMemory::new(config.no_interest_threshold);
        let out = run_pipeline(config, &fleet, &mut memory, Some(fleet_spec.seed))
            .map_err(|e| SimError::Pipeline(e.to_string()))?;
        let events: Vec<EventOfInterest> = out.report.events.into_iter().map(|r| r.event).collect();
        results.push(score(scenario, &events, config.spike_window));
    }
    let detected = results
        .iter()
        .filter(|r| r.detection_delay.is_some_and(|d| d <= DELAY_BOUND))
        .count();
    let recovered = results
        .iter()
        .filter(|r| r.recovery_delay.is_some_and(|d| d.abs() <= DELAY_BOUND))
        .count();
    let unmatched_events = results.iter().map(|r| r.unmatched_events).sum();
    let summary = DetectionSummary {
        scenarios: results.len(),
        detected,
        recovered,
        unmatched_events,
        line: format!("{detected}/{} detected", results.len()),
    };
    Ok(DetectionReport {
        schema_version: SCHEMA_VERSION,
        seed: spec.seed,
        fleet: spec.clone(),
        config_hash: config.hash(),
        results,
        summary,
    })
}
