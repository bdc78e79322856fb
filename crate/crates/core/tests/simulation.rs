use std::collections::BTreeSet;

use regime_sentinel::config::PipelineConfig;
use regime_sentinel::segmentation::{scan_series, SegmentationParams};
use regime_sentinel::sim::{
    generate_fleet, inject, run_scenarios, series_name, standard_catalog, Effect, FleetSpec, InjectionScenario, SimError,
};

fn scenario(effects: Vec<Effect>, affected: usize) -> InjectionScenario {
    InjectionScenario {
        scenario_id: "probe".into(),
        event_kind: "probe".into(),
        affected_series: (0..affected).map(|k| series_name(k, 50)).collect(),
        start_ts: 120,
        end_ts: 180,
        effects,
        onset_jitter: 0,
        jitter_seed: 0,
    }
}

#[test]
fn fleet_shape_and_determinism() {
    let a = generate_fleet(&FleetSpec::desk_scale(7)).unwrap();
    let b = generate_fleet(&FleetSpec::desk_scale(7)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 50);
    assert!(a.iter().all(|s| s.len() == 300 && s.sampling_interval == 6.0));
    assert_ne!(a, generate_fleet(&FleetSpec::desk_scale(8)).unwrap());
    let bad = FleetSpec { n_series: 0, ..FleetSpec::desk_scale(1) };
    assert!(matches!(generate_fleet(&bad), Err(SimError::InvalidSpec(_))));
}

#[test]
fn catalog_file_matches_builtin() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../catalogs/thirty.json");
    let text = std::fs::read_to_string(path).unwrap();
    let file: Vec<InjectionScenario> = serde_json::from_str(&text).unwrap();
    assert_eq!(file, standard_catalog());
}

#[test]
fn catalog_covers_thirty_kinds_and_five_archetypes() {
    let catalog = standard_catalog();
    assert_eq!(catalog.len(), 30);
    let kinds: BTreeSet<&str> = catalog.iter().map(|s| s.event_kind.as_str()).collect();
    assert_eq!(kinds.len(), 30);
    let archetypes: BTreeSet<&str> =
        catalog.iter().flat_map(|s| s.effects.iter().map(Effect::archetype)).collect();
    assert_eq!(archetypes.len(), 5);
    let find = |k: &str| catalog.iter().find(|s| s.event_kind == k).unwrap();
    assert_eq!(find("port_shut_down").effects, vec![Effect::DropToFloor { floor: 0.0 }]);
    assert_eq!((find("port_shut_down").start_ts, find("port_shut_down").end_ts), (50, 100));
    assert_eq!(find("port_flap").effects[0].archetype(), "oscillate");
    assert_eq!(find("memory_leak").effects[0].archetype(), "ramp_drift");
    let pull: Vec<&str> = find("transceiver_pull").effects.iter().map(Effect::archetype).collect();
    assert_eq!(pull, ["level_shift", "variance_burst"]);
    let fleet = generate_fleet(&FleetSpec::desk_scale(1)).unwrap();
    for sc in &catalog {
        sc.validate_against(&fleet).unwrap();
    }
}

#[test]
fn ramp_climbs_at_its_slope() {
    let fleet = generate_fleet(&FleetSpec::desk_scale(3)).unwrap();
    let out = inject(&fleet, &scenario(vec![Effect::RampDrift { slope: 1.0 }], 10)).unwrap();
    for (before, after) in fleet.iter().zip(&out).take(10) {
        let added: Vec<f64> = (120..180).map(|t| after.values()[t] - before.values()[t]).collect();
        let step = added[1] - added[0];
        assert!(step > 0.0);
        assert!(added.windows(2).all(|w| (w[1] - w[0] - step).abs() < 1e-9));
        assert_eq!(before.values()[180..], after.values()[180..]);
    }
}

#[test]
fn out_of_range_scenarios_are_rejected() {
    let fleet = generate_fleet(&FleetSpec::desk_scale(3)).unwrap();
    let mut sc = scenario(vec![Effect::LevelShift { shift: 2.0 }], 5);
    sc.end_ts = 400;
    assert!(matches!(inject(&fleet, &sc), Err(SimError::ScenarioOutOfRange { .. })));
    let mut sc = scenario(vec![Effect::LevelShift { shift: 2.0 }], 5);
    sc.affected_series.push("nope".into());
    assert!(matches!(inject(&fleet, &sc), Err(SimError::ScenarioOutOfRange { .. })));
}

#[test]
fn archetypes_at_minimum_magnitude_leave_an_onset_boundary() {
    let params = SegmentationParams::default();
    for archetype in ["drop_to_floor", "oscillate", "ramp_drift", "variance_burst"] {
        let effect = Effect::minimum_detectable(archetype).unwrap();
        for seed in 0..4 {
            let fleet = generate_fleet(&FleetSpec::desk_scale(100 + seed)).unwrap();
            let out = inject(&fleet, &scenario(vec![effect.clone()], 50)).unwrap();
            let near = out
                .iter()
                .filter(|s| {
                    scan_series(s, &params)
                        .unwrap()
                        .iter()
                        .any(|c| c.timestamp.abs_diff(120) <= params.m as u64)
                })
                .count();
            assert!(near >= 10, "{archetype} seed {seed}: only {near}/50 series changed near onset");
        }
    }
    assert_eq!(Effect::minimum_detectable("level_shift"), None);
}

#[test]
fn scenario_runs_are_deterministic() {
    let catalog: Vec<InjectionScenario> = standard_catalog().into_iter().take(4).collect();
    let config = PipelineConfig::default();
    let a = run_scenarios(&catalog, &FleetSpec::desk_scale(5), &config).unwrap();
    let b = run_scenarios(&catalog, &FleetSpec::desk_scale(5), &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert!(a.to_jsonl().lines().last().unwrap().contains("\"line\":\"4/4 detected\""));
}

#[test]
fn empty_catalog_detects_nothing() {
    let report = run_scenarios(&[], &FleetSpec::desk_scale(5), &PipelineConfig::default()).unwrap();
    assert_eq!(report.summary.detected, 0);
    assert_eq!(report.summary.line, "0/0 detected");
}
