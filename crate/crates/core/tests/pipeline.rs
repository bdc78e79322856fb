use regime_sentinel::aggregate::{EventKind, PatternMemory};
use regime_sentinel::config::PipelineConfig;
use regime_sentinel::ingest::{parse_telemetry, parse_telemetry_str, write_csv, Format, GapPolicy, IngestError};
use regime_sentinel::pipeline::{run_pipeline, PipelineError};
use regime_sentinel::sim::{generate_fleet, inject, standard_catalog, FleetSpec};
use regime_sentinel::timeseries::Series;

fn run(fleet: &[Series]) -> regime_sentinel::pipeline::PipelineOutput {
    let config = PipelineConfig::default();
    run_pipeline(&config, fleet, &mut PatternMemory::new(3), Some(7)).unwrap()
}

fn port_shut_down(seed: u64) -> Vec<Series> {
    let sc = standard_catalog().into_iter().find(|s| s.event_kind == "port_shut_down").unwrap();
    inject(&generate_fleet(&FleetSpec::desk_scale(seed)).unwrap(), &sc).unwrap()
}

#[test]
fn gap_interpolation_matches_hand_built_series() {
    let text = "series_id,timestamp,value\n\
                a,0,1\na,6,3\na,24,9\na,30,4\n\
                b,0,0\nb,6,0\n";
    let fleet = parse_telemetry_str(text, Format::Csv, &GapPolicy::default()).unwrap();
    let expected = Series::new("a", 6.0, 0, vec![1.0, 3.0, 5.0, 7.0, 9.0, 4.0]).unwrap();
    assert_eq!(fleet[0], expected);
    assert_eq!(fleet[1].values(), &[0.0, 0.0]);
}

#[test]
fn jsonl_and_csv_agree() {
    let csv = "series_id,timestamp,value\nx,12,1.5\nx,18,2.5\nx,24,-1\n";
    let jsonl = r#"{"series_id":"x","timestamp":12,"value":1.5}
{"series_id":"x","timestamp":18,"value":2.5}
{"series_id":"x","timestamp":24,"value":-1}
"#;
    let a = parse_telemetry_str(csv, Format::Csv, &GapPolicy::default()).unwrap();
    let b = parse_telemetry_str(jsonl, Format::Jsonl, &GapPolicy::default()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a[0].start_timestamp, 2);
    assert!(matches!("xml".parse::<Format>(), Err(IngestError::UnknownFormat(_))));
}

#[test]
fn exported_fleet_reingests_to_the_same_result() {
    let fleet = port_shut_down(4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fleet.csv");
    write_csv(&fleet, std::fs::File::create(&path).unwrap()).unwrap();
    let back = parse_telemetry(&path, Format::Csv, &GapPolicy::default()).unwrap();
    assert_eq!(back, fleet);
    let a = run(&fleet).report.without_timing();
    let b = run(&back).report.without_timing();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
}

#[test]
fn null_fleet_reports_nothing() {
    let out = run(&generate_fleet(&FleetSpec::desk_scale(31)).unwrap());
    assert!(out.report.events.is_empty());
    assert_eq!(out.report.summary.events, 0);
}

#[test]
fn port_shut_down_yields_onset_and_recovery() {
    let out = run(&port_shut_down(7));
    let events = &out.report.events;
    let interest: Vec<_> = events.iter().filter(|e| e.event.kind == EventKind::Interest).collect();
    let recovery: Vec<_> = events.iter().filter(|e| e.event.kind == EventKind::Recovery).collect();
    assert_eq!((interest.len(), recovery.len()), (1, 1));
    assert!(interest[0].event.detection_bin <= 60);
    assert!(recovery[0].event.detection_bin <= 110);
    assert_eq!(recovery[0].event.paired_event, Some(interest[0].event.event_id));
    assert!(interest[0].explanation_text.contains("threshold"));
    assert!(!interest[0].suggested_action.is_empty());
}

#[test]
fn reports_are_reproducible_and_self_describing() {
    let fleet = port_shut_down(9);
    let a = run(&fleet).report;
    let b = run(&fleet).report;
    assert_eq!(a.without_timing(), b.without_timing());
    assert_eq!(a.without_timing().to_jsonl(), b.without_timing().to_jsonl());
    assert_eq!(a.run.config_hash, a.config.hash());
    let header: serde_json::Value = serde_json::from_str(a.to_jsonl().lines().next().unwrap()).unwrap();
    let config: PipelineConfig = serde_json::from_value(header["config"].clone()).unwrap();
    assert_eq!(config.hash(), header["run"]["config_hash"].as_str().unwrap());
    assert_eq!(header["schema_version"], 1);
}

#[test]
fn thread_count_does_not_change_results() {
    let fleet = port_shut_down(12);
    let one = PipelineConfig { threads: Some(1), ..Default::default() };
    let four = PipelineConfig { threads: Some(4), ..Default::default() };
    let a = run_pipeline(&one, &fleet, &mut PatternMemory::new(3), None).unwrap();
    let b = run_pipeline(&four, &fleet, &mut PatternMemory::new(3), None).unwrap();
    assert_eq!(a.changes, b.changes);
    assert_eq!(a.report.events, b.report.events);
}

#[test]
fn bad_inputs_are_validation_errors() {
    let config = PipelineConfig { min_fraction: 2.0, ..Default::default() };
    let fleet = generate_fleet(&FleetSpec::desk_scale(1)).unwrap();
    let err = run_pipeline(&config, &fleet, &mut PatternMemory::new(3), None).unwrap_err();
    assert!(err.is_validation());
    let err = run_pipeline(&PipelineConfig::default(), &[], &mut PatternMemory::new(3), None).unwrap_err();
    assert!(matches!(err, PipelineError::EmptyFleet));
}

#[test]
fn short_series_are_skipped_and_listed() {
    let mut fleet = generate_fleet(&FleetSpec::desk_scale(1)).unwrap();
    fleet.push(Series::new("tiny", 6.0, 0, vec![1.0, 2.0, 3.0]).unwrap());
    let out = run(&fleet);
    assert_eq!(out.report.skipped_series.len(), 1);
    assert_eq!(out.report.skipped_series[0].series_id.as_str(), "tiny");
}
