//! End-to-end run: per-series segmentation in parallel, then a single
//! merge point for the histogram, spike labelling and the knowledge graph.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::aggregate::{
    build_histogram, detect_spikes, label_events, AggregateError, EventKind, EventOfInterest, PatternMemory,
    RegimeHistogram,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::metamodel::{Evidence, KnowledgeGraph, Level, MetamodelError, Payload, Provenance, RelationKind, ABSTRACTION_OF};
use crate::segmentation::{scan_series, RegimeChange, SegmentationError};
use crate::timeseries::{Series, SeriesId};

pub const SCHEMA_VERSION: u32 = 1;

/// Caps worker threads when set to a positive integer.
pub const THREADS_ENV: &str = "REGIME_SENTINEL_THREADS";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("fleet is empty")]
    EmptyFleet,
    #[error("series {series_id}: {source}")]
    Segmentation {
        series_id: SeriesId,
        source: SegmentationError,
    },
    #[error("aggregation: {0}")]
    Aggregate(#[from] AggregateError),
    #[error("knowledge graph: {0}")]
    Metamodel(#[from] MetamodelError),
    #[error("worker pool: {0}")]
    Workers(String),
}

impl PipelineError {
    /// Whether the caller supplied bad input, as opposed to an internal fault.
    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::EmptyFleet | PipelineError::Aggregate(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: Option<u64>,
    /// SHA-256 over every series id, interval, start and value.
    pub input_digest: String,
    pub series: usize,
    pub samples: usize,
    /// Wall-clock run time; the only field that varies between identical runs.
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    #[serde(flatten)]
    pub event: EventOfInterest,
    pub explanation_text: String,
    /// Start of the detection bin, in seconds.
    pub detection_time_s: f64,
    pub suggested_action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedSeries {
    pub series_id: SeriesId,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub regime_changes: usize,
    pub events: usize,
    pub interest: usize,
    pub no_interest: usize,
    pub recovery: usize,
    pub graph_nodes: usize,
    pub graph_edges: usize,
    pub foci: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub schema_version: u32,
    pub run: RunMetadata,
    pub config: PipelineConfig,
    pub events: Vec<EventRecord>,
    pub histogram_ref: String,
    pub graph_ref: String,
    pub skipped_series: Vec<SkippedSeries>,
    pub summary: ReportSummary,
}

impl EventReport {
    /// One header line with run metadata and config, one line per event,
    /// one summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let header = serde_json::json!({
            "type": "run",
            "schema_version": self.schema_version,
            "run": self.run,
            "config": self.config,
            "histogram_ref": self.histogram_ref,
            "graph_ref": self.graph_ref,
            "skipped_series": self.skipped_series,
        });
        out.push_str(&header.to_string());
        out.push('\n');
        for e in &self.events {
            let mut v = serde_json::to_value(e).expect("event serializes");
            v["type"] = "event".into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        let mut v = serde_json::to_value(&self.summary).expect("summary serializes");
        v["type"] = "summary".into();
        out.push_str(&v.to_string());
        out.push('\n');
        out
    }

    /// The same report with the run time zeroed, for comparisons.
    pub fn without_timing(&self) -> EventReport {
        let mut r = self.clone();
        r.run.elapsed_ms = 0;
        r
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: EventReport,
    pub changes: Vec<RegimeChange>,
    pub histogram: RegimeHistogram,
    pub graph: KnowledgeGraph,
}

pub fn input_digest(fleet: &[Series]) -> String {
    let mut h = Sha256::new();
    for s in fleet {
        h.update(s.series_id.as_str().as_bytes());
        h.update([0]);
        h.update(s.sampling_interval.to_le_bytes());
        h.update(s.start_timestamp.to_le_bytes());
        h.update((s.len() as u64).to_le_bytes());
        for v in s.values() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

/// Worker count: the config hint (or every core), capped by
/// `REGIME_SENTINEL_THREADS`.
pub fn worker_count(config: &PipelineConfig) -> usize {
    let hint = config.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    cap.map_or(hint, |c| hint.min(c)).max(1)
}

fn action_for(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Interest | EventKind::Candidate => "notify operators; inspect participating devices",
        EventKind::NoInterest => "none; recurring pattern, recorded only",
        EventKind::Recovery => "confirm remediation; close the paired event",
    }
}

/// Runs every stage on `fleet`. `memory` carries no-interest learning
/// across runs; `seed` is recorded for audit only.
pub fn run_pipeline(
    config: &PipelineConfig,
    fleet: &[Series],
    memory: &mut PatternMemory,
    seed: Option<u64>,
) -> Result<PipelineOutput, PipelineError> {
    let started = Instant::now();
    config.validate()?;
    if fleet.is_empty() {
        return Err(PipelineError::EmptyFleet);
    }
    let params = config.segmentation();
    let minimum = (2 * params.m).max(params.m + 2 * params.exclusion_radius + 1);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(config))
        .build()
        .map_err(|e| PipelineError::Workers(e.to_string()))?;
    let per_series: Vec<Result<Vec<RegimeChange>, PipelineError>> = pool.install(|| {
        fleet
            .par_iter()
            .map(|s| {
                if s.len() < minimum {
                    return Ok(Vec::new());
                }
                scan_series(s, &params).map_err(|source| PipelineError::Segmentation {
                    series_id: s.series_id.clone(),
                    source,
                })
            })
            .collect()
    });
    let mut changes = Vec::new();
    for r in per_series {
        changes.extend(r?);
    }
    let skipped_series: Vec<SkippedSeries> = fleet
        .iter()
        .filter(|s| s.len() < minimum)
        .map(|s| SkippedSeries {
            series_id: s.series_id.clone(),
            reason: format!("{} samples, at least {minimum} needed", s.len()),
        })
        .collect();

    let histogram = build_histogram(fleet, &changes, config.bin_width)?;
    let events = detect_spikes(&histogram, &config.spikes(), fleet.len())?;
    memory.no_interest_threshold = config.no_interest_threshold;
    let events = label_events(events, memory, config.recovery_horizon, histogram.first_bin);

    let mut graph = KnowledgeGraph::new();
    let goal = graph.add_node(Level::Star, "detect events of interest", None, Provenance::BottomUp)?;
    for s in fleet {
        graph.attach_source(s.series_id.clone(), s.start_timestamp, s.end_timestamp());
        let payload = Payload::SeriesSlice {
            series_id: s.series_id.clone(),
            start_ts: s.start_timestamp,
            end_ts: s.end_timestamp(),
        };
        graph.register_region(payload, &format!("{}-behavior", s.series_id))?;
    }
    let mut evidence: Vec<Evidence> = changes.iter().cloned().map(Evidence::Change).collect();
    evidence.extend(events.iter().cloned().map(Evidence::Event));
    graph.refresh_bottom_up(&evidence)?;
    for e in &events {
        if let Some(node) = graph.event_node(e.event_id) {
            graph.add_relation(node, goal, ABSTRACTION_OF, RelationKind::AntiSymmetric)?;
        }
    }
    let foci = graph.partition_foa(goal)?.len();

    let mut counts: BTreeMap<EventKind, usize> = BTreeMap::new();
    let records: Vec<EventRecord> = events
        .into_iter()
        .map(|event| {
            *counts.entry(event.kind).or_default() += 1;
            EventRecord {
                explanation_text: event.explanation.render(),
                detection_time_s: event.detection_bin as f64 * config.bin_width as f64 * config.sampling_interval,
                suggested_action: action_for(event.kind).to_string(),
                event,
            }
        })
        .collect();
    let count = |k| counts.get(&k).copied().unwrap_or(0);
    let summary = ReportSummary {
        regime_changes: changes.len(),
        events: records.len(),
        interest: count(EventKind::Interest),
        no_interest: count(EventKind::NoInterest),
        recovery: count(EventKind::Recovery),
        graph_nodes: graph.nodes().len(),
        graph_edges: graph.edges().len(),
        foci,
    };
    let report = EventReport {
        schema_version: SCHEMA_VERSION,
        run: RunMetadata {
            config_hash: config.hash(),
            seed,
            input_digest: input_digest(fleet),
            series: fleet.len(),
            samples: fleet.iter().map(Series::len).sum(),
            elapsed_ms: started.elapsed().as_millis() as u64,
        },
        config: config.clone(),
        events: records,
        histogram_ref: "histogram.tsv".into(),
        graph_ref: "graph.jsonl".into(),
        skipped_series,
        summary,
    };
    Ok(PipelineOutput {
        report,
        changes,
        histogram,
        graph,
    })
}
