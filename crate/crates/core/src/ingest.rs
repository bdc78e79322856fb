//! Telemetry files to [`Series`].
//!
//! Both formats carry one sample per record with the fields `series_id`,
//! `timestamp` (seconds) and `value`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

use crate::timeseries::{Series, SeriesId};

/// Relative tolerance on sample spacing.
pub const SAMPLING_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("series {series_id}: spacing {gap} s at timestamp {timestamp} is not a multiple of {interval} s")]
    NonUniformSampling {
        series_id: String,
        timestamp: f64,
        gap: f64,
        interval: f64,
    },
    #[error("input holds no samples")]
    EmptyInput,
    #[error("unknown format {0:?}, expected csv or jsonl")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl FromStr for Format {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Format::Csv),
            "jsonl" | "ndjson" => Ok(Format::Jsonl),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

/// What to do about missing samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPolicy {
    /// Gaps of at most this many missing samples are filled linearly;
    /// longer ones split the series.
    pub max_interpolated: usize,
    /// Interval assumed for series with a single sample.
    pub default_interval: f64,
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy {
            max_interpolated: 3,
            default_interval: 6.0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct Record {
    series_id: String,
    timestamp: f64,
    value: f64,
}

fn check(rec: Record, line: usize) -> Result<Record, IngestError> {
    if !rec.timestamp.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            reason: "timestamp is not finite".into(),
        });
    }
    if !rec.value.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            reason: "value is not finite".into(),
        });
    }
    Ok(rec)
}

fn read_csv(text: &str) -> Result<Vec<(usize, Record)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let malformed = |line: usize, e: csv::Error| IngestError::MalformedRow {
        line,
        reason: e.to_string(),
    };
    let headers = reader.headers().map_err(|e| malformed(1, e))?.clone();
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, e)
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let rec: Record = row.deserialize(Some(&headers)).map_err(|e| malformed(line, e))?;
        out.push((line, check(rec, line)?));
    }
    Ok(out)
}

fn read_jsonl(text: &str) -> Result<Vec<(usize, Record)>, IngestError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(raw).map_err(|e| IngestError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        out.push((line, check(rec, line)?));
    }
    Ok(out)
}

/// Median spacing between consecutive samples.
fn typical_interval(ts: &[f64]) -> Option<f64> {
    let mut gaps: Vec<f64> = ts.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}

fn build(id: &str, samples: &[(f64, f64)], policy: &GapPolicy) -> Result<Vec<Series>, IngestError> {
    let ts: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let interval = typical_interval(&ts).unwrap_or(policy.default_interval);
    let mut pieces: Vec<(f64, Vec<f64>)> = vec![(samples[0].0, vec![samples[0].1])];
    for w in samples.windows(2) {
        let ((t0, v0), (t1, v1)) = (w[0], w[1]);
        let steps = (t1 - t0) / interval;
        let k = steps.round();
        if k < 1.0 || (steps - k).abs() > SAMPLING_TOLERANCE * k {
            return Err(IngestError::NonUniformSampling {
                series_id: id.to_string(),
                timestamp: t1,
                gap: t1 - t0,
                interval,
            });
        }
        let missing = k as usize - 1;
        if missing > policy.max_interpolated {
            pieces.push((t1, vec![v1]));
            continue;
        }
        let piece = &mut pieces.last_mut().expect("at least one piece").1;
        for j in 1..=missing {
            let f = j as f64 / k;
            piece.push(v0 + (v1 - v0) * f);
        }
        piece.push(v1);
    }
    pieces
        .into_iter()
        .enumerate()
        .map(|(n, (start, values))| {
            let name = if n == 0 { id.to_string() } else { format!("{id}#{n}") };
            let start_index = (start / interval).round() as i64;
            Series::new(SeriesId(name), interval, start_index, values).map_err(|e| IngestError::MalformedRow {
                line: 0,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Parses telemetry held in memory. Series come back sorted by id; a
/// series split at a long gap continues as `id#1`, `id#2`, ...
pub fn parse_telemetry_str(text: &str, format: Format, policy: &GapPolicy) -> Result<Vec<Series>, IngestError> {
    let records = match format {
        Format::Csv => read_csv(text)?,
        Format::Jsonl => read_jsonl(text)?,
    };
    if records.is_empty() {
        return Err(IngestError::EmptyInput);
    }
    let mut groups: BTreeMap<String, Vec<(usize, f64, f64)>> = BTreeMap::new();
    for (line, r) in records {
        groups.entry(r.series_id).or_default().push((line, r.timestamp, r.value));
    }
    let mut fleet = Vec::new();
    for (id, mut rows) in groups {
        rows.sort_by(|a, b| a.1.total_cmp(&b.1));
        if let Some(w) = rows.windows(2).find(|w| w[0].1 == w[1].1) {
            return Err(IngestError::MalformedRow {
                line: w[1].0,
                reason: format!("duplicate timestamp {} for series {id}", w[1].1),
            });
        }
        let samples: Vec<(f64, f64)> = rows.iter().map(|r| (r.1, r.2)).collect();
        fleet.extend(build(&id, &samples, policy)?);
    }
    Ok(fleet)
}

pub fn parse_telemetry(path: &Path, format: Format, policy: &GapPolicy) -> Result<Vec<Series>, IngestError> {
    let mut text = String::new();
    std::fs::File::open(path)?.read_to_string(&mut text)?;
    parse_telemetry_str(&text, format, policy)
}

/// Writes a fleet as `series_id,timestamp,value` rows, timestamps in seconds.
pub fn write_csv<W: Write>(fleet: &[Series], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["series_id", "timestamp", "value"]).map_err(csv_io)?;
    for s in fleet {
        for (i, v) in s.values().iter().enumerate() {
            let t = (s.start_timestamp + i as i64) as f64 * s.sampling_interval;
            w.write_record([s.series_id.as_str(), &t.to_string(), &v.to_string()])
                .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_io(e: csv::Error) -> IngestError {
    IngestError::Io(std::io::Error::other(e))
}
