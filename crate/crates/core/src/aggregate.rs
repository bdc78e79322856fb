//! Fleet-level fusion of per-series regime changes.
//!
//! Changes are binned on the common timeline, one vote per series per bin.
//! A spike is a stretch of bins where many distinct series changed at about
//! the same time; spikes are paired into onset/recovery and classified
//! against a memory of previously seen signatures.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::RegimeChange;
use crate::timeseries::{Series, SeriesId};

/// Relative disagreement in sampling interval tolerated across a fleet.
pub const TIMELINE_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AggregateError {
    #[error("series {a} samples every {ia} s but {b} every {ib} s")]
    MixedTimelines { a: SeriesId, ia: f64, b: SeriesId, ib: f64 },
    #[error("regime change on {0} does not belong to any series of the fleet")]
    UnknownSeries(SeriesId),
    #[error("bin width must be at least 1")]
    InvalidBinWidth,
    #[error("invalid spike parameter: {0}")]
    InvalidSpikeParams(String),
}

/// Per-bin regime-change counts. Bin `b` covers timestamps
/// `[b * bin_width, (b + 1) * bin_width)`; `counts[i]` is bin `first_bin + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeHistogram {
    pub bin_width: u64,
    pub first_bin: i64,
    pub counts: Vec<u64>,
    pub contributors: Vec<BTreeSet<SeriesId>>,
}

impl RegimeHistogram {
    /// All-zero histogram covering `[first_bin, first_bin + len)`.
    pub fn empty(bin_width: u64, first_bin: i64, len: usize) -> Self {
        RegimeHistogram {
            bin_width,
            first_bin,
            counts: vec![0; len],
            contributors: vec![BTreeSet::new(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_of(&self, timestamp: i64) -> i64 {
        timestamp.div_euclid(self.bin_width as i64)
    }

    pub fn count(&self, bin: i64) -> u64 {
        self.slot(bin).map_or(0, |i| self.counts[i])
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn slot(&self, bin: i64) -> Option<usize> {
        let i = bin - self.first_bin;
        (i >= 0 && (i as usize) < self.counts.len()).then_some(i as usize)
    }

    fn grow_to(&mut self, bin: i64) {
        if self.counts.is_empty() {
            self.first_bin = bin;
        }
        if bin < self.first_bin {
            let extra = (self.first_bin - bin) as usize;
            self.counts.splice(0..0, std::iter::repeat_n(0, extra));
            self.contributors.splice(0..0, std::iter::repeat_n(BTreeSet::new(), extra));
            self.first_bin = bin;
        }
        let need = (bin - self.first_bin) as usize + 1;
        if need > self.counts.len() {
            self.counts.resize(need, 0);
            self.contributors.resize(need, BTreeSet::new());
        }
    }

    /// Records one change; a series already counted in that bin is ignored.
    pub fn add(&mut self, series_id: &SeriesId, timestamp: i64) {
        let bin = self.bin_of(timestamp);
        self.grow_to(bin);
        let i = (bin - self.first_bin) as usize;
        if self.contributors[i].insert(series_id.clone()) {
            self.counts[i] += 1;
        }
    }

    /// Union of two histograms with the same bin width. Associative and
    /// commutative, so per-series partial histograms can merge in any order.
    pub fn merge(mut self, other: &RegimeHistogram) -> RegimeHistogram {
        debug_assert_eq!(self.bin_width, other.bin_width);
        if other.counts.is_empty() {
            return self;
        }
        self.grow_to(other.first_bin);
        self.grow_to(other.first_bin + other.counts.len() as i64 - 1);
        for (k, set) in other.contributors.iter().enumerate() {
            let i = (other.first_bin + k as i64 - self.first_bin) as usize;
            self.contributors[i].extend(set.iter().cloned());
            self.counts[i] = self.contributors[i].len() as u64;
        }
        self
    }

    /// `bin<TAB>count` lines for plotting, bins labelled by their first timestamp.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("# schema_version: 1\nbin\tcount\n");
        for (i, c) in self.counts.iter().enumerate() {
            let start = (self.first_bin + i as i64) * self.bin_width as i64;
            let _ = writeln!(out, "{start}\t{c}");
        }
        out
    }
}

/// Checks that every series of the fleet samples at the same rate, within
/// [`TIMELINE_TOLERANCE`].
pub fn check_timelines(fleet: &[Series]) -> Result<(), AggregateError> {
    let Some(first) = fleet.first() else {
        return Ok(());
    };
    for s in &fleet[1..] {
        let rel = (s.sampling_interval - first.sampling_interval).abs() / first.sampling_interval;
        if rel > TIMELINE_TOLERANCE {
            return Err(AggregateError::MixedTimelines {
                a: first.series_id.clone(),
                ia: first.sampling_interval,
                b: s.series_id.clone(),
                ib: s.sampling_interval,
            });
        }
    }
    Ok(())
}

/// Histogram of `changes` over the span of `fleet`, deduplicated per series
/// and bin.
pub fn build_histogram(
    fleet: &[Series],
    changes: &[RegimeChange],
    bin_width: u64,
) -> Result<RegimeHistogram, AggregateError> {
    if bin_width == 0 {
        return Err(AggregateError::InvalidBinWidth);
    }
    check_timelines(fleet)?;
    let known: BTreeSet<&SeriesId> = fleet.iter().map(|s| &s.series_id).collect();
    let mut hist = RegimeHistogram::empty(bin_width, 0, 0);
    if let (Some(lo), Some(hi)) = (
        fleet.iter().map(|s| s.start_timestamp).min(),
        fleet.iter().map(|s| s.end_timestamp() - 1).max(),
    ) {
        hist.grow_to(hist.bin_of(lo));
        hist.grow_to(hist.bin_of(hi));
    }
    for c in changes {
        if !known.contains(&c.series_id) {
            return Err(AggregateError::UnknownSeries(c.series_id.clone()));
        }
        hist.add(&c.series_id, c.timestamp);
    }
    Ok(hist)
}

/// Spike-rule parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpikeParams {
    /// Trailing bins feeding the robust baseline.
    pub baseline_window: usize,
    pub k_mad: f64,
    /// Fraction of the fleet a spike must exceed to fire.
    pub min_fraction: f64,
    /// Bins pooled into the spike signal: the number of distinct series
    /// with a change in the last `spike_window` bins. 1 means raw counts.
    pub spike_window: usize,
    /// Fraction of the fleet below which an event is over. Never above
    /// `min_fraction` in effect: firing bins are always part of their event.
    pub release_fraction: f64,
}

impl Default for SpikeParams {
    fn default() -> Self {
        SpikeParams {
            baseline_window: 100,
            k_mad: 5.0,
            min_fraction: 0.2,
            spike_window: 10,
            release_fraction: 0.1,
        }
    }
}

impl SpikeParams {
    pub fn validate(&self) -> Result<(), AggregateError> {
        let bad = |m: &str| Err(AggregateError::InvalidSpikeParams(m.into()));
        if self.baseline_window == 0 {
            return bad("baseline_window must be at least 1");
        }
        if !(self.k_mad >= 0.0 && self.k_mad.is_finite()) {
            return bad("k_mad must be a non-negative number");
        }
        if !(0.0..=1.0).contains(&self.min_fraction) {
            return bad("min_fraction must lie in [0, 1]");
        }
        if self.spike_window == 0 {
            return bad("spike_window must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.release_fraction) {
            return bad("release_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Candidate,
    Interest,
    NoInterest,
    Recovery,
}

/// Why an event fired and how it was labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub rule: String,
    /// Threshold the signal had to exceed at the detection bin.
    pub threshold: f64,
    pub baseline_median: f64,
    pub baseline_mad: f64,
    pub floor: f64,
    /// Spike signal at the detection bin.
    pub signal: u64,
    pub spike_window: usize,
    pub label: Option<String>,
}

impl Explanation {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{}: {} series changed within {} bin(s), above threshold {:.2} (median {:.2} + k*MAD {:.2}, floor {:.2})",
            self.rule, self.signal, self.spike_window, self.threshold, self.baseline_median, self.baseline_mad, self.floor
        );
        if let Some(label) = &self.label {
            s.push_str("; ");
            s.push_str(label);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOfInterest {
    /// Position in detection order within one run.
    pub event_id: usize,
    pub first_bin: i64,
    pub last_bin: i64,
    pub detection_bin: i64,
    pub peak_bin: i64,
    /// Largest spike signal over the event.
    pub magnitude: u64,
    pub participants: BTreeSet<SeriesId>,
    pub kind: EventKind,
    pub paired_event: Option<usize>,
    pub explanation: Explanation,
}

fn median(sorted: &[u64]) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// `(median, MAD)` of `values`; both 0 for an empty slice.
pub fn median_mad(values: &[u64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_unstable();
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|&x| (x as f64 - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let mad = match dev.len() {
        0 => 0.0,
        n if n % 2 == 1 => dev[n / 2],
        n => (dev[n / 2 - 1] + dev[n / 2]) / 2.0,
    };
    (med, mad)
}

/// Distinct contributors in the trailing `w` bins ending at every bin.
pub fn spike_signal(hist: &RegimeHistogram, w: usize) -> Vec<u64> {
    if w <= 1 {
        return hist.counts.clone();
    }
    (0..hist.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            let set: BTreeSet<&SeriesId> = hist.contributors[lo..=i].iter().flatten().collect();
            set.len() as u64
        })
        .collect()
}

/// Finds spikes in the histogram.
///
/// The signal at bin `b` is the number of distinct series with a change in
/// the trailing `spike_window` bins. Bin `b` fires when the signal exceeds
/// both `median + k_mad * MAD` of the signal over the preceding
/// `baseline_window` bins and `min_fraction * fleet_size`. An event spans
/// the surrounding run of bins whose signal stays above the baseline and
/// above `release_fraction * fleet_size`; its detection bin is the first
/// firing bin and its peak the bin with the most raw changes.
pub fn detect_spikes(
    hist: &RegimeHistogram,
    params: &SpikeParams,
    fleet_size: usize,
) -> Result<Vec<EventOfInterest>, AggregateError> {
    params.validate()?;
    if fleet_size == 0 {
        return Err(AggregateError::InvalidSpikeParams("fleet_size must be at least 1".into()));
    }
    let signal = spike_signal(hist, params.spike_window);
    let floor = params.min_fraction * fleet_size as f64;
    let release = params.release_fraction * fleet_size as f64;

    struct Bin {
        active: bool,
        fires: bool,
        median: f64,
        mad: f64,
        threshold: f64,
    }
    let bins: Vec<Bin> = (0..signal.len())
        .map(|b| {
            let lo = b.saturating_sub(params.baseline_window);
            let (median, mad) = median_mad(&signal[lo..b]);
            let robust = median + params.k_mad * mad;
            let s = signal[b] as f64;
            let threshold = robust.max(floor);
            let fires = s > threshold;
            Bin {
                active: fires || s > robust.max(release),
                fires,
                median,
                mad,
                threshold,
            }
        })
        .collect();

    let mut events = Vec::new();
    let mut b = 0;
    while b < bins.len() {
        if !bins[b].active {
            b += 1;
            continue;
        }
        let start = b;
        while b < bins.len() && bins[b].active {
            b += 1;
        }
        let end = b - 1;
        let Some(det) = (start..=end).find(|&i| bins[i].fires) else {
            continue;
        };
        let pool_lo = (start + 1).saturating_sub(params.spike_window);
        let peak = (pool_lo..=end)
            .max_by(|&x, &y| hist.counts[x].cmp(&hist.counts[y]).then(y.cmp(&x)))
            .unwrap_or(det);
        let participants: BTreeSet<SeriesId> =
            hist.contributors[pool_lo..=end].iter().flatten().cloned().collect();
        let magnitude = signal[start..=end].iter().copied().max().unwrap_or(0);
        let at = |i: usize| hist.first_bin + i as i64;
        events.push(EventOfInterest {
            event_id: events.len(),
            first_bin: at(start),
            last_bin: at(end),
            detection_bin: at(det),
            peak_bin: at(peak),
            magnitude,
            participants,
            kind: EventKind::Candidate,
            paired_event: None,
            explanation: Explanation {
                rule: "spike".into(),
                threshold: bins[det].threshold,
                baseline_median: bins[det].median,
                baseline_mad: params.k_mad * bins[det].mad,
                floor,
                signal: signal[det],
                spike_window: params.spike_window,
                label: None,
            },
        });
    }
    Ok(events)
}

pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Participant overlap needed to pair a recovery with its onset.
pub const RECOVERY_JACCARD: f64 = 0.5;

/// Earliest still-open onset that `events[i]` recovers from, if any.
fn find_onset(events: &[EventOfInterest], i: usize, paired: &[bool], horizon: i64) -> Option<usize> {
    let e = &events[i];
    let mut best: Option<(usize, f64)> = None;
    for (j, onset) in events[..i].iter().enumerate() {
        let open = matches!(onset.kind, EventKind::Candidate | EventKind::Interest) && !paired[j];
        if !open || onset.detection_bin >= e.detection_bin || e.detection_bin - onset.detection_bin > horizon {
            continue;
        }
        let jac = jaccard(&onset.participants, &e.participants);
        if jac >= RECOVERY_JACCARD && best.is_none_or(|(_, bj)| jac > bj) {
            best = Some((j, jac));
        }
    }
    best.map(|(j, _)| j)
}

fn mark_recovery(events: &mut [EventOfInterest], i: usize, j: usize) {
    let jac = jaccard(&events[j].participants, &events[i].participants);
    let onset_id = events[j].event_id;
    let e = &mut events[i];
    e.kind = EventKind::Recovery;
    e.paired_event = Some(onset_id);
    e.explanation.label = Some(format!("recovery of event {onset_id} (participant Jaccard {jac:.2})"));
    let recovery_id = e.event_id;
    events[j].paired_event = Some(recovery_id);
}

/// Relabels as recovery every event whose participants overlap an earlier,
/// still unpaired onset by Jaccard at least 0.5 within `horizon` bins.
/// Events must be sorted by detection bin.
pub fn pair_recovery(mut events: Vec<EventOfInterest>, horizon: i64) -> Vec<EventOfInterest> {
    let mut paired = vec![false; events.len()];
    for i in 0..events.len() {
        if events[i].kind == EventKind::Recovery {
            continue;
        }
        if let Some(j) = find_onset(&events, i, &paired, horizon) {
            mark_recovery(&mut events, i, j);
            paired[i] = true;
            paired[j] = true;
        }
    }
    events
}

/// Pairs and classifies events in detection order: an event that recovers
/// an open interest event becomes a recovery, everything else is classified
/// against `memory`.
pub fn label_events(
    mut events: Vec<EventOfInterest>,
    memory: &mut PatternMemory,
    horizon: i64,
    seen_at: i64,
) -> Vec<EventOfInterest> {
    let mut paired = vec![false; events.len()];
    for i in 0..events.len() {
        if let Some(j) = find_onset(&events, i, &paired, horizon) {
            mark_recovery(&mut events, i, j);
            paired[i] = true;
            paired[j] = true;
        } else {
            let e = std::mem::replace(&mut events[i], placeholder());
            events[i] = classify_event(e, memory, seen_at);
        }
    }
    events
}

fn placeholder() -> EventOfInterest {
    EventOfInterest {
        event_id: 0,
        first_bin: 0,
        last_bin: 0,
        detection_bin: 0,
        peak_bin: 0,
        magnitude: 0,
        participants: BTreeSet::new(),
        kind: EventKind::Candidate,
        paired_event: None,
        explanation: Explanation {
            rule: String::new(),
            threshold: 0.0,
            baseline_median: 0.0,
            baseline_mad: 0.0,
            floor: 0.0,
            signal: 0,
            spike_window: 0,
            label: None,
        },
    }
}

/// Participant overlap at which two events count as the same pattern.
pub const SIGNATURE_JACCARD: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub participants: BTreeSet<SeriesId>,
    /// `floor(log2(magnitude))`.
    pub magnitude_band: u32,
    pub occurrences: u64,
    pub last_seen: i64,
    pub no_interest: bool,
    /// Set by an operator to keep this pattern flagged as interest.
    #[serde(default)]
    pub operator_objection: bool,
}

/// Memory of recurring spike patterns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternMemory {
    pub signatures: Vec<Signature>,
    pub no_interest_threshold: u64,
}

impl Default for PatternMemory {
    fn default() -> Self {
        PatternMemory::new(3)
    }
}

pub fn magnitude_band(magnitude: u64) -> u32 {
    magnitude.max(1).ilog2()
}

impl PatternMemory {
    pub fn new(no_interest_threshold: u64) -> Self {
        PatternMemory {
            signatures: Vec::new(),
            no_interest_threshold,
        }
    }

    pub fn reset(&mut self) {
        self.signatures.clear();
    }

    /// Best matching signature: same magnitude band, participant Jaccard
    /// at least 0.7, highest overlap first, then oldest.
    pub fn lookup(&self, participants: &BTreeSet<SeriesId>, magnitude: u64) -> Option<usize> {
        let band = magnitude_band(magnitude);
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.signatures.iter().enumerate() {
            if s.magnitude_band != band {
                continue;
            }
            let jac = jaccard(&s.participants, participants);
            if jac >= SIGNATURE_JACCARD && best.is_none_or(|(_, bj)| jac > bj) {
                best = Some((i, jac));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn object(&mut self, index: usize) {
        if let Some(s) = self.signatures.get_mut(index) {
            s.operator_objection = true;
        }
    }
}

/// Sets the event's kind from `memory` and records the sighting.
///
/// A signature seen more than `no_interest_threshold` times without an
/// operator objection is no-interest from then on.
pub fn classify_event(mut event: EventOfInterest, memory: &mut PatternMemory, seen_at: i64) -> EventOfInterest {
    let threshold = memory.no_interest_threshold;
    let index = match memory.lookup(&event.participants, event.magnitude) {
        Some(i) => {
            let s = &mut memory.signatures[i];
            s.occurrences += 1;
            s.last_seen = seen_at;
            if s.occurrences > threshold && !s.operator_objection {
                s.no_interest = true;
            }
            i
        }
        None => {
            memory.signatures.push(Signature {
                participants: event.participants.clone(),
                magnitude_band: magnitude_band(event.magnitude),
                occurrences: 1,
                last_seen: seen_at,
                no_interest: false,
                operator_objection: false,
            });
            memory.signatures.len() - 1
        }
    };
    let s = &memory.signatures[index];
    event.kind = if s.no_interest { EventKind::NoInterest } else { EventKind::Interest };
    event.explanation.label = Some(format!(
        "pattern {index} seen {} time(s), no-interest after {threshold}",
        s.occurrences
    ));
    event
}
