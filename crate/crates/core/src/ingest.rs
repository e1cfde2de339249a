//! Sensor event log ingestion.
//!
//! Logs are whitespace-separated text, one event per line:
//!
//! ```text
//! <date> <time> <sensor_id> <value> [<activity> [begin|end]]
//! 2011-06-15 03:38:23.271939 M003 ON Sleeping begin
//! 2011-06-15 03:40:01 D012 OPEN
//! ```
//!
//! Dates are `YYYY-MM-DD`, times `HH:MM:SS[.ffffff]`, both naive local time.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label given to events outside every known activity.
pub const OTHER_CLASS: &str = "Other";

/// Reserved vocabulary token for observations never seen in training.
pub const UNK_TOKEN: &str = "<UNK>";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line_no}: malformed event line: {reason}")]
    MalformedLine { line_no: usize, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid split ratios {0:?}: must be non-negative and sum to 1")]
    InvalidRatios((f64, f64, f64)),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMark {
    Begin,
    End,
}

impl BoundaryMark {
    fn parse(token: &str) -> Option<Self> {
        match token.to_ascii_lowercase().as_str() {
            "begin" => Some(BoundaryMark::Begin),
            "end" => Some(BoundaryMark::End),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryMark::Begin => "begin",
            BoundaryMark::End => "end",
        }
    }
}

/// One timestamped sensor reading.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorEvent {
    pub timestamp: NaiveDateTime,
    pub sensor_id: String,
    pub value: String,
    pub label: Option<String>,
    pub mark: Option<BoundaryMark>,
}

impl SensorEvent {
    pub fn new(timestamp: NaiveDateTime, sensor_id: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            timestamp,
            sensor_id: sensor_id.into(),
            value: value.into(),
            label: None,
            mark: None,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>, mark: Option<BoundaryMark>) -> Self {
        self.label = Some(label.into());
        self.mark = mark;
        self
    }
}

impl fmt::Display for SensorEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {}",
            self.timestamp.format("%Y-%m-%d %H:%M:%S%.f"),
            self.sensor_id,
            self.value
        )?;
        if let Some(label) = &self.label {
            write!(f, " {label}")?;
            if let Some(mark) = self.mark {
                write!(f, " {}", mark.as_str())?;
            }
        }
        Ok(())
    }
}

/// Seconds between two instants, at microsecond resolution.
pub fn seconds_between(start: NaiveDateTime, end: NaiveDateTime) -> f64 {
    let delta = end - start;
    match delta.num_microseconds() {
        Some(us) => us as f64 / 1e6,
        None => delta.num_milliseconds() as f64 / 1e3,
    }
}

fn parse_timestamp(date: &str, time: &str) -> Option<NaiveDateTime> {
    let date = NaiveDate::parse_from_str(date, "%Y-%m-%d").ok()?;
    let time = NaiveTime::parse_from_str(time, "%H:%M:%S%.f").ok()?;
    Some(date.and_time(time))
}

/// Parses one log line. `line_no` is only used in the error.
pub fn parse_event_line(line: &str, line_no: usize) -> Result<SensorEvent, IngestError> {
    let malformed = |reason: &str| IngestError::MalformedLine {
        line_no,
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(malformed("expected at least 4 fields"));
    }
    if fields.len() > 6 {
        return Err(malformed("expected at most 6 fields"));
    }
    let timestamp = parse_timestamp(fields[0], fields[1]).ok_or_else(|| malformed("unparseable timestamp"))?;
    let mut event = SensorEvent::new(timestamp, fields[2], fields[3]);
    if let Some(label) = fields.get(4) {
        event.label = Some((*label).to_string());
    }
    if let Some(mark) = fields.get(5) {
        event.mark = Some(BoundaryMark::parse(mark).ok_or_else(|| malformed("boundary mark must be begin or end"))?);
    }
    Ok(event)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnError {
    Skip,
    Abort,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonotonicityViolation {
    pub line_no: usize,
    pub previous: NaiveDateTime,
    pub current: NaiveDateTime,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ParseReport {
    pub total_lines: usize,
    pub parsed: usize,
    pub skipped: usize,
    /// Line numbers (1-based) of skipped lines.
    pub skipped_lines: Vec<usize>,
    pub monotonicity_violations: Vec<MonotonicityViolation>,
    pub distinct_sensors: usize,
    /// Segment counts per class, filled in by [`ParseReport::record_segments`].
    pub segments_per_class: BTreeMap<String, usize>,
    pub mark_issues: Vec<MarkIssue>,
}

impl ParseReport {
    pub fn record_segments(&mut self, extraction: &SegmentExtraction) {
        self.segments_per_class.clear();
        for seg in &extraction.segments {
            *self.segments_per_class.entry(seg.label.clone()).or_default() += 1;
        }
        self.mark_issues = extraction.issues.clone();
    }
}

/// Parses a whole log from any reader. Blank lines count toward `total_lines`
/// but are neither parsed nor skipped.
pub fn parse_events<R: BufRead>(
    reader: R,
    on_error: OnError,
    path: &Path,
) -> Result<(Vec<SensorEvent>, ParseReport), IngestError> {
    let mut events: Vec<SensorEvent> = Vec::new();
    let mut report = ParseReport::default();
    let mut sensors = BTreeSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        report.total_lines += 1;
        if line.trim().is_empty() {
            continue;
        }
        match parse_event_line(&line, line_no) {
            Ok(event) => {
                if let Some(prev) = events.last() {
                    if event.timestamp < prev.timestamp {
                        report.monotonicity_violations.push(MonotonicityViolation {
                            line_no,
                            previous: prev.timestamp,
                            current: event.timestamp,
                        });
                    }
                }
                sensors.insert(event.sensor_id.clone());
                report.parsed += 1;
                events.push(event);
            }
            Err(err) => match on_error {
                OnError::Abort => return Err(err),
                OnError::Skip => {
                    report.skipped += 1;
                    report.skipped_lines.push(line_no);
                }
            },
        }
    }
    report.distinct_sensors = sensors.len();
    Ok((events, report))
}

pub fn load_dataset(path: impl AsRef<Path>, on_error: OnError) -> Result<(Vec<SensorEvent>, ParseReport), IngestError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_events(BufReader::new(file), on_error, path)
}

/// Which parts of an event form its observation symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKey {
    /// Sensor id only, e.g. `M003`.
    Sensor,
    /// Sensor id and value, e.g. `M003:ON`.
    #[default]
    SensorValue,
}

impl ObservationKey {
    pub fn token(&self, event: &SensorEvent) -> String {
        match self {
            ObservationKey::Sensor => event.sensor_id.clone(),
            ObservationKey::SensorValue => format!("{}:{}", event.sensor_id, event.value),
        }
    }
}

/// Dense, bijective mapping from observation tokens to indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorVocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    key: ObservationKey,
    unk: bool,
}

impl SensorVocabulary {
    /// Builds the vocabulary from (training) events. Tokens are sorted so the
    /// index assignment does not depend on event order. With `unk` enabled the
    /// last index is reserved for unseen tokens.
    pub fn build(events: &[SensorEvent], key: ObservationKey, unk: bool) -> Self {
        let tokens: BTreeSet<String> = events.iter().map(|e| key.token(e)).collect();
        Self::from_tokens(tokens.into_iter().collect(), key, unk)
    }

    /// `tokens` excludes the UNK entry.
    pub fn from_tokens(mut tokens: Vec<String>, key: ObservationKey, unk: bool) -> Self {
        if unk {
            tokens.push(UNK_TOKEN.to_string());
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index, key, unk }
    }

    /// Number of symbols including UNK.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn key(&self) -> ObservationKey {
        self.key
    }

    pub fn unk_enabled(&self) -> bool {
        self.unk
    }

    pub fn unk_index(&self) -> Option<usize> {
        self.unk.then(|| self.tokens.len() - 1)
    }

    /// Known tokens, without UNK.
    pub fn known_tokens(&self) -> &[String] {
        if self.unk {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        match self.index.get(token) {
            Some(&i) if Some(i) != self.unk_index() => Some(i),
            _ => self.unk_index(),
        }
    }

    /// Index of an event's observation; `None` only when the token is unseen
    /// and UNK is disabled.
    pub fn encode(&self, event: &SensorEvent) -> Option<usize> {
        self.lookup(&self.key.token(event))
    }

    pub fn is_unknown(&self, event: &SensorEvent) -> bool {
        let token = self.key.token(event);
        !self.index.contains_key(&token) || token == UNK_TOKEN
    }
}

/// Ordered activity classes followed by the reserved "Other" class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ActivityClassSet {
    names: Vec<String>,
}

/// The eleven daily-living activity classes of the two-home corpus.
pub const DEFAULT_CLASSES: [&str; 11] = [
    "Personal_Hygiene",
    "Enter_Home",
    "Leave_Home",
    "Bathing",
    "Cooking",
    "Relax",
    "Take_Medicine",
    "Eating",
    "Housekeeping",
    "Sleeping",
    "Bed_to_Toilet",
];

impl Default for ActivityClassSet {
    fn default() -> Self {
        Self::new(DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()).expect("default class names are unique")
    }
}

impl ActivityClassSet {
    /// `classes` must not contain "Other"; it is appended automatically.
    pub fn new(classes: Vec<String>) -> Result<Self, String> {
        let mut seen = BTreeSet::new();
        for c in &classes {
            if c == OTHER_CLASS {
                return Err(format!("class name {OTHER_CLASS:?} is reserved"));
            }
            if c.is_empty() {
                return Err("empty class name".into());
            }
            if !seen.insert(c.as_str()) {
                return Err(format!("duplicate class name {c:?}"));
            }
        }
        let mut names = classes;
        names.push(OTHER_CLASS.to_string());
        Ok(Self { names })
    }

    /// Number of real activity classes, excluding Other.
    pub fn n_activities(&self) -> usize {
        self.names.len() - 1
    }

    pub fn other_index(&self) -> usize {
        self.names.len() - 1
    }

    /// All names including Other (last).
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn activities(&self) -> &[String] {
        &self.names[..self.other_index()]
    }

    pub fn name(&self, index: usize) -> &str {
        &self.names[index]
    }

    /// Index of a label; unknown labels (and `None`) map to Other.
    pub fn index_of(&self, label: Option<&str>) -> usize {
        label
            .and_then(|l| self.activities().iter().position(|c| c == l))
            .unwrap_or_else(|| self.other_index())
    }

    pub fn contains(&self, label: &str) -> bool {
        self.activities().iter().any(|c| c == label)
    }
}

impl TryFrom<Vec<String>> for ActivityClassSet {
    type Error = String;

    fn try_from(mut names: Vec<String>) -> Result<Self, Self::Error> {
        if names.last().map(String::as_str) != Some(OTHER_CLASS) {
            return Err(format!("class list must end with {OTHER_CLASS:?}"));
        }
        names.pop();
        Self::new(names)
    }
}

impl From<ActivityClassSet> for Vec<String> {
    fn from(set: ActivityClassSet) -> Self {
        set.names
    }
}

/// One contiguous activity instance taken from a labeled stream.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSegment {
    pub label: String,
    /// Stream index of the first and last event, inclusive.
    pub first_index: usize,
    pub last_index: usize,
    pub events: Vec<SensorEvent>,
    pub start_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    pub duration_s: f64,
}

impl LabeledSegment {
    fn from_range(stream: &[SensorEvent], label: &str, first: usize, last: usize) -> Self {
        let events: Vec<SensorEvent> = stream[first..=last]
            .iter()
            .map(|e| {
                let mut e = e.clone();
                e.label = Some(label.to_string());
                e
            })
            .collect();
        let start_time = stream[first].timestamp;
        let end_time = stream[last].timestamp;
        Self {
            label: label.to_string(),
            first_index: first,
            last_index: last,
            events,
            start_time,
            end_time,
            duration_s: seconds_between(start_time, end_time).max(0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MarkIssue {
    /// An `end` mark with no open `begin` of the same label.
    UnbalancedEnd { index: usize, label: String },
    /// A `begin` never closed before the end of the stream.
    UnclosedBegin { index: usize, label: String },
    /// A second `begin` for a label that is already open; the first is closed
    /// just before it.
    RepeatedBegin { index: usize, label: String },
}

#[derive(Debug, Clone, Default)]
pub struct SegmentExtraction {
    /// Segments ordered by first event.
    pub segments: Vec<LabeledSegment>,
    pub issues: Vec<MarkIssue>,
}

/// Maximal run of events carrying `label` that contains `anchor`.
fn label_run(events: &[SensorEvent], anchor: usize, label: &str) -> (usize, usize) {
    let has = |i: usize| events[i].label.as_deref() == Some(label);
    let mut first = anchor;
    while first > 0 && has(first - 1) {
        first -= 1;
    }
    let mut last = anchor;
    while last + 1 < events.len() && has(last + 1) {
        last += 1;
    }
    (first, last)
}

/// Cuts a labeled stream into activity segments.
///
/// When any event carries a boundary mark, segments are `begin..=end` pairs per
/// label, and labels are tracked independently so instances of different
/// activities may overlap. Otherwise each maximal run of the same label is one
/// segment. Unlabeled events never start a segment.
pub fn extract_labeled_segments(events: &[SensorEvent]) -> SegmentExtraction {
    if events.iter().any(|e| e.mark.is_some()) {
        extract_marked(events)
    } else {
        extract_runs(events)
    }
}

fn extract_runs(events: &[SensorEvent]) -> SegmentExtraction {
    let mut out = SegmentExtraction::default();
    let mut i = 0;
    while i < events.len() {
        match events[i].label.as_deref() {
            Some(label) => {
                let (first, last) = label_run(events, i, label);
                out.segments.push(LabeledSegment::from_range(events, label, first, last));
                i = last + 1;
            }
            None => i += 1,
        }
    }
    out
}

fn extract_marked(events: &[SensorEvent]) -> SegmentExtraction {
    let mut out = SegmentExtraction::default();
    let mut open: BTreeMap<String, usize> = BTreeMap::new();
    for (i, event) in events.iter().enumerate() {
        let (Some(label), Some(mark)) = (event.label.as_deref(), event.mark) else {
            continue;
        };
        match mark {
            BoundaryMark::Begin => {
                if let Some(first) = open.insert(label.to_string(), i) {
                    out.issues.push(MarkIssue::RepeatedBegin {
                        index: i,
                        label: label.to_string(),
                    });
                    if i > first {
                        out.segments.push(LabeledSegment::from_range(events, label, first, i - 1));
                    }
                }
            }
            BoundaryMark::End => match open.remove(label) {
                Some(first) => out.segments.push(LabeledSegment::from_range(events, label, first, i)),
                None => {
                    out.issues.push(MarkIssue::UnbalancedEnd {
                        index: i,
                        label: label.to_string(),
                    });
                    let (first, _) = label_run(events, i, label);
                    out.segments.push(LabeledSegment::from_range(events, label, first, i));
                }
            },
        }
    }
    for (label, first) in open {
        out.issues.push(MarkIssue::UnclosedBegin {
            index: first,
            label: label.clone(),
        });
        let (_, last) = label_run(events, first, &label);
        out.segments.push(LabeledSegment::from_range(events, &label, first, last));
    }
    out.segments.sort_by_key(|s| (s.first_index, s.last_index));
    out
}

/// Per-event ground-truth label: the segment covering the event, preferring the
/// most recently started one where segments overlap; `None` outside segments.
pub fn ground_truth_labels(events: &[SensorEvent], segments: &[LabeledSegment]) -> Vec<Option<String>> {
    let mut truth: Vec<Option<String>> = vec![None; events.len()];
    // segments are sorted by first index, so later writes are later starts
    for seg in segments {
        for slot in &mut truth[seg.first_index..=seg.last_index.min(events.len().saturating_sub(1))] {
            *slot = Some(seg.label.clone());
        }
    }
    truth
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<SensorEvent>,
    pub validation: Vec<SensorEvent>,
    pub test: Vec<SensorEvent>,
}

/// Rounds to nearest, ties toward the smaller integer.
fn round_half_down(x: f64) -> usize {
    (x - 0.5).ceil().max(0.0) as usize
}

/// Boundaries `(b1, b2)` such that train = `[0, b1)`, validation = `[b1, b2)`,
/// test = `[b2, n)`. Each boundary is `cumulative_ratio * n` rounded to the
/// nearest integer with ties going down.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize), IngestError> {
    let (a, b, c) = ratios;
    let valid = [a, b, c].iter().all(|r| r.is_finite() && *r >= 0.0) && ((a + b + c) - 1.0).abs() <= 1e-9;
    if !valid {
        return Err(IngestError::InvalidRatios(ratios));
    }
    let b1 = round_half_down(a * n as f64).min(n);
    let b2 = if c == 0.0 { n } else { round_half_down((a + b) * n as f64).clamp(b1, n) };
    Ok((b1, b2 - b1, n - b2))
}

/// Chronological, contiguous split by event count.
pub fn split_chronological(events: &[SensorEvent], ratios: (f64, f64, f64)) -> Result<DatasetSplit, IngestError> {
    if events.is_empty() {
        return Err(IngestError::EmptyDataset);
    }
    let (train, validation, _) = split_sizes(events.len(), ratios)?;
    Ok(DatasetSplit {
        train: events[..train].to_vec(),
        validation: events[train..train + validation].to_vec(),
        test: events[train + validation..].to_vec(),
    })
}
