//! Online recognizer.
//!
//! Each incoming event drives a two-mode state machine. While idle, the last
//! `n_preceding` observations are scored against every class's begin model;
//! when a begin fires, those observations seed one forward filter per class
//! and the machine becomes active. While active, every event advances all
//! class filters, the class posterior is refreshed from the accumulated
//! evidence, and the end model of the current top class is checked. A fired
//! end closes the segment, which is then labeled by its duration likelihood.

use std::collections::VecDeque;

use chrono::NaiveDateTime;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::ingest::{seconds_between, SensorEvent};
use crate::model::{argmax, log_sum_exp, FilterState, HhmmModel, ModelError};

/// Version of the line-delimited JSON records written by [`prediction_json`]
/// and [`segment_json`].
pub const STREAM_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("event {index}: observation {token:?} is not in the vocabulary and UNK is disabled")]
    UnknownObservation { index: usize, token: String },
    #[error("event {index}: {source}")]
    Model {
        index: usize,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Idle,
    Active,
}

/// Why a segment was closed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentClose {
    EndDetected,
    /// Safety valve: the segment exceeded `max_segment_duration_s`.
    MaxDuration,
    /// The stream ended while a segment was open.
    EndOfStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub timestamp: NaiveDateTime,
    pub event_index: usize,
    pub mode: Mode,
    /// Index into the model's classes; `None` while idle.
    pub top_class: Option<usize>,
    /// Class posterior (activity classes only) while active.
    pub posterior: Option<Vec<f64>>,
}

impl Prediction {
    pub fn top_class_name<'m>(&self, model: &'m HhmmModel) -> &'m str {
        self.top_class.map_or("none", |c| model.classes.name(c))
    }
}

/// A finished segment and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentRecord {
    /// Time of the first segment event, including seeded context.
    pub start_time: NaiveDateTime,
    /// Time of the event on which the begin fired.
    pub onset_time: NaiveDateTime,
    pub end_time: NaiveDateTime,
    /// Seconds from onset to end, the quantity the duration histograms model.
    pub duration_s: f64,
    pub events: Vec<SensorEvent>,
    /// Stream index of the first segment event (the oldest seeded observation).
    pub first_event_index: usize,
    /// Stream index of the event on which the begin fired.
    pub onset_event_index: usize,
    pub last_event_index: usize,
    pub winner_class: usize,
    pub duration_likelihood: f64,
    /// `winner_class` or the Other index.
    pub final_class: usize,
    pub posterior: Vec<f64>,
    pub closed_by: SegmentClose,
}

impl SegmentRecord {
    pub fn final_label<'m>(&self, model: &'m HhmmModel) -> &'m str {
        model.classes.name(self.final_class)
    }
}

#[derive(Debug, Clone)]
struct ActiveSegment {
    filters: Vec<FilterState>,
    log_posterior: Vec<f64>,
    events: Vec<SensorEvent>,
    first_index: usize,
    onset_index: usize,
    onset_time: NaiveDateTime,
}

/// Mutable per-stream recognizer state.
#[derive(Debug, Clone)]
pub struct StreamState {
    ring_obs: VecDeque<usize>,
    ring_events: VecDeque<(usize, SensorEvent)>,
    active: Option<ActiveSegment>,
    events_seen: usize,
    capacity: usize,
}

impl StreamState {
    pub fn new(model: &HhmmModel) -> Self {
        let capacity = model.config.n_preceding;
        Self {
            ring_obs: VecDeque::with_capacity(capacity + 1),
            ring_events: VecDeque::with_capacity(capacity + 1),
            active: None,
            events_seen: 0,
            capacity,
        }
    }

    pub fn mode(&self) -> Mode {
        if self.active.is_some() {
            Mode::Active
        } else {
            Mode::Idle
        }
    }

    pub fn events_seen(&self) -> usize {
        self.events_seen
    }

    /// Buffered observation indices, oldest first.
    pub fn buffered(&self) -> Vec<usize> {
        self.ring_obs.iter().copied().collect()
    }

    /// Current class posterior while active.
    pub fn posterior(&self) -> Option<Vec<f64>> {
        self.active.as_ref().map(|a| a.log_posterior.iter().map(|x| x.exp()).collect())
    }

    fn push(&mut self, obs: usize, index: usize, event: &SensorEvent) {
        self.ring_obs.push_back(obs);
        self.ring_events.push_back((index, event.clone()));
        while self.ring_obs.len() > self.capacity {
            self.ring_obs.pop_front();
            self.ring_events.pop_front();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeginDetection {
    /// Per-class `loglik / n + ln prior`.
    pub scores: Vec<f64>,
    pub best: usize,
    pub fired: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndDetection {
    pub score: f64,
    pub fired: bool,
}

fn per_event_loglik(hmm: &crate::model::Hmm, ys: &[usize]) -> f64 {
    hmm.sequence_loglik(ys).map_or(f64::NEG_INFINITY, |ll| ll / ys.len() as f64)
}

/// Per-class begin scores for a full buffer; `None` unless the buffer holds
/// exactly `n_preceding` observations.
pub fn detect_begin(model: &HhmmModel, buffer: &[usize]) -> Option<BeginDetection> {
    if buffer.len() != model.config.n_preceding {
        return None;
    }
    let scores: Vec<f64> = model
        .begin_hmms
        .iter()
        .zip(model.log_prior())
        .map(|(hmm, lp)| per_event_loglik(hmm, buffer) + lp)
        .collect();
    let best = argmax(&scores);
    let fired = scores[best] >= model.config.begin_threshold;
    Some(BeginDetection { scores, best, fired })
}

/// End score of `class` for a full buffer; `None` unless the buffer holds
/// exactly `n_preceding` observations.
pub fn detect_end(model: &HhmmModel, buffer: &[usize], class: usize) -> Option<EndDetection> {
    if buffer.len() != model.config.n_preceding {
        return None;
    }
    let score = per_event_loglik(&model.end_hmms[class], buffer);
    Some(EndDetection {
        score,
        fired: score >= model.config.end_threshold,
    })
}

/// Final label of a segment: the winner if its duration likelihood reaches
/// alpha (inclusive), Other otherwise. Returns `(final class, likelihood)`.
pub fn label_segment(model: &HhmmModel, winner_class: usize, duration_s: f64) -> (usize, f64) {
    let likelihood = model.durations[winner_class].likelihood(duration_s);
    let label = if likelihood >= model.config.alpha {
        winner_class
    } else {
        model.classes.other_index()
    };
    (label, likelihood)
}

fn normalized_posterior(model: &HhmmModel, filters: &[FilterState], out: &mut Vec<f64>) {
    out.clear();
    out.extend(filters.iter().zip(model.log_prior()).map(|(f, lp)| f.log_evidence + lp));
    let norm = log_sum_exp(out);
    out.iter_mut().for_each(|x| *x -= norm);
}

fn finalize(model: &HhmmModel, seg: ActiveSegment, last_index: usize, closed_by: SegmentClose) -> SegmentRecord {
    let start_time = seg.events.first().expect("segment has events").timestamp;
    let end_time = seg.events.last().expect("segment has events").timestamp;
    let onset_time = seg.onset_time;
    let duration_s = seconds_between(onset_time, end_time).max(0.0);
    let winner_class = argmax(&seg.log_posterior);
    let (final_class, duration_likelihood) = label_segment(model, winner_class, duration_s);
    SegmentRecord {
        start_time,
        onset_time,
        end_time,
        duration_s,
        first_event_index: seg.first_index,
        onset_event_index: seg.onset_index,
        last_event_index: last_index,
        winner_class,
        duration_likelihood,
        final_class,
        posterior: seg.log_posterior.iter().map(|x| x.exp()).collect(),
        events: seg.events,
        closed_by,
    }
}

/// Feeds one event through the recognizer.
pub fn process_event(
    model: &HhmmModel,
    state: &mut StreamState,
    event: &SensorEvent,
) -> Result<(Prediction, Option<SegmentRecord>), InferError> {
    let index = state.events_seen;
    let obs = model.vocabulary.encode(event).ok_or_else(|| InferError::UnknownObservation {
        index,
        token: model.vocabulary.key().token(event),
    })?;
    state.events_seen += 1;
    state.push(obs, index, event);
    let model_err = |source| InferError::Model { index, source };

    if let Some(seg) = state.active.as_mut() {
        for (hmm, filter) in model.activity_hmms.iter().zip(seg.filters.iter_mut()) {
            hmm.forward_step(filter, obs).map_err(model_err)?;
        }
        seg.events.push(event.clone());
        normalized_posterior(model, &seg.filters, &mut seg.log_posterior);
        let top = argmax(&seg.log_posterior);
        let prediction = Prediction {
            timestamp: event.timestamp,
            event_index: index,
            mode: Mode::Active,
            top_class: Some(top),
            posterior: Some(seg.log_posterior.iter().map(|x| x.exp()).collect()),
        };
        let elapsed = seconds_between(seg.events[0].timestamp, event.timestamp);
        let close = if elapsed > model.config.max_segment_duration_s {
            Some(SegmentClose::MaxDuration)
        } else {
            let buffer = state.ring_obs.make_contiguous();
            detect_end(model, buffer, top)
                .filter(|d| d.fired)
                .map(|_| SegmentClose::EndDetected)
        };
        let record = close.map(|how| {
            let seg = state.active.take().expect("active");
            finalize(model, seg, index, how)
        });
        return Ok((prediction, record));
    }

    let buffer = state.ring_obs.make_contiguous();
    let fired = detect_begin(model, buffer).is_some_and(|d| d.fired);
    if !fired {
        return Ok((
            Prediction {
                timestamp: event.timestamp,
                event_index: index,
                mode: Mode::Idle,
                top_class: None,
                posterior: None,
            },
            None,
        ));
    }

    let filters = model
        .activity_hmms
        .iter()
        .map(|hmm| hmm.filter(buffer))
        .collect::<Result<Vec<_>, _>>()
        .map_err(model_err)?;
    let mut log_posterior = Vec::with_capacity(filters.len());
    normalized_posterior(model, &filters, &mut log_posterior);
    let top = argmax(&log_posterior);
    let posterior: Vec<f64> = log_posterior.iter().map(|x| x.exp()).collect();
    state.active = Some(ActiveSegment {
        filters,
        log_posterior,
        events: state.ring_events.iter().map(|(_, e)| e.clone()).collect(),
        first_index: state.ring_events.front().expect("buffer is full").0,
        onset_index: index,
        onset_time: event.timestamp,
    });
    Ok((
        Prediction {
            timestamp: event.timestamp,
            event_index: index,
            mode: Mode::Active,
            top_class: Some(top),
            posterior: Some(posterior),
        },
        None,
    ))
}

/// Closes a segment left open at the end of the stream.
pub fn finish(model: &HhmmModel, state: &mut StreamState) -> Option<SegmentRecord> {
    let last = state.events_seen.checked_sub(1)?;
    state
        .active
        .take()
        .map(|seg| finalize(model, seg, last, SegmentClose::EndOfStream))
}

#[derive(Debug, Clone, Default)]
pub struct StreamOutput {
    pub predictions: Vec<Prediction>,
    pub segments: Vec<SegmentRecord>,
}

/// Runs the recognizer over a finite stream, closing any open segment at the end.
pub fn run_stream(model: &HhmmModel, events: &[SensorEvent]) -> Result<StreamOutput, InferError> {
    let mut state = StreamState::new(model);
    let mut out = StreamOutput {
        predictions: Vec::with_capacity(events.len()),
        segments: Vec::new(),
    };
    for event in events {
        let (prediction, record) = process_event(model, &mut state, event)?;
        out.predictions.push(prediction);
        out.segments.extend(record);
    }
    out.segments.extend(finish(model, &mut state));
    Ok(out)
}

fn class_map(model: &HhmmModel, probs: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    model
        .classes
        .activities()
        .iter()
        .zip(probs)
        .map(|(name, p)| (name.clone(), json!(p)))
        .collect()
}

fn format_time(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%d %H:%M:%S%.f").to_string()
}

/// One prediction as a JSON line (no trailing newline).
pub fn prediction_json(model: &HhmmModel, p: &Prediction) -> String {
    json!({
        "type": "prediction",
        "schema_version": STREAM_SCHEMA_VERSION,
        "event_index": p.event_index,
        "timestamp": format_time(&p.timestamp),
        "mode": p.mode,
        "top_class": p.top_class_name(model),
        "posterior": p.posterior.as_ref().map(|probs| class_map(model, probs)),
    })
    .to_string()
}

/// One finished segment as a JSON line (no trailing newline).
pub fn segment_json(model: &HhmmModel, s: &SegmentRecord) -> String {
    json!({
        "type": "segment",
        "schema_version": STREAM_SCHEMA_VERSION,
        "start_time": format_time(&s.start_time),
        "onset_time": format_time(&s.onset_time),
        "end_time": format_time(&s.end_time),
        "duration_s": s.duration_s,
        "first_event_index": s.first_event_index,
        "onset_event_index": s.onset_event_index,
        "last_event_index": s.last_event_index,
        "n_events": s.events.len(),
        "winner_class": model.classes.name(s.winner_class),
        "duration_likelihood": s.duration_likelihood,
        "final_label": s.final_label(model),
        "posterior": class_map(model, &s.posterior),
        "closed_by": s.closed_by,
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ActivityClassSet, ObservationKey, SensorVocabulary};
    use crate::model::{DurationDistribution, Hmm, ModelConfig};

    fn model_with(mass: Vec<f64>, config: ModelConfig) -> HhmmModel {
        let vocab = SensorVocabulary::from_tokens(vec!["A:ON".into(), "B:ON".into()], ObservationKey::SensorValue, true);
        let hmm = |e: Vec<f64>| Hmm::new(vec![1.0], vec![vec![1.0]], vec![e]).unwrap();
        let edges: Vec<f64> = (0..=mass.len()).map(|i| 60.0 * i as f64).collect();
        let dur = |c| DurationDistribution {
            class_id: c,
            bin_edges: edges.clone(),
            bin_mass: mass.clone(),
            n_samples: 10,
        };
        HhmmModel::new(
            ActivityClassSet::new(vec!["Eat".into(), "Sleep".into()]).unwrap(),
            vocab,
            vec![hmm(vec![0.8, 0.1, 0.1]), hmm(vec![0.1, 0.8, 0.1])],
            vec![hmm(vec![0.7, 0.2, 0.1]), hmm(vec![0.2, 0.7, 0.1])],
            vec![hmm(vec![0.1, 0.1, 0.8]), hmm(vec![0.1, 0.1, 0.8])],
            vec![dur(0), dur(1)],
            vec![0.5, 0.5],
            config,
        )
        .unwrap()
    }

    fn event(sec: i64, sensor: &str) -> SensorEvent {
        let t = chrono::NaiveDate::from_ymd_opt(2011, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        SensorEvent::new(t + chrono::Duration::seconds(sec), sensor, "ON")
    }

    #[test]
    fn duration_rule_is_inclusive() {
        let config = ModelConfig { alpha: 0.08, ..ModelConfig::default() };
        let m = model_with(vec![0.1, 0.9], config.clone());
        assert_eq!(label_segment(&m, 0, 30.0), (0, 0.1));
        let m = model_with(vec![0.08, 0.92], config.clone());
        assert_eq!(label_segment(&m, 1, 10.0).0, 1);
        let m = model_with(vec![0.07, 0.93], config);
        assert_eq!(label_segment(&m, 1, 10.0).0, m.classes.other_index());
        assert_eq!(label_segment(&m, 0, 500.0), (m.classes.other_index(), 0.0));
    }

    #[test]
    fn idle_until_buffer_fills() {
        let config = ModelConfig { begin_threshold: -100.0, ..ModelConfig::default() };
        let m = model_with(vec![0.5, 0.5], config);
        let mut state = StreamState::new(&m);
        for i in 0..2 {
            let (p, rec) = process_event(&m, &mut state, &event(i, "A")).unwrap();
            assert_eq!(p.mode, Mode::Idle);
            assert_eq!(p.top_class_name(&m), "none");
            assert!(rec.is_none());
        }
        let (p, _) = process_event(&m, &mut state, &event(2, "A")).unwrap();
        assert_eq!(p.mode, Mode::Active);
        assert_eq!(p.top_class_name(&m), "Eat");
        let post = p.posterior.unwrap();
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn begin_and_end_scores() {
        let m = model_with(vec![0.5, 0.5], ModelConfig { begin_threshold: -1.0, end_threshold: -1.0, ..ModelConfig::default() });
        assert!(detect_begin(&m, &[0, 0]).is_none());
        let d = detect_begin(&m, &[1, 1, 1]).unwrap();
        assert_eq!(d.best, 1);
        assert!((d.scores[1] - (0.8f64.ln() + 0.5f64.ln())).abs() < 1e-12);
        assert!(d.fired);
        assert!(!detect_begin(&m, &[2, 2, 2]).unwrap().fired);
        assert!(detect_end(&m, &[2, 2, 2], 0).unwrap().fired);
        assert!(!detect_end(&m, &[0, 0, 0], 0).unwrap().fired);
    }

    #[test]
    fn full_segment_lifecycle() {
        let m = model_with(vec![0.5, 0.5], ModelConfig { begin_threshold: -1.0, end_threshold: -0.5, ..ModelConfig::default() });
        let sensors = ["C", "B", "B", "B", "B", "A", "C", "C", "C", "B"];
        let events: Vec<_> = sensors.iter().enumerate().map(|(i, s)| event(10 * i as i64, s)).collect();
        let out = run_stream(&m, &events).unwrap();
        assert_eq!(out.predictions.len(), events.len());
        assert_eq!(out.segments.len(), 1);
        let s = &out.segments[0];
        assert_eq!((s.first_event_index, s.onset_event_index, s.last_event_index), (1, 3, 8));
        assert_eq!(s.closed_by, SegmentClose::EndDetected);
        assert_eq!(s.events.len(), 8);
        assert_eq!(s.winner_class, 1);
        assert_eq!(s.duration_s, 50.0);
        assert!(s.start_time < s.end_time);
        assert_eq!(out.predictions[9].mode, Mode::Idle);
        let line: serde_json::Value = serde_json::from_str(&segment_json(&m, s)).unwrap();
        assert_eq!(line["winner_class"], "Sleep");
        assert_eq!(line["n_events"], 8);
    }

    #[test]
    fn open_segment_flushed_and_capped() {
        let config = ModelConfig {
            begin_threshold: -1.0,
            end_threshold: -1.0,
            max_segment_duration_s: 25.0,
            ..ModelConfig::default()
        };
        let m = model_with(vec![0.5, 0.5], config);
        let events: Vec<_> = (0..6).map(|i| event(10 * i, "A")).collect();
        let out = run_stream(&m, &events).unwrap();
        assert_eq!(out.segments[0].closed_by, SegmentClose::MaxDuration);
        let out = run_stream(&m, &events[..3]).unwrap();
        assert_eq!(out.segments.len(), 1);
        assert_eq!(out.segments[0].closed_by, SegmentClose::EndOfStream);
        assert_eq!(out.segments[0].last_event_index, 2);
    }

    #[test]
    fn empty_stream() {
        let m = model_with(vec![0.5, 0.5], ModelConfig::default());
        let out = run_stream(&m, &[]).unwrap();
        assert!(out.predictions.is_empty() && out.segments.is_empty());
    }

    #[test]
    fn prediction_lines_are_versioned() {
        let m = model_with(vec![0.5, 0.5], ModelConfig::default());
        let out = run_stream(&m, &[event(0, "A")]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&prediction_json(&m, &out.predictions[0])).unwrap();
        assert_eq!(v["type"], "prediction");
        assert_eq!(v["schema_version"], STREAM_SCHEMA_VERSION);
        assert_eq!(v["top_class"], "none");
        assert!(v["posterior"].is_null());
    }
}
