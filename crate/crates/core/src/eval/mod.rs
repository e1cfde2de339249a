//! Evaluation: event-level accuracy, begin-detection scoring, parameter sweeps,
//! the fixed-length baseline and the synthetic trace generator.

mod baseline;
mod synth;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::infer::{self, InferError, Mode, StreamOutput};
use crate::ingest::{extract_labeled_segments, ground_truth_labels, ActivityClassSet, SensorEvent};
use crate::model::{HhmmModel, ModelConfig};
use crate::train::{self, TrainError};

pub use baseline::{baseline_fixed_window, DEFAULT_BASELINE_LENGTH};
pub use synth::{generate_synthetic, render_events, ClassSpec, GeneratorSpec, PlantedActivity, SyntheticTrace, Span};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no ground-truth activity starts")]
    NoTrueStarts,
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Train(#[from] Box<TrainError>),
}

impl From<TrainError> for EvalError {
    fn from(e: TrainError) -> Self {
        EvalError::Train(Box::new(e))
    }
}

/// Class-by-class counts, rows are ground truth and columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<u64>>,
    pub total: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self {
            labels,
            matrix: vec![vec![0; n]; n],
            total: 0,
        }
    }

    /// Two-class table with class 0 as the positive class.
    pub fn binary(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self {
            labels: vec!["positive".into(), "negative".into()],
            matrix: vec![vec![tp, fn_], vec![fp, tn]],
            total: tp + tn + fp + fn_,
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.matrix[truth][predicted] += 1;
        self.total += 1;
    }

    pub fn correct(&self) -> u64 {
        (0..self.labels.len()).map(|k| self.matrix[k][k]).sum()
    }

    /// One-vs-rest counts for class `k`.
    pub fn class_counts(&self, k: usize) -> ClassCounts {
        let tp = self.matrix[k][k];
        let row: u64 = self.matrix[k].iter().sum();
        let col: u64 = self.matrix.iter().map(|r| r[k]).sum();
        ClassCounts {
            tp,
            fp: col - tp,
            fn_: row - tp,
            tn: self.total + tp - row - col,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["truth\\predicted".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).expect("in-memory write");
        for (label, row) in self.labels.iter().zip(&self.matrix) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|c| c.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Fraction of correctly labeled samples: the diagonal over the total, which
/// is `(tp + tn) / (tp + tn + fp + fn)` for a two-class table.
pub fn accuracy(counts: &ConfusionCounts) -> Result<f64, EvalError> {
    if counts.total == 0 {
        return Err(EvalError::EmptyEvaluation);
    }
    Ok(counts.correct() as f64 / counts.total as f64)
}

/// Ground-truth class index per event; events outside any known activity
/// score as Other.
pub fn truth_classes(classes: &ActivityClassSet, events: &[SensorEvent]) -> Vec<usize> {
    let segments = extract_labeled_segments(events).segments;
    ground_truth_labels(events, &segments)
        .iter()
        .map(|l| classes.index_of(l.as_deref()))
        .collect()
}

/// Scores each event by the final label of the segment containing it
/// (retroactive), Other elsewhere. A segment's labeled span starts at its
/// onset event; the replayed context before it keeps its idle prediction.
pub fn segment_level_counts(model: &HhmmModel, run: &StreamOutput, truth: &[usize]) -> ConfusionCounts {
    let other = model.classes.other_index();
    let mut predicted = vec![other; truth.len()];
    for seg in &run.segments {
        let last = seg.last_event_index.min(truth.len().saturating_sub(1));
        for p in &mut predicted[seg.onset_event_index..=last] {
            *p = seg.final_class;
        }
    }
    let mut counts = ConfusionCounts::new(model.classes.names().to_vec());
    for (&t, &p) in truth.iter().zip(&predicted) {
        counts.record(t, p);
    }
    counts
}

/// Scores each event by the online top class at that event, Other while idle.
pub fn online_counts(model: &HhmmModel, run: &StreamOutput, truth: &[usize]) -> ConfusionCounts {
    let other = model.classes.other_index();
    let mut counts = ConfusionCounts::new(model.classes.names().to_vec());
    for (p, &t) in run.predictions.iter().zip(truth) {
        let predicted = match p.mode {
            Mode::Active => p.top_class.unwrap_or(other),
            Mode::Idle => other,
        };
        counts.record(t, predicted);
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BeginDetectionStats {
    pub true_starts: usize,
    pub hits: usize,
    pub fires: usize,
    /// Fires with no true start within tolerance.
    pub spurious: usize,
    pub tolerance_events: usize,
    /// hits / true_starts.
    pub accuracy: f64,
    /// spurious / fires (0 when nothing fired).
    pub spurious_rate: f64,
}

impl BeginDetectionStats {
    /// Hit rate penalized by spurious fires.
    pub fn objective(&self) -> f64 {
        let denom = self.true_starts + self.spurious;
        if denom == 0 {
            0.0
        } else {
            self.hits as f64 / denom as f64
        }
    }
}

fn within(sorted: &[usize], x: usize, tol: usize) -> bool {
    let lo = x.saturating_sub(tol);
    let i = sorted.partition_point(|&v| v < lo);
    i < sorted.len() && sorted[i] <= x + tol
}

/// Begin-detection scoring of a finished run against true start indices. A
/// true start is hit when some begin fired within `tolerance` events of it.
pub fn begin_detection_from_run(run: &StreamOutput, true_starts: &[usize], tolerance: usize) -> BeginDetectionStats {
    let mut fires: Vec<usize> = run.segments.iter().map(|s| s.onset_event_index).collect();
    fires.sort_unstable();
    let mut starts = true_starts.to_vec();
    starts.sort_unstable();
    let hits = starts.iter().filter(|&&s| within(&fires, s, tolerance)).count();
    let spurious = fires.iter().filter(|&&f| !within(&starts, f, tolerance)).count();
    BeginDetectionStats {
        true_starts: starts.len(),
        hits,
        fires: fires.len(),
        spurious,
        tolerance_events: tolerance,
        accuracy: if starts.is_empty() { 0.0 } else { hits as f64 / starts.len() as f64 },
        spurious_rate: if fires.is_empty() { 0.0 } else { spurious as f64 / fires.len() as f64 },
    }
}

/// Start indices of ground-truth segments whose class the model knows.
pub fn true_starts(classes: &ActivityClassSet, events: &[SensorEvent]) -> Vec<usize> {
    extract_labeled_segments(events)
        .segments
        .iter()
        .filter(|s| classes.contains(&s.label))
        .map(|s| s.first_index)
        .collect()
}

pub fn begin_detection_accuracy(
    model: &HhmmModel,
    events: &[SensorEvent],
    tolerance: usize,
) -> Result<BeginDetectionStats, EvalError> {
    let starts = true_starts(&model.classes, events);
    if starts.is_empty() {
        return Err(EvalError::NoTrueStarts);
    }
    let run = infer::run_stream(model, events)?;
    Ok(begin_detection_from_run(&run, &starts, tolerance))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentSummary {
    pub first_event_index: usize,
    pub onset_event_index: usize,
    pub last_event_index: usize,
    pub duration_s: f64,
    pub winner: String,
    pub duration_likelihood: f64,
    pub final_label: String,
    /// Majority ground-truth label over the segment's events.
    pub truth: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub n_events: usize,
    /// Event-level accuracy under retroactive segment labels.
    pub accuracy: f64,
    /// Event-level accuracy of the per-event online prediction.
    pub online_accuracy: f64,
    pub counts: ConfusionCounts,
    pub online_counts: ConfusionCounts,
    pub begin_detection: Option<BeginDetectionStats>,
    pub unk_rate: f64,
    pub segments: Vec<SegmentSummary>,
    pub warnings: Vec<String>,
}

/// Events whose observation is unknown to the model above this rate raise a
/// warning.
pub const UNK_WARNING_RATE: f64 = 0.01;

pub fn evaluate_stream(model: &HhmmModel, events: &[SensorEvent]) -> Result<EvaluationReport, EvalError> {
    if events.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let truth = truth_classes(&model.classes, events);
    let run = infer::run_stream(model, events)?;
    let counts = segment_level_counts(model, &run, &truth);
    let online = online_counts(model, &run, &truth);
    let starts = true_starts(&model.classes, events);
    let begin = (!starts.is_empty()).then(|| begin_detection_from_run(&run, &starts, model.config.n_preceding));
    let unknown = events.iter().filter(|e| model.vocabulary.is_unknown(e)).count();
    let unk_rate = unknown as f64 / events.len() as f64;
    let mut warnings = Vec::new();
    if unk_rate > UNK_WARNING_RATE {
        warnings.push(format!(
            "{:.1}% of events carry observations unseen in training; the data may not match the model's sensors",
            unk_rate * 100.0
        ));
    }
    let names = model.classes.names();
    let segments = run
        .segments
        .iter()
        .map(|s| {
            let mut tally = vec![0usize; names.len()];
            for &t in &truth[s.onset_event_index..=s.last_event_index] {
                tally[t] += 1;
            }
            let majority = crate::model::argmax(&tally.iter().map(|&c| c as f64).collect::<Vec<_>>());
            SegmentSummary {
                first_event_index: s.first_event_index,
                onset_event_index: s.onset_event_index,
                last_event_index: s.last_event_index,
                duration_s: s.duration_s,
                winner: names[s.winner_class].clone(),
                duration_likelihood: s.duration_likelihood,
                final_label: names[s.final_class].clone(),
                truth: names[majority].clone(),
            }
        })
        .collect();
    Ok(EvaluationReport {
        n_events: events.len(),
        accuracy: accuracy(&counts)?,
        online_accuracy: accuracy(&online)?,
        counts,
        online_counts: online,
        begin_detection: begin,
        unk_rate,
        segments,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Detector context length; scored by begin-detection accuracy.
    NPreceding,
    /// Duration threshold; scored by event-level accuracy.
    Alpha,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::NPreceding => "n_preceding",
            SweepParameter::Alpha => "alpha",
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            SweepParameter::NPreceding => "begin_detection_accuracy",
            SweepParameter::Alpha => "event_accuracy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    pub metrics: Vec<f64>,
    pub best: f64,
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["parameter", "value", self.parameter.metric_name()]).expect("in-memory write");
        for (v, m) in self.values.iter().zip(&self.metrics) {
            w.write_record([self.parameter.name().to_string(), v.to_string(), m.to_string()])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

/// Retrains or re-evaluates at each grid point. The grid is sorted and
/// deduplicated first, so the report does not depend on the order given;
/// the best value is the argmax, smallest value on ties.
///
/// For `n_preceding` each point retrains (calibrating on `validation`) and is
/// scored by begin-detection accuracy on `evaluation` with a tolerance of `n`
/// events. For `alpha` one model is trained and each point relabels
/// `evaluation` with that alpha.
pub fn sweep(
    parameter: SweepParameter,
    grid: &[f64],
    train_events: &[SensorEvent],
    validation: &[SensorEvent],
    evaluation: &[SensorEvent],
    config: &ModelConfig,
) -> Result<SweepReport, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::InvalidSweep("empty grid".into()));
    }
    let mut values = grid.to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::InvalidSweep("grid values must be finite".into()));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let metrics: Vec<Result<f64, EvalError>> = match parameter {
        SweepParameter::NPreceding => {
            if values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
                return Err(EvalError::InvalidSweep("n_preceding values must be positive integers".into()));
            }
            values
                .par_iter()
                .map(|&v| {
                    let mut c = config.clone();
                    c.n_preceding = v as usize;
                    let (model, _) = train::train_full(train_events, validation, &c)?;
                    Ok(begin_detection_accuracy(&model, evaluation, c.n_preceding)?.accuracy)
                })
                .collect()
        }
        SweepParameter::Alpha => {
            if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(EvalError::InvalidSweep("alpha values must lie in [0, 1]".into()));
            }
            let (model, _) = train::train_full(train_events, validation, config)?;
            let truth = truth_classes(&model.classes, evaluation);
            values
                .par_iter()
                .map(|&v| {
                    let mut c = model.config.clone();
                    c.alpha = v;
                    let m = model.with_config(c).map_err(TrainError::from)?;
                    let run = infer::run_stream(&m, evaluation)?;
                    accuracy(&segment_level_counts(&m, &run, &truth))
                })
                .collect()
        }
    };
    let metrics = metrics.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let best_index = crate::model::argmax(&metrics);
    Ok(SweepReport {
        parameter,
        best: values[best_index],
        values,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_accuracy_examples() {
        assert_eq!(accuracy(&ConfusionCounts::binary(5, 5, 0, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionCounts::binary(3, 2, 3, 2)).unwrap(), 0.5);
        assert!(matches!(accuracy(&ConfusionCounts::binary(0, 0, 0, 0)), Err(EvalError::EmptyEvaluation)));
    }

    #[test]
    fn class_counts_reconcile() {
        let mut c = ConfusionCounts::new(vec!["a".into(), "b".into(), "c".into()]);
        for (t, p) in [(0, 0), (0, 1), (1, 1), (2, 0), (2, 2), (2, 2)] {
            c.record(t, p);
        }
        let a = c.class_counts(0);
        assert_eq!((a.tp, a.fp, a.fn_, a.tn), (1, 1, 1, 3));
        let m: u64 = c.matrix.iter().flatten().sum();
        assert_eq!(m, c.total);
        for k in 0..3 {
            let cc = c.class_counts(k);
            assert_eq!(cc.tp, c.matrix[k][k]);
            assert_eq!(cc.tp + cc.fp + cc.fn_ + cc.tn, c.total);
        }
        let b = ConfusionCounts::binary(3, 2, 3, 2).class_counts(0);
        assert_eq!((b.tp, b.tn, b.fp, b.fn_), (3, 2, 3, 2));
        assert!(c.to_csv().starts_with("truth\\predicted,a,b,c\n"));
    }

    #[test]
    fn begin_hits_within_tolerance() {
        use crate::infer::StreamOutput;
        let run = StreamOutput::default();
        let stats = begin_detection_from_run(&run, &[5, 10], 3);
        assert_eq!((stats.hits, stats.fires, stats.accuracy), (0, 0, 0.0));
        assert!(within(&[2, 9], 10, 1));
        assert!(!within(&[2, 9], 11, 1));
        assert!(within(&[13], 10, 3));
        assert!(!within(&[14], 10, 3));
        assert!(within(&[0], 2, 3));
    }
}
