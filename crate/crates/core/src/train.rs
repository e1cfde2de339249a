//! Supervised estimation of every model component from labeled segments, and
//! threshold calibration on held-out data.
//!
//! Hidden states are assigned by relative position inside each training
//! sequence (the event at relative position `p` goes to state `⌊p·K⌋`), after
//! which initial, transition and emission tables are smoothed counts. No EM is
//! involved, so training is a deterministic function of data and config.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::eval::{self, EvalError};
use crate::infer::{self, InferError};
use crate::ingest::{extract_labeled_segments, ActivityClassSet, LabeledSegment, MarkIssue, SensorEvent, SensorVocabulary};
use crate::model::{DurationDistribution, HhmmModel, Hmm, ModelConfig, ModelError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training data for {0}")]
    EmptyTrainingSet(String),
    #[error("validation split has no labeled activity starts")]
    EmptyValidationSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Relative-position state for event `i` of a length-`len` sequence.
pub fn quantile_state(i: usize, len: usize, k_states: usize) -> usize {
    ((i * k_states) / len).min(k_states - 1)
}

fn smoothed_row(counts: &[f64], smoothing: f64) -> Vec<f64> {
    let total: f64 = counts.iter().sum::<f64>() + smoothing * counts.len() as f64;
    counts.iter().map(|c| (c + smoothing) / total).collect()
}

/// Smoothed MLE of an HMM from observation sequences under position-quantile
/// state assignment. Empty sequences are ignored.
pub fn fit_sequences(
    sequences: &[Vec<usize>],
    n_symbols: usize,
    k_states: usize,
    smoothing: f64,
) -> Result<Hmm, TrainError> {
    let k = k_states;
    let mut initial = vec![0.0; k];
    let mut transition = vec![vec![0.0; k]; k];
    let mut emission = vec![vec![0.0; n_symbols]; k];
    let mut used = 0;
    for seq in sequences.iter().filter(|s| !s.is_empty()) {
        used += 1;
        let len = seq.len();
        let mut prev: Option<usize> = None;
        for (i, &y) in seq.iter().enumerate() {
            let s = quantile_state(i, len, k);
            match prev {
                None => initial[s] += 1.0,
                Some(p) => transition[p][s] += 1.0,
            }
            emission[s][y] += 1.0;
            prev = Some(s);
        }
    }
    if used == 0 {
        return Err(TrainError::EmptyTrainingSet("sub-model".into()));
    }
    Ok(Hmm::new(
        smoothed_row(&initial, smoothing),
        transition.iter().map(|r| smoothed_row(r, smoothing)).collect(),
        emission.iter().map(|r| smoothed_row(r, smoothing)).collect(),
    )?)
}

fn encode_all(vocab: &SensorVocabulary, events: &[SensorEvent]) -> Vec<Option<usize>> {
    events.iter().map(|e| vocab.encode(e)).collect()
}

fn encode_segment(vocab: &SensorVocabulary, seg: &LabeledSegment) -> Vec<usize> {
    seg.events.iter().filter_map(|e| vocab.encode(e)).collect()
}

/// Activity body model for one class.
pub fn train_activity_hmm(
    segments: &[&LabeledSegment],
    vocab: &SensorVocabulary,
    config: &ModelConfig,
) -> Result<Hmm, TrainError> {
    let seqs: Vec<Vec<usize>> = segments.iter().map(|s| encode_segment(vocab, s)).collect();
    fit_sequences(&seqs, vocab.len(), config.k_states, config.smoothing)
        .map_err(|_| TrainError::EmptyTrainingSet("activity model".into()))
}

/// Which segment boundary a detector context is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anchor {
    Start,
    End,
}

/// The `n` stream indices ending at (and including) `anchor`, or `None` when
/// fewer than `n` events exist up to that point.
pub fn context_range(anchor: usize, n: usize) -> Option<std::ops::RangeInclusive<usize>> {
    (anchor + 1 >= n).then(|| anchor + 1 - n..=anchor)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundaryTraining {
    pub sequences: Vec<Vec<usize>>,
    /// Instances dropped for insufficient preceding context.
    pub insufficient_context: usize,
}

/// Detector-context sequences for each segment, taken from the stream the
/// segments were extracted from.
pub fn boundary_sequences(
    segments: &[&LabeledSegment],
    stream: &[Option<usize>],
    n: usize,
    anchor: Anchor,
) -> BoundaryTraining {
    let mut out = BoundaryTraining::default();
    for seg in segments {
        let at = match anchor {
            Anchor::Start => seg.first_index,
            Anchor::End => seg.last_index,
        };
        match context_range(at, n) {
            Some(range) if *range.end() < stream.len() => {
                out.sequences.push(stream[range].iter().filter_map(|o| *o).collect());
            }
            _ => out.insufficient_context += 1,
        }
    }
    out
}

fn boundary_hmm(
    segments: &[&LabeledSegment],
    encoded: &[Option<usize>],
    n_symbols: usize,
    config: &ModelConfig,
    anchor: Anchor,
) -> Result<(Hmm, usize), TrainError> {
    let data = boundary_sequences(segments, encoded, config.n_preceding, anchor);
    let what = match anchor {
        Anchor::Start => "begin model",
        Anchor::End => "end model",
    };
    let hmm = fit_sequences(&data.sequences, n_symbols, config.k_states, config.smoothing)
        .map_err(|_| TrainError::EmptyTrainingSet(what.into()))?;
    Ok((hmm, data.insufficient_context))
}

fn train_boundary_hmm(
    segments: &[&LabeledSegment],
    stream: &[SensorEvent],
    vocab: &SensorVocabulary,
    config: &ModelConfig,
    anchor: Anchor,
) -> Result<(Hmm, usize), TrainError> {
    boundary_hmm(segments, &encode_all(vocab, stream), vocab.len(), config, anchor)
}

/// Begin detector for one class. Returns the model and the number of
/// segments skipped for insufficient context.
pub fn train_begin_hmm(
    segments: &[&LabeledSegment],
    stream: &[SensorEvent],
    vocab: &SensorVocabulary,
    config: &ModelConfig,
) -> Result<(Hmm, usize), TrainError> {
    train_boundary_hmm(segments, stream, vocab, config, Anchor::Start)
}

/// End detector for one class; contexts end at each segment's last event.
pub fn train_end_hmm(
    segments: &[&LabeledSegment],
    stream: &[SensorEvent],
    vocab: &SensorVocabulary,
    config: &ModelConfig,
) -> Result<(Hmm, usize), TrainError> {
    train_boundary_hmm(segments, stream, vocab, config, Anchor::End)
}

pub fn fit_duration(
    class_id: usize,
    segments: &[&LabeledSegment],
    config: &ModelConfig,
) -> Result<DurationDistribution, TrainError> {
    if segments.is_empty() {
        return Err(TrainError::EmptyTrainingSet("duration histogram".into()));
    }
    let durations: Vec<f64> = segments.iter().map(|s| s.duration_s).collect();
    Ok(DurationDistribution::from_durations(class_id, &durations, config.n_duration_bins)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassTrainingReport {
    pub class: String,
    pub segments: usize,
    pub events: usize,
    pub begin_insufficient_context: usize,
    pub end_insufficient_context: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationReport {
    pub begin_threshold: f64,
    pub end_threshold: f64,
    pub alpha: f64,
    /// Begin hit rate penalized by spurious fires: hits / (starts + spurious).
    pub begin_objective: f64,
    pub begin_accuracy: f64,
    pub validation_accuracy: f64,
    pub grid_points: usize,
    pub alpha_sweep: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainingReport {
    pub train_events: usize,
    pub validation_events: usize,
    pub vocabulary_size: usize,
    pub classes: Vec<ClassTrainingReport>,
    pub unused_labels: BTreeMap<String, usize>,
    pub mark_issues: Vec<MarkIssue>,
    pub warnings: Vec<String>,
    pub calibration: Option<CalibrationReport>,
    pub begin_threshold: f64,
    pub end_threshold: f64,
    pub alpha: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[pos]
}

const THRESHOLD_QUANTILES: [f64; 7] = [0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5];
const THRESHOLD_MARGINS: [f64; 2] = [0.5, 1.0];

/// Candidate thresholds from the scores observed at true boundaries: low
/// quantiles of those scores plus two values below the minimum.
fn threshold_candidates(mut scores: Vec<f64>) -> Vec<f64> {
    scores.retain(|s| s.is_finite());
    if scores.is_empty() {
        return Vec::new();
    }
    scores.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = THRESHOLD_QUANTILES.iter().map(|&q| quantile(&scores, q)).collect();
    out.extend(THRESHOLD_MARGINS.iter().map(|m| scores[0] - m));
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// Tunes the begin/end thresholds and then alpha on a labeled validation
/// stream.
///
/// Thresholds are searched jointly on a grid drawn from validation boundary
/// scores. Each point runs the recognizer and is scored by the begin objective
/// plus event-level accuracy (alpha held at 0 so labeling cannot interfere).
/// Alpha is then the grid value with the best event-level accuracy. Ties go to
/// the smallest value throughout.
pub fn calibrate_thresholds(
    model: &HhmmModel,
    validation: &[SensorEvent],
) -> Result<(ModelConfig, CalibrationReport), TrainError> {
    let extraction = extract_labeled_segments(validation);
    let segments: Vec<&LabeledSegment> = extraction
        .segments
        .iter()
        .filter(|s| model.classes.contains(&s.label))
        .collect();
    if segments.is_empty() {
        return Err(TrainError::EmptyValidationSet);
    }
    let n = model.config.n_preceding;
    let encoded = encode_all(&model.vocabulary, validation);
    let context = |at: usize| -> Option<Vec<usize>> {
        let range = context_range(at, n)?;
        let ys: Option<Vec<usize>> = encoded[range].iter().copied().collect();
        ys
    };
    let begin_scores: Vec<f64> = segments
        .iter()
        .filter_map(|s| context(s.first_index))
        .filter_map(|ys| infer::detect_begin(model, &ys))
        .map(|d| d.scores[d.best])
        .collect();
    let end_scores: Vec<f64> = segments
        .iter()
        .filter_map(|s| {
            let class = model.classes.index_of(Some(&s.label));
            context(s.last_index).and_then(|ys| infer::detect_end(model, &ys, class))
        })
        .map(|d| d.score)
        .collect();
    let mut begin_grid = threshold_candidates(begin_scores);
    let mut end_grid = threshold_candidates(end_scores);
    if begin_grid.is_empty() {
        begin_grid.push(model.config.begin_threshold);
    }
    if end_grid.is_empty() {
        end_grid.push(model.config.end_threshold);
    }

    let truth = eval::truth_classes(&model.classes, validation);
    let starts: Vec<usize> = segments.iter().map(|s| s.first_index).collect();
    let grid: Vec<(f64, f64)> = begin_grid
        .iter()
        .flat_map(|&b| end_grid.iter().map(move |&e| (b, e)))
        .collect();
    let scored: Vec<Result<(f64, f64, f64), TrainError>> = grid
        .par_iter()
        .map(|&(b, e)| {
            let mut config = model.config.clone();
            config.begin_threshold = b;
            config.end_threshold = e;
            config.alpha = 0.0;
            let candidate = model.with_config(config)?;
            let run = infer::run_stream(&candidate, validation)?;
            let begin = eval::begin_detection_from_run(&run, &starts, n);
            let counts = eval::segment_level_counts(&candidate, &run, &truth);
            Ok((begin.objective(), begin.accuracy, eval::accuracy(&counts)?))
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    let mut best_stats = (0.0, 0.0, 0.0);
    for (i, r) in scored.into_iter().enumerate() {
        let stats = r?;
        let objective = stats.0 + stats.2;
        // grid is in ascending (begin, end) order, so strict > keeps the smallest on ties
        if best.is_none_or(|(_, o)| objective > o) {
            best = Some((i, objective));
            best_stats = stats;
        }
    }
    let (best_index, _) = best.expect("grid is non-empty");
    let (begin_threshold, end_threshold) = grid[best_index];

    let mut tuned = model.config.clone();
    tuned.begin_threshold = begin_threshold;
    tuned.end_threshold = end_threshold;
    let mut alphas = tuned.alpha_grid.clone();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let alpha_scores: Vec<Result<f64, TrainError>> = alphas
        .par_iter()
        .map(|&a| {
            let mut config = tuned.clone();
            config.alpha = a;
            let candidate = model.with_config(config)?;
            let run = infer::run_stream(&candidate, validation)?;
            Ok(eval::accuracy(&eval::segment_level_counts(&candidate, &run, &truth))?)
        })
        .collect();
    let mut alpha_sweep = Vec::with_capacity(alphas.len());
    let mut best_alpha = (alphas[0], f64::NEG_INFINITY);
    for (a, r) in alphas.iter().zip(alpha_scores) {
        let acc = r?;
        alpha_sweep.push((*a, acc));
        if acc > best_alpha.1 {
            best_alpha = (*a, acc);
        }
    }
    tuned.alpha = best_alpha.0;
    let report = CalibrationReport {
        begin_threshold,
        end_threshold,
        alpha: tuned.alpha,
        begin_objective: best_stats.0,
        begin_accuracy: best_stats.1,
        validation_accuracy: best_alpha.1,
        grid_points: grid.len(),
        alpha_sweep,
    };
    Ok((tuned, report))
}

/// Trains every component from the training split and, when enabled,
/// calibrates on the validation split.
pub fn train_full(
    train: &[SensorEvent],
    validation: &[SensorEvent],
    config: &ModelConfig,
) -> Result<(HhmmModel, TrainingReport), TrainError> {
    config.validate()?;
    let extraction = extract_labeled_segments(train);
    let mut warnings = Vec::new();
    let mut per_label: BTreeMap<&str, Vec<&LabeledSegment>> = BTreeMap::new();
    for seg in &extraction.segments {
        per_label.entry(seg.label.as_str()).or_default().push(seg);
    }
    let candidates: Vec<String> = match &config.classes {
        Some(list) => list.clone(),
        None => per_label.keys().map(|s| s.to_string()).collect(),
    };
    let mut present = Vec::new();
    for class in candidates {
        if per_label.contains_key(class.as_str()) {
            present.push(class);
        } else {
            warnings.push(format!("class {class:?} has no training segments and was omitted"));
        }
    }
    if present.is_empty() {
        return Err(TrainError::EmptyTrainingSet("any class (no labeled segments)".into()));
    }
    let classes = ActivityClassSet::new(present).map_err(ModelError::InvalidConfig)?;
    let unused_labels: BTreeMap<String, usize> = per_label
        .iter()
        .filter(|(label, _)| !classes.contains(label))
        .map(|(label, segs)| (label.to_string(), segs.len()))
        .collect();

    let vocabulary = SensorVocabulary::build(train, config.observation, config.unk_enabled);
    let encoded = encode_all(&vocabulary, train);

    type ClassParts = (Hmm, Hmm, Hmm, DurationDistribution, ClassTrainingReport);
    let parts: Vec<Result<ClassParts, TrainError>> = classes
        .activities()
        .par_iter()
        .enumerate()
        .map(|(class_id, name)| {
            let segs = &per_label[name.as_str()];
            let activity = train_activity_hmm(segs, &vocabulary, config)?;
            let (begin, begin_skipped) = boundary_hmm(segs, &encoded, vocabulary.len(), config, Anchor::Start)?;
            let (end, end_skipped) = boundary_hmm(segs, &encoded, vocabulary.len(), config, Anchor::End)?;
            let duration = fit_duration(class_id, segs, config)?;
            let report = ClassTrainingReport {
                class: name.clone(),
                segments: segs.len(),
                events: segs.iter().map(|s| s.len()).sum(),
                begin_insufficient_context: begin_skipped,
                end_insufficient_context: end_skipped,
            };
            Ok((begin, activity, end, duration, report))
        })
        .collect();
    let mut begin_hmms = Vec::new();
    let mut activity_hmms = Vec::new();
    let mut end_hmms = Vec::new();
    let mut durations = Vec::new();
    let mut class_reports = Vec::new();
    for p in parts {
        let (b, a, e, d, r) = p?;
        begin_hmms.push(b);
        activity_hmms.push(a);
        end_hmms.push(e);
        durations.push(d);
        class_reports.push(r);
    }
    let total_segments: usize = class_reports.iter().map(|r| r.segments).sum();
    let class_prior: Vec<f64> = class_reports
        .iter()
        .map(|r| r.segments as f64 / total_segments as f64)
        .collect();

    let mut model = HhmmModel::new(
        classes,
        vocabulary,
        begin_hmms,
        activity_hmms,
        end_hmms,
        durations,
        class_prior,
        config.clone(),
    )?;
    let calibration = if config.calibrate {
        let (tuned, report) = calibrate_thresholds(&model, validation)?;
        model = model.with_config(tuned)?;
        Some(report)
    } else {
        None
    };
    let report = TrainingReport {
        train_events: train.len(),
        validation_events: validation.len(),
        vocabulary_size: model.vocabulary.len(),
        classes: class_reports,
        unused_labels,
        mark_issues: extraction.issues,
        warnings,
        calibration,
        begin_threshold: model.config.begin_threshold,
        end_threshold: model.config.end_threshold,
        alpha: model.config.alpha,
    };
    Ok((model, report))
}
