//! Fixed-length sliding classifier used as the comparison baseline.
//!
//! Every event is classified from the bag of observations in the last
//! `length` events (itself included) with a multinomial naive Bayes model
//! trained on the same bags from the training stream.

use std::collections::BTreeSet;

use super::{truth_classes, ConfusionCounts, EvalError};
use crate::ingest::{extract_labeled_segments, ActivityClassSet, ObservationKey, SensorEvent, SensorVocabulary};

pub const DEFAULT_BASELINE_LENGTH: usize = 20;

/// Trains on `train` and scores every event of `test`. Classes are the labels
/// seen in training plus Other.
pub fn baseline_fixed_window(
    train: &[SensorEvent],
    test: &[SensorEvent],
    window_size: usize,
    smoothing: f64,
) -> Result<ConfusionCounts, EvalError> {
    if window_size == 0 {
        return Err(EvalError::InvalidSweep("baseline length must be at least 1".into()));
    }
    if test.is_empty() || train.is_empty() {
        return Err(EvalError::EmptyEvaluation);
    }
    let labels: BTreeSet<String> = extract_labeled_segments(train).segments.into_iter().map(|s| s.label).collect();
    let classes = ActivityClassSet::new(labels.into_iter().collect()).map_err(EvalError::InvalidSpec)?;
    let vocab = SensorVocabulary::build(train, ObservationKey::default(), true);
    let v = vocab.len();
    let n_classes = classes.names().len();

    let encode = |events: &[SensorEvent]| -> Vec<usize> {
        events.iter().map(|e| vocab.encode(e).expect("UNK enabled")).collect()
    };
    let train_obs = encode(train);
    let train_truth = truth_classes(&classes, train);

    let mut token_counts = vec![vec![0.0f64; v]; n_classes];
    let mut class_events = vec![0usize; n_classes];
    for i in 0..train_obs.len() {
        let c = train_truth[i];
        class_events[c] += 1;
        let lo = (i + 1).saturating_sub(window_size);
        for &y in &train_obs[lo..=i] {
            token_counts[c][y] += 1.0;
        }
    }
    let log_theta: Vec<Vec<f64>> = token_counts
        .iter()
        .map(|row| {
            let total: f64 = row.iter().sum::<f64>() + smoothing * v as f64;
            row.iter().map(|c| ((c + smoothing) / total).ln()).collect()
        })
        .collect();
    let log_prior: Vec<f64> = class_events
        .iter()
        .map(|&n| (n as f64 / train_obs.len() as f64).ln())
        .collect();

    let test_obs = encode(test);
    let test_truth = truth_classes(&classes, test);
    let mut counts = ConfusionCounts::new(classes.names().to_vec());
    let mut scores = vec![0.0; n_classes];
    for i in 0..test_obs.len() {
        let lo = (i + 1).saturating_sub(window_size);
        for (c, s) in scores.iter_mut().enumerate() {
            *s = log_prior[c] + test_obs[lo..=i].iter().map(|&y| log_theta[c][y]).sum::<f64>();
        }
        counts.record(test_truth[i], crate::model::argmax(&scores));
    }
    Ok(counts)
}
