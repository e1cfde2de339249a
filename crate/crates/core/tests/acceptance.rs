//! Acceptance suite. Prints one line per criterion and exits nonzero if any fails.
//!
//! The real-dataset criterion runs only when `ACTIVITY_HHMM_HOME1` and/or
//! `ACTIVITY_HHMM_HOME2` point at annotated event logs; otherwise it is skipped.

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use activity_hhmm::eval::{
    accuracy, baseline_fixed_window, begin_detection_accuracy, evaluate_stream, generate_synthetic, sweep,
    ConfusionCounts, GeneratorSpec, SweepParameter, DEFAULT_BASELINE_LENGTH,
};
use activity_hhmm::infer::{label_segment, prediction_json, segment_json};
use activity_hhmm::ingest::{load_dataset, split_chronological, OnError};
use activity_hhmm::model::DurationDistribution;
use activity_hhmm::{process_event, run_stream, train_full, HhmmModel, ModelConfig, StreamState};
use common::{enumerate_filtered, enumerate_paths, random_hmm, rel_err, rng};
use rand::Rng;

const ORACLE_TOL: f64 = 1e-9;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const NORMALIZATION_TOL: f64 = 1e-9;
const LONG_RUN_STEPS: usize = 1_000_000;
const MIN_EVENT_ACCURACY: f64 = 0.90;
const MIN_BEGIN_ACCURACY: f64 = 0.95;
const BEGIN_TOLERANCE: usize = 3;
const END_TO_END_BUDGET: Duration = Duration::from_secs(30);
const MIN_DURATION_CORRELATION: f64 = 0.9;
const DURATION_BINS: usize = 15;
const MIN_THROUGHPUT: f64 = 1e5;
const REAL_DATA_ACCURACY_TOL: f64 = 0.05;
const SEED: u64 = 20_240_601;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn filtering_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(SEED);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = r.random_range(1..=4);
        let v = r.random_range(1..=5);
        let t = r.random_range(1..=6);
        let hmm = random_hmm(&mut r, k, v);
        let ys: Vec<usize> = (0..t).map(|_| r.random_range(0..v)).collect();
        let oracle = enumerate_filtered(&hmm, &ys);
        let mut state = hmm.forward_init(ys[0]).unwrap();
        for i in 0..t {
            if i > 0 {
                hmm.forward_step(&mut state, ys[i]).unwrap();
            }
            for (got, want) in state.belief().iter().zip(&oracle[i]) {
                worst = worst.max(rel_err(*got, *want));
            }
        }
        let (total, _) = enumerate_paths(&hmm, &ys);
        worst = worst.max(rel_err(state.log_evidence.exp(), total));
        worst = worst.max(rel_err(hmm.sequence_loglik(&ys).unwrap().exp(), total));
    }
    let elapsed = start.elapsed();
    check(
        worst <= ORACLE_TOL && elapsed < ORACLE_BUDGET,
        format!("200 models, worst relative error {worst:.2e} (tol {ORACLE_TOL:e}), {elapsed:.2?}"),
    )
}

fn normalization() -> Outcome {
    let mut r = rng(SEED + 1);
    let hmm = random_hmm(&mut r, 4, 5);
    let mut state = hmm.forward_init(r.random_range(0..5)).unwrap();
    let mut worst = 0.0f64;
    for _ in 1..LONG_RUN_STEPS {
        hmm.forward_step(&mut state, r.random_range(0..5)).unwrap();
        let mass: f64 = state.log_belief.iter().map(|x| x.exp()).sum();
        worst = worst.max((mass - 1.0).abs());
        if !state.log_evidence.is_finite() {
            return Outcome::Fail(format!("log evidence not finite at step {}", state.t));
        }
    }
    check(
        worst <= NORMALIZATION_TOL,
        format!(
            "{LONG_RUN_STEPS} steps, max |sum-1| {worst:.2e}, final log evidence {:.1}",
            state.log_evidence
        ),
    )
}

fn accuracy_arithmetic() -> Outcome {
    // (tp, tn, fp, fn) and the reduced fraction worked out by hand.
    type Table = ((u64, u64, u64, u64), (u64, u64));
    let tables: [Table; 20] = [
        ((3, 2, 3, 2), (1, 2)),
        ((5, 5, 0, 0), (1, 1)),
        ((0, 0, 4, 6), (0, 1)),
        ((1, 0, 0, 0), (1, 1)),
        ((0, 0, 0, 1), (0, 1)),
        ((1, 1, 1, 0), (2, 3)),
        ((2, 1, 0, 0), (1, 1)),
        ((7, 0, 3, 0), (7, 10)),
        ((0, 9, 0, 1), (9, 10)),
        ((10, 20, 30, 40), (3, 10)),
        ((1, 2, 3, 4), (3, 10)),
        ((50, 25, 15, 10), (3, 4)),
        ((6, 6, 1, 1), (6, 7)),
        ((33, 0, 0, 66), (1, 3)),
        ((13, 4, 2, 1), (17, 20)),
        ((100, 0, 0, 1), (100, 101)),
        ((8, 8, 8, 8), (1, 2)),
        ((999, 1, 0, 0), (1, 1)),
        ((2, 3, 5, 7), (5, 17)),
        ((64, 32, 16, 16), (3, 4)),
    ];
    for ((tp, tn, fp, fn_), (p, q)) in tables {
        let total = tp + tn + fp + fn_;
        if (tp + tn) * q != p * total {
            return Outcome::Fail(format!("hand fraction {p}/{q} wrong for {tp},{tn},{fp},{fn_}"));
        }
        let got = accuracy(&ConfusionCounts::binary(tp, tn, fp, fn_)).unwrap();
        let want = p as f64 / q as f64;
        if got != want {
            return Outcome::Fail(format!("tp={tp} tn={tn} fp={fp} fn={fn_}: got {got}, want {p}/{q}"));
        }
    }
    Outcome::Pass("20 tables equal their exact fractions with zero tolerance".into())
}

fn duration_rule(model: &HhmmModel) -> Outcome {
    let steps = 50;
    let mut checked = 0;
    let mut boundary = 0;
    for i in 0..=steps {
        let lik = i as f64 / steps as f64;
        let mut m = model.clone();
        m.durations[0] = DurationDistribution {
            class_id: 0,
            bin_edges: vec![0.0, 100.0, 200.0],
            bin_mass: vec![lik, 1.0 - lik],
            n_samples: steps,
        };
        for j in 0..=steps {
            let alpha = j as f64 / steps as f64;
            m.config.alpha = alpha;
            let (label, got_lik) = label_segment(&m, 0, 50.0);
            let expected = if i >= j { 0 } else { m.classes.other_index() };
            if got_lik != lik || label != expected {
                return Outcome::Fail(format!("likelihood {lik}, alpha {alpha}: label {label}, expected {expected}"));
            }
            checked += 1;
            boundary += usize::from(i == j);
        }
        m.config.alpha = 0.0;
        if label_segment(&m, 0, 250.0) != (0, 0.0) {
            return Outcome::Fail("alpha 0 must keep an out-of-support winner".into());
        }
    }
    Outcome::Pass(format!("{checked} (likelihood, alpha) pairs, {boundary} on the boundary"))
}

struct Synthetic {
    spec: GeneratorSpec,
    trace: activity_hhmm::eval::SyntheticTrace,
    train_len: usize,
    validation_len: usize,
}

fn synthetic() -> Synthetic {
    let spec = GeneratorSpec::well_separated(5, 500);
    let trace = generate_synthetic(&spec, SEED).unwrap();
    let split = split_chronological(&trace.events, (0.7, 0.1, 0.2)).unwrap();
    Synthetic {
        spec,
        train_len: split.train.len(),
        validation_len: split.validation.len(),
        trace,
    }
}

impl Synthetic {
    fn parts(&self) -> (&[activity_hhmm::SensorEvent], &[activity_hhmm::SensorEvent], &[activity_hhmm::SensorEvent]) {
        let e = &self.trace.events;
        let b = self.train_len + self.validation_len;
        (&e[..self.train_len], &e[self.train_len..b], &e[b..])
    }
}

fn end_to_end(data: &Synthetic) -> (Outcome, Option<HhmmModel>) {
    let start = Instant::now();
    let (train, validation, test) = data.parts();
    let (model, _) = match train_full(train, validation, &ModelConfig::default()) {
        Ok(m) => m,
        Err(e) => return (Outcome::Fail(format!("training failed: {e}")), None),
    };
    let report = evaluate_stream(&model, test).unwrap();
    let begin = begin_detection_accuracy(&model, test, BEGIN_TOLERANCE).unwrap();
    let run = run_stream(&model, test).unwrap();
    let invariant = run.segments.iter().all(|s| {
        let lik = model.durations[s.winner_class].likelihood(s.duration_s);
        let keep = lik >= model.config.alpha;
        lik == s.duration_likelihood && (s.final_class == s.winner_class) == keep
            && (keep || s.final_class == model.classes.other_index())
    });
    let elapsed = start.elapsed();
    let ok = report.accuracy >= MIN_EVENT_ACCURACY
        && begin.accuracy >= MIN_BEGIN_ACCURACY
        && invariant
        && elapsed < END_TO_END_BUDGET;
    let detail = format!(
        "event accuracy {:.4} (online {:.4}), begin detection {:.4} at +/-{BEGIN_TOLERANCE} ({} / {}), {} segments obey labeling rule: {invariant}, {elapsed:.2?}",
        report.accuracy,
        report.online_accuracy,
        begin.accuracy,
        begin.hits,
        begin.true_starts,
        run.segments.len(),
    );
    (check(ok, detail), Some(model))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn histogram(values: &[f64], max: f64) -> Vec<f64> {
    let mut h = vec![0.0; DURATION_BINS];
    for &v in values {
        let bin = ((v / max) * DURATION_BINS as f64).floor() as usize;
        h[bin.min(DURATION_BINS - 1)] += 1.0;
    }
    h
}

fn no_fixed_segmentation(data: &Synthetic, model: &HhmmModel) -> Outcome {
    let source = include_str!("../src/infer.rs").to_lowercase();
    if source.contains("window") {
        return Outcome::Fail("the inference source mentions a window".into());
    }
    let config = serde_json::to_value(ModelConfig::default()).unwrap();
    let keys: Vec<&String> = config.as_object().unwrap().keys().collect();
    if keys.iter().any(|k| k.contains("window")) {
        return Outcome::Fail(format!("config exposes a window parameter: {keys:?}"));
    }
    let (_, _, test) = data.parts();
    let offset = data.train_len + data.validation_len;
    let planted: Vec<f64> = data
        .trace
        .activities
        .iter()
        .filter(|a| a.first_index >= offset)
        .map(|a| a.duration_s)
        .collect();
    let run = run_stream(model, test).unwrap();
    let observed: Vec<f64> = run.segments.iter().map(|s| s.duration_s).collect();
    let max = planted.iter().chain(&observed).copied().fold(0.0, f64::max);
    let r = pearson(&histogram(&planted, max), &histogram(&observed, max));
    let spread = observed.iter().copied().fold(f64::INFINITY, f64::min)..=observed.iter().copied().fold(0.0, f64::max);
    check(
        r >= MIN_DURATION_CORRELATION,
        format!(
            "no window in inference path or config; {} planted vs {} output segments, durations {:.0}..{:.0} s, histogram r = {r:.4}",
            planted.len(),
            observed.len(),
            spread.start(),
            spread.end()
        ),
    )
}

fn train_and_report(data: &Synthetic) -> (String, String, String) {
    let (train, validation, test) = data.parts();
    let (model, report) = train_full(train, validation, &ModelConfig::default()).unwrap();
    let eval = evaluate_stream(&model, test).unwrap();
    let run = run_stream(&model, test).unwrap();
    let mut lines = String::new();
    for p in &run.predictions {
        lines += &prediction_json(&model, p);
        lines.push('\n');
    }
    for s in &run.segments {
        lines += &segment_json(&model, s);
        lines.push('\n');
    }
    (
        model.to_json(),
        serde_json::to_string(&report).unwrap() + &serde_json::to_string(&eval).unwrap(),
        lines,
    )
}

fn determinism(data: &Synthetic) -> Outcome {
    let regenerated = generate_synthetic(&data.spec, SEED).unwrap();
    if regenerated != data.trace {
        return Outcome::Fail("generator output differs for the same seed".into());
    }
    let a = train_and_report(data);
    let b = train_and_report(data);
    check(
        a == b,
        format!(
            "model {} bytes, reports {} bytes, stream {} bytes identical across runs: {}",
            a.0.len(),
            a.1.len(),
            a.2.len(),
            a == b
        ),
    )
}

fn real_home(name: &str, var: &str, best_alpha: f64, target: f64) -> Result<String, String> {
    let path = std::env::var(var).map_err(|_| "absent".to_string())?;
    let (events, _) = load_dataset(Path::new(&path), OnError::Skip).map_err(|e| format!("{name}: {e}"))?;
    let split = split_chronological(&events, (0.7, 0.1, 0.2)).map_err(|e| format!("{name}: {e}"))?;
    let config = ModelConfig::default();
    let alpha_grid = [0.02, 0.04, 0.06, 0.08, 0.10];
    let alpha = sweep(SweepParameter::Alpha, &alpha_grid, &split.train, &split.validation, &split.validation, &config)
        .map_err(|e| format!("{name}: {e}"))?;
    let n = sweep(
        SweepParameter::NPreceding,
        &[2.0, 3.0, 4.0, 5.0, 6.0],
        &split.train,
        &split.validation,
        &split.validation,
        &config,
    )
    .map_err(|e| format!("{name}: {e}"))?;
    let (model, _) = train_full(&split.train, &split.validation, &config).map_err(|e| format!("{name}: {e}"))?;
    let ours = evaluate_stream(&model, &split.test).map_err(|e| format!("{name}: {e}"))?.accuracy;
    let baseline = accuracy(
        &baseline_fixed_window(&split.train, &split.test, DEFAULT_BASELINE_LENGTH, config.smoothing)
            .map_err(|e| format!("{name}: {e}"))?,
    )
    .map_err(|e| format!("{name}: {e}"))?;
    let detail = format!(
        "{name}: best alpha {} (want {best_alpha}), best n {} (want 3), accuracy {ours:.3} (want {target} +/- {REAL_DATA_ACCURACY_TOL}), baseline {baseline:.3}",
        alpha.best, n.best
    );
    let ok = alpha.best == best_alpha && n.best == 3.0 && (ours - target).abs() <= REAL_DATA_ACCURACY_TOL && ours > baseline;
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn real_datasets() -> Outcome {
    let homes = [
        ("Home 1", "ACTIVITY_HHMM_HOME1", 0.08, 0.646),
        ("Home 2", "ACTIVITY_HHMM_HOME2", 0.06, 0.59),
    ];
    let mut details = Vec::new();
    let mut failed = false;
    let mut ran = false;
    for (name, var, alpha, target) in homes {
        match real_home(name, var, alpha, target) {
            Ok(d) => {
                ran = true;
                details.push(d);
            }
            Err(d) if d == "absent" => details.push(format!("{name}: set {var} to run")),
            Err(d) => {
                ran = true;
                failed = true;
                details.push(d);
            }
        }
    }
    let detail = details.join("; ");
    match (ran, failed) {
        (false, _) => Outcome::Skip(format!("real datasets not available ({detail})")),
        (true, true) => Outcome::Fail(detail),
        (true, false) => Outcome::Pass(detail),
    }
}

fn throughput() -> Outcome {
    let train_spec = GeneratorSpec::well_separated(12, 600);
    let trace = generate_synthetic(&train_spec, SEED + 9).unwrap();
    let split = split_chronological(&trace.events, (0.7, 0.1, 0.2)).unwrap();
    let config = ModelConfig { k_states: 4, ..ModelConfig::default() };
    let (model, _) = train_full(&split.train, &split.validation, &config).unwrap();
    let mut stream_spec = train_spec.clone();
    stream_spec.n_activities = 12_000;
    let events = generate_synthetic(&stream_spec, SEED + 10).unwrap().events;

    let mut state = StreamState::new(&model);
    let mut segments = 0usize;
    let start = Instant::now();
    for e in &events {
        let (_, rec) = process_event(&model, &mut state, e).unwrap();
        segments += usize::from(rec.is_some());
    }
    let elapsed = start.elapsed().as_secs_f64();
    let rate = events.len() as f64 / elapsed;
    check(
        rate >= MIN_THROUGHPUT && model.n_classes() == 12,
        format!(
            "{} events, {segments} segments, {} classes x {} states, {:.3} s, {:.0} events/s (min {MIN_THROUGHPUT:e})",
            events.len(),
            model.n_classes(),
            model.activity_hmms[0].n_states(),
            elapsed,
            rate
        ),
    )
}

fn main() -> ExitCode {
    let data = synthetic();
    let (e2e, model) = end_to_end(&data);
    let model = model.expect("synthetic corpus trains");
    let results = [
        ("1 filtering oracle", filtering_oracle()),
        ("2 normalization", normalization()),
        ("3 accuracy arithmetic", accuracy_arithmetic()),
        ("4 duration labeling rule", duration_rule(&model)),
        ("5 synthetic end-to-end", e2e),
        ("6 data-driven segmentation", no_fixed_segmentation(&data, &model)),
        ("7 determinism", determinism(&data)),
        ("8 real datasets (conditional)", real_datasets()),
        ("9 throughput", throughput()),
    ];
    let mut failures = 0;
    for (name, outcome) in &results {
        match outcome {
            Outcome::Pass(d) => println!("[PASS] {name}: {d}"),
            Outcome::Skip(d) => println!("[SKIP] {name}: {d}"),
            Outcome::Fail(d) => {
                failures += 1;
                println!("[FAIL] {name}: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failures} failed, {} skipped",
        results.iter().filter(|(_, o)| matches!(o, Outcome::Pass(_))).count(),
        results.iter().filter(|(_, o)| matches!(o, Outcome::Skip(_))).count());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
