use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::path::Path;

use activity_hhmm::eval::{
    self, accuracy, baseline_fixed_window, evaluate_stream, generate_synthetic, render_events, GeneratorSpec,
    SweepParameter,
};
use activity_hhmm::infer::{self, prediction_json, segment_json};
use activity_hhmm::ingest::{
    extract_labeled_segments, load_dataset, parse_event_line, split_chronological, DatasetSplit, ObservationKey,
    OnError, ParseReport, SensorEvent,
};
use activity_hhmm::{load_model, save_model, train_full, ModelConfig, StreamState};
use serde_json::json;

use crate::exit::{CliError, Status};
use crate::{ConfigArgs, DataArgs, EvalArgs, Observation, StreamArgs, SweepArgs, SweepOn, SweepParam, SynthArgs, TrainArgs};

const REPORT_SCHEMA_VERSION: u32 = 1;

fn io_error(path: &Path, e: io::Error) -> CliError {
    CliError::new(Status::Io, format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn print_stdout(text: &str) -> Result<(), CliError> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(CliError::new(Status::Io, format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("reports serialize") + "\n"
}

pub fn load_config(args: &ConfigArgs) -> Result<ModelConfig, CliError> {
    let mut c = match &args.config {
        Some(path) => toml::from_str::<ModelConfig>(&read_text(path)?)
            .map_err(|e| CliError::new(Status::Data, format!("{}: {e}", path.display())))?,
        None => ModelConfig::default(),
    };
    if let Some(v) = args.n_preceding {
        c.n_preceding = v;
    }
    if let Some(v) = args.alpha {
        c.alpha = v;
    }
    if let Some(v) = args.k_states {
        c.k_states = v;
    }
    if let Some(v) = args.smoothing {
        c.smoothing = v;
    }
    if let Some(v) = args.begin_threshold {
        c.begin_threshold = v;
    }
    if let Some(v) = args.end_threshold {
        c.end_threshold = v;
    }
    if let Some(v) = args.duration_bins {
        c.n_duration_bins = v;
    }
    if let Some(v) = args.max_segment_duration {
        c.max_segment_duration_s = v;
    }
    if args.no_calibrate {
        c.calibrate = false;
    }
    if args.no_unk {
        c.unk_enabled = false;
    }
    if let Some(o) = args.observation {
        c.observation = match o {
            Observation::Sensor => ObservationKey::Sensor,
            Observation::SensorValue => ObservationKey::SensorValue,
        };
    }
    c.validate().map_err(|e| CliError::new(Status::Data, e.to_string()))?;
    Ok(c)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::usage(format!("{what} must list at least one value")));
    }
    items
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| CliError::usage(format!("{what}: {s:?} is not a number"))))
        .collect()
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64), CliError> {
    match parse_list(text, "--split")?.as_slice() {
        &[a, b, c] => Ok((a, b, c)),
        _ => Err(CliError::usage("--split takes three comma-separated fractions")),
    }
}

fn load_events(path: &Path, strict: bool) -> Result<(Vec<SensorEvent>, ParseReport), CliError> {
    let on_error = if strict { OnError::Abort } else { OnError::Skip };
    let (events, mut report) = load_dataset(path, on_error)?;
    if report.skipped > 0 {
        eprintln!("warning: {}: skipped {} malformed line(s)", path.display(), report.skipped);
    }
    if !report.monotonicity_violations.is_empty() {
        eprintln!(
            "warning: {}: {} timestamp(s) go backwards, first at line {}",
            path.display(),
            report.monotonicity_violations.len(),
            report.monotonicity_violations[0].line_no
        );
    }
    let extraction = extract_labeled_segments(&events);
    if !extraction.issues.is_empty() {
        eprintln!("warning: {}: {} unbalanced begin/end mark(s)", path.display(), extraction.issues.len());
    }
    report.record_segments(&extraction);
    Ok((events, report))
}

fn load_split(data: &DataArgs) -> Result<(DatasetSplit, ParseReport), CliError> {
    let ratios = parse_ratios(&data.split)?;
    let (events, report) = load_events(&data.data, data.strict)?;
    Ok((split_chronological(&events, ratios)?, report))
}

fn split_sizes(split: &DatasetSplit) -> serde_json::Value {
    json!({
        "train": split.train.len(),
        "validation": split.validation.len(),
        "test": split.test.len(),
    })
}

pub fn train(args: TrainArgs) -> Result<(), CliError> {
    let config = load_config(&args.config)?;
    let (split, parse) = load_split(&args.data)?;
    let (model, report) = train_full(&split.train, &split.validation, &config)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    save_model(&model, &args.out)?;
    print_stdout(&to_json(&json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "model": args.out.display().to_string(),
        "parse": parse,
        "split": split_sizes(&split),
        "training": report,
    })))
}

struct LineSink {
    out: Box<dyn Write>,
    closed: bool,
}

impl LineSink {
    /// Writes one record and flushes it. A reader that hung up is not an
    /// error; later records are dropped.
    fn emit(&mut self, line: &str) -> Result<(), CliError> {
        if self.closed {
            return Ok(());
        }
        let result = self
            .out
            .write_all(line.as_bytes())
            .and_then(|_| self.out.write_all(b"\n"))
            .and_then(|_| self.out.flush());
        match result {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == ErrorKind::BrokenPipe => {
                self.closed = true;
                Ok(())
            }
            Err(e) => Err(CliError::new(Status::Io, format!("writing records: {e}"))),
        }
    }
}

pub fn stream(args: StreamArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let input: Box<dyn BufRead> = match &args.input {
        Some(path) => Box::new(BufReader::new(File::open(path).map_err(|e| io_error(path, e))?)),
        None => Box::new(io::stdin().lock()),
    };
    let out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?)),
        None => Box::new(io::stdout().lock()),
    };
    let mut sink = LineSink { out, closed: false };
    let mut state = StreamState::new(&model);
    let mut last_time = None;
    let name = args.input.as_deref().map_or("<stdin>".to_string(), |p| p.display().to_string());
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| CliError::new(Status::Io, format!("{name}: {e}")))?;
        if line.trim().is_empty() {
            continue;
        }
        let event = match parse_event_line(&line, line_no) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("warning: {name}: {e}");
                continue;
            }
        };
        if last_time.is_some_and(|t| event.timestamp < t) {
            eprintln!("warning: {name}: line {line_no}: timestamp goes backwards");
        }
        last_time = Some(event.timestamp);
        match infer::process_event(&model, &mut state, &event) {
            Ok((prediction, record)) => {
                sink.emit(&prediction_json(&model, &prediction))?;
                if let Some(r) = record {
                    sink.emit(&segment_json(&model, &r))?;
                }
            }
            Err(e @ infer::InferError::UnknownObservation { .. }) => eprintln!("warning: {name}: line {line_no}: {e}"),
            Err(e) => return Err(e.into()),
        }
    }
    if let Some(r) = infer::finish(&model, &mut state) {
        sink.emit(&segment_json(&model, &r))?;
    }
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&args.model)?;
    let (test, train) = if args.whole {
        let (events, _) = load_events(&args.data.data, args.data.strict)?;
        let train = match (&args.train_data, args.baseline) {
            (Some(path), _) => Some(load_events(path, args.data.strict)?.0),
            (None, Some(_)) => return Err(CliError::usage("--baseline with --whole needs --train-data")),
            (None, None) => None,
        };
        (events, train)
    } else {
        let (split, _) = load_split(&args.data)?;
        (split.test, Some(split.train))
    };
    let report = evaluate_stream(&model, &test)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut rows = vec![json!({
        "method": "proposed",
        "accuracy": report.accuracy,
        "online_accuracy": report.online_accuracy,
        "n_events": report.n_events,
    })];
    if let Some(length) = args.baseline {
        let train = train.expect("training events are loaded whenever a baseline is requested");
        let counts = baseline_fixed_window(&train, &test, length, model.config.smoothing)?;
        rows.push(json!({
            "method": "baseline",
            "history_events": length,
            "accuracy": accuracy(&counts)?,
            "n_events": counts.total,
        }));
    }
    if let Some(path) = &args.confusion {
        write_file(path, &report.counts.to_csv())?;
    }
    print_stdout(&to_json(&json!({
        "schema_version": REPORT_SCHEMA_VERSION,
        "rows": rows,
        "report": report,
    })))
}

pub fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let grid = parse_list(&args.grid, "--grid")?;
    let config = load_config(&args.config)?;
    let (split, _) = load_split(&args.data)?;
    let parameter = match args.param {
        SweepParam::N => SweepParameter::NPreceding,
        SweepParam::Alpha => SweepParameter::Alpha,
    };
    let scored = match args.on {
        SweepOn::Validation => &split.validation,
        SweepOn::Test => &split.test,
    };
    let report = eval::sweep(parameter, &grid, &split.train, &split.validation, scored, &config)?;
    eprintln!("best {} = {}", parameter.name(), report.best);
    print_stdout(&report.to_csv())
}

pub fn synth(args: SynthArgs) -> Result<(), CliError> {
    let spec: GeneratorSpec = toml::from_str(&read_text(&args.spec)?)
        .map_err(|e| CliError::new(Status::Data, format!("{}: {e}", args.spec.display())))?;
    let trace = generate_synthetic(&spec, args.seed)?;
    let text = render_events(&trace.events);
    if args.out == "-" {
        print_stdout(&text)?;
    } else {
        write_file(Path::new(&args.out), &text)?;
    }
    if let Some(path) = &args.truth {
        write_file(path, &to_json(&trace.activities))?;
    }
    Ok(())
}
