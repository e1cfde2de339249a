mod commands;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use exit::CliError;

#[derive(Parser, Debug)]
#[command(name = "activity-hhmm", version, about = "Online activity recognition over smart-home sensor event streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model from an annotated event log.
    Train(TrainArgs),
    /// Recognize activities on an event stream, one JSON line per event.
    Stream(StreamArgs),
    /// Score a model on an annotated event log.
    Eval(EvalArgs),
    /// Retrain or relabel across a grid of one parameter; CSV on stdout.
    Sweep(SweepArgs),
    /// Generate a labeled synthetic event log.
    Synth(SynthArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with model settings; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_preceding: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub k_states: Option<usize>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub begin_threshold: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub end_threshold: Option<f64>,
    #[arg(long)]
    pub duration_bins: Option<usize>,
    #[arg(long)]
    pub max_segment_duration: Option<f64>,
    /// Keep the configured thresholds and alpha instead of tuning them on the validation split.
    #[arg(long)]
    pub no_calibrate: bool,
    /// Reject unseen observations instead of mapping them to the unknown symbol.
    #[arg(long)]
    pub no_unk: bool,
    #[arg(long, value_enum)]
    pub observation: Option<Observation>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum Observation {
    Sensor,
    SensorValue,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Annotated event log.
    #[arg(long)]
    pub data: PathBuf,
    /// Train, validation and test fractions, chronological.
    #[arg(long, default_value = "0.7,0.1,0.2")]
    pub split: String,
    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Where to write the model file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct StreamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Event log to read; standard input when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// File to write records to; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Evaluate the whole file rather than its test split.
    #[arg(long)]
    pub whole: bool,
    /// Also score the fixed-length baseline with this many events of history.
    #[arg(long)]
    pub baseline: Option<usize>,
    /// Training log for the baseline when --whole is given.
    #[arg(long)]
    pub train_data: Option<PathBuf>,
    /// Write the confusion matrix of the proposed method as CSV.
    #[arg(long)]
    pub confusion: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    N,
    Alpha,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOn {
    Validation,
    Test,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated grid, e.g. 2,3,4,5,6.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: String,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Split each grid point is scored on.
    #[arg(long, value_enum, default_value = "validation")]
    pub on: SweepOn,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// TOML generator spec.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Output log, or - for standard output.
    #[arg(long)]
    pub out: String,
    /// Also write the planted activities as JSON.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<(), CliError> = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Stream(a) => commands::stream(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
