//! Probabilistic model types and the versioned model file.
//!
//! The trained artifact is one level of hierarchy over three abstract states
//! per activity class: a begin detector, an activity body model, and an end
//! detector, each a small discrete [`Hmm`]. A per-class duration histogram is
//! used to accept or reject a finished segment.

mod duration;
mod hmm;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ActivityClassSet, ObservationKey, SensorVocabulary};

pub use duration::DurationDistribution;
pub use hmm::{argmax, log_sum_exp, FilterState, Hmm, HmmTables, STOCHASTIC_TOL};

pub const MODEL_FORMAT: &str = "activity-hhmm-model";
pub const MODEL_SCHEMA_VERSION: u32 = 1;

/// The duration thresholds swept during calibration.
pub const DEFAULT_ALPHA_GRID: [f64; 5] = [0.02, 0.04, 0.06, 0.08, 0.10];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("all states assign zero probability to observation {t}")]
    ZeroLikelihood { t: usize },
    #[error("observation symbol {symbol} out of range for {n_symbols} symbols")]
    ObservationOutOfRange { symbol: usize, n_symbols: usize },
    #[error("empty observation sequence")]
    EmptySequence,
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("model file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("model file {path}: unsupported schema ({detail})")]
    SchemaVersionMismatch { path: PathBuf, detail: String },
}

/// Knobs for training and recognition. Every field has a default, so a config
/// file only needs the values it changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Events of detector context for begin and end detection.
    pub n_preceding: usize,
    /// Minimum duration likelihood for a segment to keep its winning class.
    pub alpha: f64,
    /// Additive pseudo-count used in every probability estimate.
    pub smoothing: f64,
    /// Hidden states per sub-model.
    pub k_states: usize,
    /// Per-event log-likelihood (plus log prior) at which a begin fires.
    pub begin_threshold: f64,
    /// Per-event log-likelihood at which an end fires.
    pub end_threshold: f64,
    pub n_duration_bins: usize,
    pub unk_enabled: bool,
    pub observation: ObservationKey,
    /// Segments longer than this are closed and flagged as forced.
    pub max_segment_duration_s: f64,
    /// Whether `train_full` tunes thresholds and alpha on the validation split.
    pub calibrate: bool,
    pub alpha_grid: Vec<f64>,
    /// Candidate classes; `None` uses every label seen in training.
    pub classes: Option<Vec<String>>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_preceding: 3,
            alpha: 0.08,
            smoothing: 1.0,
            k_states: 4,
            begin_threshold: -3.0,
            end_threshold: -3.0,
            n_duration_bins: 10,
            unk_enabled: true,
            observation: ObservationKey::default(),
            max_segment_duration_s: 24.0 * 3600.0,
            calibrate: true,
            alpha_grid: DEFAULT_ALPHA_GRID.to_vec(),
            classes: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.n_preceding < 1 {
            return bad("n_preceding must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.smoothing > 0.0 && self.smoothing.is_finite()) {
            return bad("smoothing must be positive");
        }
        if self.k_states < 1 {
            return bad("k_states must be at least 1");
        }
        if self.n_duration_bins < 1 {
            return bad("n_duration_bins must be at least 1");
        }
        if self.begin_threshold.is_nan() || self.end_threshold.is_nan() {
            return bad("thresholds must not be NaN");
        }
        if !(self.max_segment_duration_s > 0.0) {
            return bad("max_segment_duration_s must be positive");
        }
        if self.alpha_grid.is_empty() || self.alpha_grid.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad("alpha_grid must be a non-empty list of values in [0, 1]");
        }
        Ok(())
    }
}

/// Trained recognizer: per-class begin, activity and end models plus duration
/// histograms. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct HhmmModel {
    pub classes: ActivityClassSet,
    pub vocabulary: SensorVocabulary,
    pub begin_hmms: Vec<Hmm>,
    pub activity_hmms: Vec<Hmm>,
    pub end_hmms: Vec<Hmm>,
    pub durations: Vec<DurationDistribution>,
    pub class_prior: Vec<f64>,
    pub config: ModelConfig,
    log_prior: Vec<f64>,
}

impl HhmmModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        classes: ActivityClassSet,
        vocabulary: SensorVocabulary,
        begin_hmms: Vec<Hmm>,
        activity_hmms: Vec<Hmm>,
        end_hmms: Vec<Hmm>,
        durations: Vec<DurationDistribution>,
        class_prior: Vec<f64>,
        config: ModelConfig,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let n = classes.n_activities();
        if n == 0 {
            return Err(ModelError::InvariantViolation("model has no activity classes".into()));
        }
        for (what, len) in [
            ("begin models", begin_hmms.len()),
            ("activity models", activity_hmms.len()),
            ("end models", end_hmms.len()),
            ("duration histograms", durations.len()),
            ("class prior", class_prior.len()),
        ] {
            if len != n {
                return Err(ModelError::InvariantViolation(format!("{len} {what} for {n} classes")));
            }
        }
        let v = vocabulary.len();
        for hmm in begin_hmms.iter().chain(&activity_hmms).chain(&end_hmms) {
            if hmm.n_symbols() != v {
                return Err(ModelError::InvariantViolation(format!(
                    "sub-model has {} symbols, vocabulary has {v}",
                    hmm.n_symbols()
                )));
            }
        }
        for d in &durations {
            d.validate()?;
        }
        if class_prior.iter().any(|p| !(*p >= 0.0)) || (class_prior.iter().sum::<f64>() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(ModelError::InvariantViolation("class prior is not a distribution".into()));
        }
        let log_prior = class_prior.iter().map(|p| p.ln()).collect();
        Ok(Self {
            classes,
            vocabulary,
            begin_hmms,
            activity_hmms,
            end_hmms,
            durations,
            class_prior,
            config,
            log_prior,
        })
    }

    /// Number of activity classes (excluding Other).
    pub fn n_classes(&self) -> usize {
        self.classes.n_activities()
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    /// Same model with a different config; thresholds and alpha are the only
    /// fields that matter after training.
    pub fn with_config(&self, config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut m = self.clone();
        m.config = config;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        let file = ModelFileRef {
            format: MODEL_FORMAT,
            schema_version: MODEL_SCHEMA_VERSION,
            config: &self.config,
            vocabulary: VocabularyFile {
                key: self.vocabulary.key(),
                unk: self.vocabulary.unk_enabled(),
                tokens: self.vocabulary.known_tokens().to_vec(),
            },
            classes: &self.classes,
            class_prior: &self.class_prior,
            begin_hmms: &self.begin_hmms,
            activity_hmms: &self.activity_hmms,
            end_hmms: &self.end_hmms,
            durations: &self.durations,
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self, ModelError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ModelError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?;
        let mismatch = |detail: String| ModelError::SchemaVersionMismatch {
            path: path.to_path_buf(),
            detail,
        };
        if value.get("format").and_then(|f| f.as_str()) != Some(MODEL_FORMAT) {
            return Err(mismatch(format!("missing or unknown format tag, expected {MODEL_FORMAT:?}")));
        }
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_SCHEMA_VERSION as u64 => {}
            other => return Err(mismatch(format!("schema_version {other:?}, expected {MODEL_SCHEMA_VERSION}"))),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| mismatch(e.to_string()))?;
        let hmms = |tables: Vec<HmmTables>| tables.into_iter().map(Hmm::from_tables).collect::<Result<Vec<_>, _>>();
        let vocabulary = SensorVocabulary::from_tokens(file.vocabulary.tokens, file.vocabulary.key, file.vocabulary.unk);
        HhmmModel::new(
            file.classes,
            vocabulary,
            hmms(file.begin_hmms)?,
            hmms(file.activity_hmms)?,
            hmms(file.end_hmms)?,
            file.durations,
            file.class_prior,
            file.config,
        )
    }
}

#[derive(Serialize)]
struct ModelFileRef<'a> {
    format: &'static str,
    schema_version: u32,
    config: &'a ModelConfig,
    vocabulary: VocabularyFile,
    classes: &'a ActivityClassSet,
    class_prior: &'a [f64],
    begin_hmms: &'a [Hmm],
    activity_hmms: &'a [Hmm],
    end_hmms: &'a [Hmm],
    durations: &'a [DurationDistribution],
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(dead_code)]
struct ModelFile {
    format: String,
    schema_version: u32,
    config: ModelConfig,
    vocabulary: VocabularyFile,
    classes: ActivityClassSet,
    class_prior: Vec<f64>,
    begin_hmms: Vec<HmmTables>,
    activity_hmms: Vec<HmmTables>,
    end_hmms: Vec<HmmTables>,
    durations: Vec<DurationDistribution>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    key: ObservationKey,
    unk: bool,
    /// Known tokens in index order; UNK, when enabled, is the next index.
    tokens: Vec<String>,
}

pub fn save_model(model: &HhmmModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<HhmmModel, ModelError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    HhmmModel::from_json(&text, path)
}
