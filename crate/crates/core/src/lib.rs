//! Streaming activity recognition over smart-home sensor event streams.
//!
//! The stream is segmented without a fixed-length buffer over the raw events:
//! short begin and end sensor patterns, learned per activity class, open and
//! close segments. While a segment is open each event updates a bank of
//! per-class forward filters, giving an online class estimate, and a closed
//! segment keeps its winning class only if its duration is plausible under
//! that class's empirical duration histogram.
//!
//! Modules follow the pipeline: [`ingest`] parses logs, [`model`] holds the
//! probabilistic types and model file, [`train`] estimates and calibrates a
//! model, [`infer`] runs it online, and [`eval`] scores it.

pub mod eval;
pub mod infer;
pub mod ingest;
pub mod model;
pub mod train;

pub use infer::{process_event, run_stream, Prediction, SegmentRecord, StreamState};
pub use ingest::{SensorEvent, SensorVocabulary};
pub use model::{load_model, save_model, HhmmModel, Hmm, ModelConfig};
pub use train::train_full;
