//! Optimization, evaluation, metrics and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod fit;
pub mod synthetic;

use std::io::Write;

pub use adam::{adam_step, clip_global_norm, global_norm, AdamParam, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
    EMBEDDINGS_TENSOR,
};
pub use config::{TrainConfig, CONFIG_KEYS};
pub use eval::{
    evaluate, evaluate_batched, predict_all, run_forward, score_example, Bucket, EvalReport,
};
pub use fit::{example_grads, train, EpochMetrics, ExampleGrads, TrainOutcome};
pub use synthetic::{synthetic_dataset, synthetic_vocab, SYNTHETIC_VOCAB};

use crate::error::{Error, Result};

/// Appends one metrics record as a single JSON line.
pub fn write_metrics_line(out: &mut impl Write, m: &EpochMetrics) -> Result<()> {
    let line = serde_json::to_string(m).map_err(|e| Error::Contract(e.to_string()))?;
    writeln!(out, "{line}").map_err(|e| Error::io("<metrics>", e))
}
