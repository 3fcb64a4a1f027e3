use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, EmbeddingTable, EncodedExample, ExampleInput, Subset};
use crate::error::{Error, Result};
use crate::model::{forward, predict, Embedder, Forward, ModelParams, QuestionType};
use crate::scalar::Scalar;
use crate::tensor::Tape;

/// Correct and total counts for one slice of a dataset. `accuracy` is
/// `None` for an empty slice.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub correct: usize,
    pub count: usize,
    pub accuracy: Option<f64>,
}

impl Bucket {
    fn add(&mut self, hit: bool) {
        self.count += 1;
        self.correct += usize::from(hit);
        self.accuracy = Some(self.correct as f64 / self.count as f64);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: Bucket,
    pub middle: Bucket,
    pub high: Bucket,
    /// One entry per [`QuestionType`], empty buckets included.
    pub by_type: BTreeMap<QuestionType, Bucket>,
}

impl EvalReport {
    /// Tallies `(example, predicted index)` pairs.
    pub fn from_predictions<'a>(
        items: impl IntoIterator<Item = (&'a EncodedExample, usize)>,
    ) -> Result<Self> {
        let mut report = EvalReport {
            overall: Bucket::default(),
            middle: Bucket::default(),
            high: Bucket::default(),
            by_type: QuestionType::ALL
                .into_iter()
                .map(|q| (q, Bucket::default()))
                .collect(),
        };
        for (ex, pred) in items {
            let hit = pred == ex.gold;
            report.overall.add(hit);
            match ex.subset {
                Subset::Middle => report.middle.add(hit),
                Subset::High => report.high.add(hit),
                Subset::Unknown => {}
            }
            for q in &ex.question_types {
                report.by_type.entry(*q).or_default().add(hit);
            }
        }
        if report.overall.count == 0 {
            return Err(Error::Validation("cannot evaluate an empty dataset".into()));
        }
        Ok(report)
    }

    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy.unwrap_or(0.0)
    }
}

/// Forward pass for one example with no gradient bookkeeping. The tape is
/// returned so callers can read attention maps as well as scores.
pub fn run_forward<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    input: &ExampleInput,
) -> Result<(Tape<T>, Forward)> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let mut emb = Embedder::new(embeddings);
    let out = forward(params.variant, &mut tape, &bound, &mut emb, input)?;
    Ok((tape, out))
}

pub fn score_example<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    input: &ExampleInput,
) -> Result<Vec<T>> {
    let (tape, out) = run_forward(params, embeddings, input)?;
    Ok(tape.value(out.scores).data().to_vec())
}

/// Predicted option per example, in input order. Examples are scored in
/// padded batches of `batch_size`; each example is scored independently, so
/// neither the batch size nor the thread count changes the result.
pub fn predict_all<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<Vec<usize>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let per_batch: Vec<Result<Vec<usize>>> = examples
        .par_chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&EncodedExample> = chunk.iter().collect();
            Batch::from_examples(&refs)
                .items
                .par_iter()
                .map(|item| Ok(predict(&score_example(params, embeddings, &item.input())?)))
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(examples.len());
    for b in per_batch {
        out.extend(b?);
    }
    Ok(out)
}

pub fn evaluate<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    examples: &[EncodedExample],
) -> Result<EvalReport> {
    evaluate_batched(params, embeddings, examples, 32)
}

pub fn evaluate_batched<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    examples: &[EncodedExample],
    batch_size: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty dataset".into()));
    }
    let preds = predict_all(params, embeddings, examples, batch_size)?;
    EvalReport::from_predictions(examples.iter().zip(preds))
}
