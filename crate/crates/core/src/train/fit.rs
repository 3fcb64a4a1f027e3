use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batches, EmbeddingTable, EncodedExample, ExampleInput, Vocabulary};
use crate::error::{Error, Result};
use crate::model::{candidate_loss, forward, parameter_names, Embedder, ModelParams};
use crate::rng::{keyed_substream, Stream};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tape};
use crate::train::adam::{adam_step, clip_global_norm, AdamParam, AdamState};
use crate::train::checkpoint::{Checkpoint, EMBEDDINGS_TENSOR};
use crate::train::config::TrainConfig;
use crate::train::eval::evaluate;

/// One line of the metrics log. `wall_seconds` counts from the start of
/// training; `dev_accuracy` is absent when there is no dev set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Highest dev accuracy, earliest epoch on ties. Without a dev set this
    /// is the final epoch.
    pub best: Checkpoint<T>,
    /// 0 means the initial parameters.
    pub best_epoch: usize,
    pub last: Checkpoint<T>,
    pub metrics: Vec<EpochMetrics>,
}

/// Loss and gradients of a single example.
#[derive(Clone, Debug)]
pub struct ExampleGrads<T> {
    pub loss: T,
    /// One per model tensor, in serialization order.
    pub params: Vec<Matrix<T>>,
    /// Word-vector gradient by vocabulary index; empty for frozen vectors.
    pub embeddings: BTreeMap<usize, Vec<T>>,
}

/// Forward and backward for one example on a private tape.
pub fn example_grads<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    input: &ExampleInput,
    gold: usize,
    dropout: Option<(f64, rand_chacha::ChaCha8Rng)>,
) -> Result<ExampleGrads<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, true);
    let mut emb = Embedder::new(embeddings);
    if let Some((p, rng)) = dropout {
        emb = emb.with_dropout(p, rng);
    }
    let out = forward(params.variant, &mut tape, &bound, &mut emb, input)?;
    let loss = candidate_loss(&mut tape, out.scores, gold)?;
    tape.backward(loss)?;
    let grads = bound
        .vars
        .iter()
        .map(|&v| {
            let (r, c) = tape.shape(v);
            tape.grad(v).cloned().unwrap_or_else(|| Matrix::zeros(r, c))
        })
        .collect();
    Ok(ExampleGrads {
        loss: tape.value(loss)[(0, 0)],
        params: grads,
        embeddings: emb.column_grads(&tape),
    })
}

fn snapshot<T: Scalar>(
    params: &ModelParams<T>,
    embeddings: &EmbeddingTable<T>,
    vocab: &Vocabulary,
    config: &TrainConfig,
) -> Checkpoint<T> {
    Checkpoint {
        params: params.clone(),
        embeddings: embeddings.clone(),
        vocab: vocab.clone(),
        config: config.clone(),
    }
}

/// Mini-batch Adam on the mean candidate loss.
///
/// Examples inside a batch run in parallel on separate tapes; their
/// gradients are summed in batch order, so results do not depend on the
/// thread count. `on_epoch` sees each metrics record as soon as it exists.
pub fn train<T: Scalar>(
    config: &TrainConfig,
    vocab: &Vocabulary,
    embeddings: EmbeddingTable<T>,
    train_set: &[EncodedExample],
    dev_set: &[EncodedExample],
    mut on_epoch: impl FnMut(&EpochMetrics) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let dims = config.dims()?;
    if (embeddings.dim(), embeddings.vocab_size()) != (dims.embed, vocab.len()) {
        return Err(Error::Mismatch(format!(
            "embeddings are {}x{} but d={} and the vocabulary has {} entries",
            embeddings.dim(),
            embeddings.vocab_size(),
            dims.embed,
            vocab.len()
        )));
    }
    let mut embeddings = embeddings;
    embeddings.set_trainable(config.trainable_embeddings);
    embeddings.clear_pad();
    let mut params = ModelParams::<T>::init(dims, config.variant, config.seed)?;

    let mut names = parameter_names();
    let mut shapes: Vec<(usize, usize)> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    if embeddings.trainable() {
        names.push(EMBEDDINGS_TENSOR.into());
        shapes.push(embeddings.vectors.shape());
    }
    let mut adam = AdamState::new(shapes.iter().copied());
    let mut grads: Vec<Matrix<T>> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();

    let started = Instant::now();
    let mut best = snapshot(&params, &embeddings, vocab, config);
    let mut best_epoch = 0;
    let mut best_acc: Option<f64> = None;
    let mut metrics = Vec::with_capacity(config.epochs);
    let lr = T::lit(config.lr);
    let clip = T::lit(config.clip);
    let mut step: u64 = 0;

    for epoch in 1..=config.epochs {
        let epoch_u32 = u32::try_from(epoch).unwrap_or(u32::MAX);
        let batches = make_batches(train_set, config.batch_size, config.seed, epoch_u32)?;
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            step += 1;
            let results: Vec<Result<ExampleGrads<T>>> = batch
                .items
                .par_iter()
                .enumerate()
                .map(|(i, item)| {
                    let dropout = (config.dropout > 0.0).then(|| {
                        let idx = u32::try_from(i).unwrap_or(u32::MAX);
                        (
                            config.dropout,
                            keyed_substream(config.seed, Stream::Dropout, step, idx),
                        )
                    });
                    example_grads(&params, &embeddings, &item.input(), item.gold, dropout)
                })
                .collect();

            grads.iter_mut().for_each(|g| g.fill(T::zero()));
            let mut batch_loss = T::zero();
            for r in results {
                let ex = r?;
                batch_loss = batch_loss + ex.loss;
                for (g, d) in grads.iter_mut().zip(&ex.params) {
                    g.add_assign(d);
                }
                if embeddings.trainable() {
                    let table = grads.last_mut().expect("embedding gradient slot");
                    for (tok, col) in &ex.embeddings {
                        for (r, &x) in col.iter().enumerate() {
                            table[(r, *tok)] = table[(r, *tok)] + x;
                        }
                    }
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch}, batch {b}"
                )));
            }
            loss_sum += batch_loss.as_f64();
            let scale = T::one() / T::lit(batch.len() as f64);
            grads.iter_mut().for_each(|g| g.scale_in_place(scale));
            let mut views: Vec<&mut Matrix<T>> = grads.iter_mut().collect();
            clip_global_norm(&mut views, clip);

            let mut targets: Vec<&mut Matrix<T>> = params
                .tensors_mut()
                .into_iter()
                .map(|t| &mut t.value)
                .collect();
            if embeddings.trainable() {
                targets.push(&mut embeddings.vectors.value);
            }
            let mut update: Vec<AdamParam<'_, T>> = targets
                .into_iter()
                .zip(&grads)
                .zip(&names)
                .map(|((value, grad), name)| AdamParam { name, value, grad })
                .collect();
            adam_step(&mut update, &mut adam, lr)?;
            if embeddings.trainable() {
                embeddings.clear_pad();
            }
        }

        let dev_accuracy = if dev_set.is_empty() {
            None
        } else {
            Some(evaluate(&params, &embeddings, dev_set)?.accuracy())
        };
        let improved = match (dev_accuracy, best_acc) {
            (None, _) => true,
            (Some(a), None) => {
                best_acc = Some(a);
                true
            }
            (Some(a), Some(b)) if a > b => {
                best_acc = Some(a);
                true
            }
            _ => false,
        };
        if improved {
            best = snapshot(&params, &embeddings, vocab, config);
            best_epoch = epoch;
        }
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            dev_accuracy,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&m)?;
        metrics.push(m);
    }

    Ok(TrainOutcome {
        last: snapshot(&params, &embeddings, vocab, config),
        best,
        best_epoch,
        metrics,
    })
}
