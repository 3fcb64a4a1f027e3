//! The tiny end-to-end gradient-check instance shared by tests and the CLI.

use rand::Rng;

use crate::data::{EmbeddingTable, ExampleInput, Sequence, PAD};
use crate::error::{Error, Result};
use crate::model::forward::{candidate_loss, forward, Embedder};
use crate::model::params::{parameter_names, BoundParams, Dims, ModelParams, Variant};
use crate::rng::{indexed_substream, Stream};
use crate::scalar::Scalar;
use crate::tensor::{GradCheck, GradientFault, Matrix, Tape};

pub const TINY_EMBED: usize = 3;
pub const TINY_HIDDEN: usize = 4;
pub const TINY_VOCAB: usize = 12;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
pub const GRADCHECK_EPS: f64 = 1e-5;

/// Half-width of the uniform draw for every weight except `score.weight`.
const WEIGHT_RANGE: f64 = 1.5;
/// Score margin of the gold candidate over the other one.
const SCORE_GAP: f64 = 15.0;
/// Minimum squared sine between the two candidate representations.
const MIN_SEPARATION: f64 = 1e-12;

/// Two sentences of 1..=4 tokens, a 3-token question and two distinct
/// options of 1..=3 tokens, with d=3 and l=4.
///
/// Central differences at eps=1e-5 carry an absolute noise of roughly
/// ulp(loss)/eps times the internal sensitivities, so the instance is put at a
/// confident point: `score.weight` is orthogonal to the non-gold candidate's
/// representation and gives the gold one a score of `SCORE_GAP`. Both noise
/// and gradients then scale with the loss, and most entries stay above the
/// 1e-8 floor of the relative error.
#[derive(Clone, Debug)]
pub struct TinyInstance<T> {
    pub variant: Variant,
    pub input: ExampleInput,
    pub embeddings: EmbeddingTable<T>,
    pub values: Vec<Matrix<T>>,
    pub gold: usize,
}

fn tokens<R: Rng>(rng: &mut R, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| rng.gen_range(PAD + 1..TINY_VOCAB))
        .collect()
}

fn tiny_input<R: Rng>(rng: &mut R) -> ExampleInput {
    let sentences = (0..2)
        .map(|_| {
            let n = rng.gen_range(1..=4);
            Sequence::unpadded(tokens(rng, n))
        })
        .collect();
    let question = Sequence::unpadded(tokens(rng, 3));
    let mut options: Vec<Sequence> = Vec::with_capacity(2);
    while options.len() < 2 {
        let n = rng.gen_range(1..=3);
        let o = Sequence::unpadded(tokens(rng, n));
        if !options.contains(&o) {
            options.push(o);
        }
    }
    ExampleInput {
        sentences,
        question,
        options,
    }
}

/// Redraws allowed when the option path is dead (e.g. every match unit is
/// clipped by the ReLU) and both candidates share one representation.
const MAX_DRAWS: u32 = 16;

impl<T: Scalar> TinyInstance<T> {
    pub fn new(variant: Variant, seed: u64) -> Result<Self> {
        for draw in 1..=MAX_DRAWS {
            if let Some(inst) = Self::draw(variant, seed, draw)? {
                return Ok(inst);
            }
        }
        Err(Error::Validation(format!(
            "tiny instance {seed}: candidate representations stay parallel"
        )))
    }

    fn draw(variant: Variant, seed: u64, draw: u32) -> Result<Option<Self>> {
        let mut rng = indexed_substream(seed, Stream::Synthetic, draw);
        let input = tiny_input(&mut rng);
        let mut table = Matrix::random_uniform(TINY_EMBED, TINY_VOCAB, -1.0, 1.0, &mut rng);
        for r in 0..TINY_EMBED {
            table[(r, PAD)] = T::zero();
        }
        let embeddings = EmbeddingTable::new(table, false);

        let shapes = ModelParams::<T>::init(Dims::new(TINY_EMBED, TINY_HIDDEN)?, variant, seed)?;
        let mut values: Vec<Matrix<T>> = shapes
            .named_tensors()
            .into_iter()
            .map(|(_, t)| {
                Matrix::random_uniform(
                    t.value.rows(),
                    t.value.cols(),
                    -WEIGHT_RANGE,
                    WEIGHT_RANGE,
                    &mut rng,
                )
            })
            .collect();
        let score_idx = values.len() - 1;

        let mut inst = TinyInstance {
            variant,
            input,
            embeddings,
            values: values.clone(),
            gold: 0,
        };
        // Candidate representations, one coordinate at a time.
        let mut reps = vec![vec![0.0; TINY_HIDDEN]; 2];
        for j in 0..TINY_HIDDEN {
            let mut basis = Matrix::zeros(TINY_HIDDEN, 1);
            basis[(j, 0)] = T::one();
            inst.values[score_idx] = basis;
            for (k, s) in inst.scores()?.into_iter().enumerate() {
                reps[k][j] = s.as_f64();
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let gold = usize::from(dot(&reps[1], &reps[1]) > dot(&reps[0], &reps[0]));
        let (g, o) = (&reps[gold], &reps[1 - gold]);
        let proj = dot(g, o) / dot(o, o);
        let mut w: Vec<f64> = g.iter().zip(o).map(|(a, b)| a - proj * b).collect();
        let along = dot(&w, g);
        if along.is_nan() || along <= MIN_SEPARATION * dot(g, g) {
            return Ok(None);
        }
        w.iter_mut().for_each(|x| *x *= SCORE_GAP / along);
        values[score_idx] = Matrix::column_vector(w.into_iter().map(T::lit).collect());
        inst.values = values;
        inst.gold = gold;
        Ok(Some(inst))
    }

    /// Candidate scores at the current values.
    pub fn scores(&self) -> Result<Vec<T>> {
        let mut tape = Tape::new();
        let vars = self
            .values
            .iter()
            .map(|m| tape.leaf(m.clone(), false))
            .collect();
        let bound = BoundParams::from_vars(vars)?;
        let mut emb = Embedder::new(&self.embeddings);
        let out = forward(self.variant, &mut tape, &bound, &mut emb, &self.input)?;
        Ok(tape.value(out.scores).data().to_vec())
    }

    /// Max relative error per parameter tensor, in [`parameter_names`] order.
    pub fn check(&self, eps: T, fault: Option<GradientFault>) -> Result<Vec<(String, T)>> {
        let mut check = GradCheck::new(eps);
        check.fault = fault;
        let report = check.run(&self.values, |tape, vars| {
            let bound = BoundParams::from_vars(vars.to_vec())?;
            let mut emb = Embedder::new(&self.embeddings);
            let out = forward(self.variant, tape, &bound, &mut emb, &self.input)?;
            candidate_loss(tape, out.scores, self.gold)
        })?;
        Ok(parameter_names()
            .into_iter()
            .zip(report.per_input)
            .collect())
    }
}

/// Worst error per parameter tensor over `seeds` tiny instances.
pub fn gradcheck_seeds<T: Scalar>(
    variant: Variant,
    seeds: impl IntoIterator<Item = u64>,
    eps: T,
    fault: Option<GradientFault>,
) -> Result<Vec<(String, T)>> {
    let mut worst: Vec<(String, T)> = parameter_names()
        .into_iter()
        .map(|n| (n, T::zero()))
        .collect();
    for seed in seeds {
        let errs = TinyInstance::<T>::new(variant, seed)?.check(eps, fault)?;
        for (w, (_, e)) in worst.iter_mut().zip(errs) {
            w.1 = w.1.max(e);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gold_leads_by_the_gap() {
        for variant in Variant::ALL {
            let inst = TinyInstance::<f64>::new(variant, 3).unwrap();
            let s = inst.scores().unwrap();
            assert!((s[inst.gold] - SCORE_GAP).abs() < 1e-9, "{s:?}");
            assert!(s[1 - inst.gold].abs() < 1e-9, "{s:?}");
            assert_ne!(inst.input.options[0], inst.input.options[1]);
        }
    }
}
