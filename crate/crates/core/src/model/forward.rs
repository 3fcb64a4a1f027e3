use std::borrow::Cow;
use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EmbeddingTable, ExampleInput, Sequence, UNK};
use crate::error::{Error, Result};
use crate::model::params::{BoundParams, Variant};
use crate::scalar::Scalar;
use crate::tensor::{BiLstmVars, Matrix, Tape, Var};

/// Looks up word vectors for token sequences and remembers where they went,
/// so trainable embeddings can receive their (sparse) gradient afterwards.
pub struct Embedder<'a, T> {
    table: &'a EmbeddingTable<T>,
    gathered: Vec<(Var, Vec<usize>)>,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a, T: Scalar> Embedder<'a, T> {
    pub fn new(table: &'a EmbeddingTable<T>) -> Self {
        Embedder {
            table,
            gathered: Vec::new(),
            dropout: None,
        }
    }

    /// Inverted dropout with rate `p` on every embedded input.
    pub fn with_dropout(mut self, p: f64, rng: ChaCha8Rng) -> Self {
        if p > 0.0 {
            self.dropout = Some((p, rng));
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    /// d×T matrix of word vectors for `tokens`.
    pub fn embed(&mut self, tape: &mut Tape<T>, tokens: &[usize]) -> Result<Var> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.table.vocab_size()) {
            return Err(Error::Validation(format!(
                "token index {bad} outside a vocabulary of {}",
                self.table.vocab_size()
            )));
        }
        let value = self.table.gather(tokens);
        let x = if self.table.trainable() {
            let v = tape.leaf(value, true);
            self.gathered.push((v, tokens.to_vec()));
            v
        } else {
            tape.constant(value)
        };
        match &mut self.dropout {
            None => Ok(x),
            Some((p, rng)) => {
                let keep = 1.0 - *p;
                let scale = T::lit(1.0 / keep);
                let (r, c) = tape.shape(x);
                let mask = Matrix::from_vec(
                    r,
                    c,
                    (0..r * c)
                        .map(|_| {
                            if rng.gen::<f64>() < keep {
                                scale
                            } else {
                                T::zero()
                            }
                        })
                        .collect(),
                )?;
                let m = tape.constant(mask);
                tape.mul(x, m)
            }
        }
    }

    /// Gradient per vocabulary index, summed over every gathered position.
    pub fn column_grads(&self, tape: &Tape<T>) -> BTreeMap<usize, Vec<T>> {
        let mut out: BTreeMap<usize, Vec<T>> = BTreeMap::new();
        for (var, tokens) in &self.gathered {
            let Some(g) = tape.grad(*var) else { continue };
            for (c, &tok) in tokens.iter().enumerate() {
                let col = out.entry(tok).or_insert_with(|| vec![T::zero(); g.rows()]);
                for (r, x) in col.iter_mut().enumerate() {
                    *x = *x + g[(r, c)];
                }
            }
        }
        out
    }

    /// Adds the gradient reaching each gathered column into `grad` (d×|V|).
    pub fn scatter_grads(&self, tape: &Tape<T>, grad: &mut Matrix<T>) {
        for (var, tokens) in &self.gathered {
            let Some(g) = tape.grad(*var) else { continue };
            for (c, &tok) in tokens.iter().enumerate() {
                for r in 0..g.rows() {
                    grad[(r, tok)] = grad[(r, tok)] + g[(r, c)];
                }
            }
        }
    }
}

/// Encodes a d×T embedded sequence with the shared bi-directional encoder,
/// giving l×T.
pub fn encode_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    mask: &[bool],
    p: &BoundParams,
) -> Result<Var> {
    tape.bilstm(x, p.encoder, Some(mask))
}

/// Attends from every passage position over the other sequence. Returns the
/// S×P weight matrix G (columns are distributions over unmasked rows) and
/// the l×P aligned summary `h_other · G`.
pub fn attention_match<T: Scalar>(
    tape: &mut Tape<T>,
    h_p: Var,
    h_other: Var,
    mask_other: &[bool],
    w: Var,
    b: Var,
) -> Result<(Var, Var)> {
    let projected = tape.matmul(w, h_other)?;
    let projected = tape.add_bias(projected, b)?;
    let projected_t = tape.transpose(projected);
    let logits = tape.matmul(projected_t, h_p)?;
    let g = tape.softmax_columns_row_masked(logits, mask_other)?;
    let aligned = tape.matmul(h_other, g)?;
    Ok((g, aligned))
}

/// `ReLU(W [aligned − h_p ; aligned ⊙ h_p] + b)`, l×P.
pub fn match_branch<T: Scalar>(
    tape: &mut Tape<T>,
    h_p: Var,
    aligned: Var,
    w: Var,
    b: Var,
) -> Result<Var> {
    let diff = tape.sub(aligned, h_p)?;
    let prod = tape.mul(aligned, h_p)?;
    let features = tape.concat_rows(diff, prod)?;
    let m = tape.matmul(w, features)?;
    let m = tape.add_bias(m, b)?;
    Ok(tape.relu(m))
}

#[derive(Clone, Copy, Debug)]
pub struct CoMatchResult {
    /// 2l×P stacked matching states.
    pub c: Var,
    pub m_q: Var,
    pub m_a: Var,
}

pub fn co_match<T: Scalar>(
    tape: &mut Tape<T>,
    h_p: Var,
    aligned_q: Var,
    aligned_a: Var,
    p: &BoundParams,
) -> Result<CoMatchResult> {
    let m_q = match_branch(tape, h_p, aligned_q, p.match_w, p.match_b)?;
    let m_a = match_branch(tape, h_p, aligned_a, p.match_w, p.match_b)?;
    let c = tape.concat_rows(m_q, m_a)?;
    Ok(CoMatchResult { c, m_q, m_a })
}

fn recurrent_pool<T: Scalar>(
    tape: &mut Tape<T>,
    states: Var,
    mask: &[bool],
    w: BiLstmVars,
) -> Result<Var> {
    let h = tape.bilstm(states, w, Some(mask))?;
    tape.row_max_pool(h, Some(mask))
}

/// Bi-LSTM over one sentence's matching states then max-pooling over its
/// unmasked positions, giving an l×1 vector.
pub fn sentence_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    c: Var,
    mask: &[bool],
    p: &BoundParams,
) -> Result<Var> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::DegeneratePool {
            op: "sentence_aggregate",
        });
    }
    recurrent_pool(tape, c, mask, p.sentence_lstm)
}

/// Stacks sentence vectors as columns, runs the document Bi-LSTM and
/// max-pools to one l×1 vector.
pub fn document_aggregate<T: Scalar>(
    tape: &mut Tape<T>,
    sentences: &[Var],
    p: &BoundParams,
) -> Result<Var> {
    if sentences.is_empty() {
        return Err(Error::EmptySequence("document_aggregate"));
    }
    let stacked = tape.concat_cols(sentences)?;
    let mask = vec![true; sentences.len()];
    recurrent_pool(tape, stacked, &mask, p.document_lstm)
}

/// Attention matrices produced while scoring one candidate, one entry per
/// passage segment (a sentence, or the whole passage in the flat variant).
/// `g_q` is empty for the single-match variant, where `g_a` attends over
/// the question followed by the answer.
#[derive(Clone, Debug, Default)]
pub struct CandidateAttention {
    pub g_q: Vec<Var>,
    pub g_a: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    /// K×1 candidate scores.
    pub scores: Var,
    pub attention: Vec<CandidateAttention>,
}

/// A sequence with at least one real token; an empty one becomes a lone UNK.
fn nonempty(seq: &Sequence) -> Cow<'_, Sequence> {
    if seq.real_len() == 0 {
        Cow::Owned(Sequence::unpadded(vec![UNK]))
    } else {
        Cow::Borrowed(seq)
    }
}

struct Encoded {
    h: Var,
    mask: Vec<bool>,
}

fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    emb: &mut Embedder<'_, T>,
    seq: &Sequence,
    p: &BoundParams,
) -> Result<Encoded> {
    let x = emb.embed(tape, &seq.tokens)?;
    let h = encode_sequence(tape, x, &seq.mask, p)?;
    Ok(Encoded {
        h,
        mask: seq.mask.clone(),
    })
}

fn score<T: Scalar>(tape: &mut Tape<T>, h_t: Var, p: &BoundParams) -> Result<Var> {
    let w_t = tape.transpose(p.score_w);
    tape.matmul(w_t, h_t)
}

fn check_input(input: &ExampleInput) -> Result<()> {
    if input.options.is_empty() {
        return Err(Error::Validation("no candidate answers".into()));
    }
    if input.sentences.is_empty() {
        return Err(Error::EmptySequence("passage"));
    }
    if let Some(i) = input.sentences.iter().position(|s| s.real_len() == 0) {
        return Err(Error::Validation(format!("sentence {i} has no tokens")));
    }
    Ok(())
}

/// Scores every candidate answer with the hierarchical co-matching model.
/// Question and sentence encodings, question attention and the question
/// matching branch are computed once and shared by all candidates.
pub fn score_candidates<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    emb: &mut Embedder<'_, T>,
    input: &ExampleInput,
) -> Result<Forward> {
    check_input(input)?;
    let q = encode(tape, emb, &nonempty(&input.question), p)?;
    let mut sentences = Vec::with_capacity(input.sentences.len());
    for s in &input.sentences {
        let enc = encode(tape, emb, s, p)?;
        let (g_q, aligned_q) = attention_match(tape, enc.h, q.h, &q.mask, p.attn_w, p.attn_b)?;
        let m_q = match_branch(tape, enc.h, aligned_q, p.match_w, p.match_b)?;
        sentences.push((enc, g_q, m_q));
    }

    let mut scores = Vec::with_capacity(input.options.len());
    let mut attention = Vec::with_capacity(input.options.len());
    for option in &input.options {
        let a = encode(tape, emb, &nonempty(option), p)?;
        let mut att = CandidateAttention::default();
        let mut pooled = Vec::with_capacity(sentences.len());
        for (enc, g_q, m_q) in &sentences {
            let (g_a, aligned_a) = attention_match(tape, enc.h, a.h, &a.mask, p.attn_w, p.attn_b)?;
            let m_a = match_branch(tape, enc.h, aligned_a, p.match_w, p.match_b)?;
            let c = tape.concat_rows(*m_q, m_a)?;
            pooled.push(sentence_aggregate(tape, c, &enc.mask, p)?);
            att.g_q.push(*g_q);
            att.g_a.push(g_a);
        }
        let h_t = document_aggregate(tape, &pooled, p)?;
        scores.push(score(tape, h_t, p)?);
        attention.push(att);
    }
    Ok(Forward {
        scores: tape.concat_rows_all(&scores)?,
        attention,
    })
}

/// Single-branch ablation: each sentence is matched against the token
/// concatenation of the question and one candidate.
pub fn single_match_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    emb: &mut Embedder<'_, T>,
    input: &ExampleInput,
) -> Result<Forward> {
    check_input(input)?;
    let sentences = input
        .sentences
        .iter()
        .map(|s| encode(tape, emb, s, p))
        .collect::<Result<Vec<_>>>()?;

    let mut scores = Vec::with_capacity(input.options.len());
    let mut attention = Vec::with_capacity(input.options.len());
    for option in &input.options {
        let joined = input.question.concat(option);
        let qa = encode(tape, emb, &nonempty(&joined), p)?;
        let mut att = CandidateAttention::default();
        let mut pooled = Vec::with_capacity(sentences.len());
        for enc in &sentences {
            let (g_a, aligned) = attention_match(tape, enc.h, qa.h, &qa.mask, p.attn_w, p.attn_b)?;
            let m_a = match_branch(tape, enc.h, aligned, p.match_w, p.match_b)?;
            pooled.push(sentence_aggregate(tape, m_a, &enc.mask, p)?);
            att.g_a.push(g_a);
        }
        let h_t = document_aggregate(tape, &pooled, p)?;
        scores.push(score(tape, h_t, p)?);
        attention.push(att);
    }
    Ok(Forward {
        scores: tape.concat_rows_all(&scores)?,
        attention,
    })
}

/// Flat ablation: co-matching over the whole passage as one sequence,
/// then two stacked Bi-LSTMs and a single max-pool.
pub fn flat_aggregate_forward<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    emb: &mut Embedder<'_, T>,
    input: &ExampleInput,
) -> Result<Forward> {
    check_input(input)?;
    let passage = input.sentences[1..]
        .iter()
        .fold(input.sentences[0].clone(), |acc, s| acc.concat(s));
    let enc = encode(tape, emb, &passage, p)?;
    let q = encode(tape, emb, &nonempty(&input.question), p)?;
    let (g_q, aligned_q) = attention_match(tape, enc.h, q.h, &q.mask, p.attn_w, p.attn_b)?;
    let m_q = match_branch(tape, enc.h, aligned_q, p.match_w, p.match_b)?;

    let mut scores = Vec::with_capacity(input.options.len());
    let mut attention = Vec::with_capacity(input.options.len());
    for option in &input.options {
        let a = encode(tape, emb, &nonempty(option), p)?;
        let (g_a, aligned_a) = attention_match(tape, enc.h, a.h, &a.mask, p.attn_w, p.attn_b)?;
        let m_a = match_branch(tape, enc.h, aligned_a, p.match_w, p.match_b)?;
        let c = tape.concat_rows(m_q, m_a)?;
        let first = tape.bilstm(c, p.sentence_lstm, Some(&enc.mask))?;
        let h_t = recurrent_pool(tape, first, &enc.mask, p.document_lstm)?;
        scores.push(score(tape, h_t, p)?);
        attention.push(CandidateAttention {
            g_q: vec![g_q],
            g_a: vec![g_a],
        });
    }
    Ok(Forward {
        scores: tape.concat_rows_all(&scores)?,
        attention,
    })
}

/// Dispatches to the forward pass of `variant`.
pub fn forward<T: Scalar>(
    variant: Variant,
    tape: &mut Tape<T>,
    p: &BoundParams,
    emb: &mut Embedder<'_, T>,
    input: &ExampleInput,
) -> Result<Forward> {
    match variant {
        Variant::Full => score_candidates(tape, p, emb, input),
        Variant::SingleMatch => single_match_forward(tape, p, emb, input),
        Variant::Flat => flat_aggregate_forward(tape, p, emb, input),
    }
}

/// Softmax cross-entropy of the gold candidate.
pub fn candidate_loss<T: Scalar>(tape: &mut Tape<T>, scores: Var, gold: usize) -> Result<Var> {
    tape.cross_entropy(scores, gold)
}

/// Index of the highest score; ties go to the lowest index.
pub fn predict<T: Scalar>(scores: &[T]) -> usize {
    crate::tensor::argmax_first(scores)
}
