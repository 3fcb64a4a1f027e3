use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::scalar::Scalar;
use crate::tensor::{BiLstmVars, LstmVars, Matrix, Tape, Tensor, Var};

const INIT_RANGE: f64 = 0.05;
const FORGET_BIAS: f64 = 1.0;

/// Number of named parameter tensors.
pub const PARAM_TENSORS: usize = 23;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Co-matching with sentence-then-document aggregation.
    #[default]
    Full,
    /// Passage matched against the question and answer concatenated, one
    /// matching branch.
    SingleMatch,
    /// Co-matching over the whole passage with two stacked recurrent layers.
    Flat,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::SingleMatch, Variant::Flat];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::SingleMatch => "single-match",
            Variant::Flat => "flat",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant {s:?} (expected full, single-match or flat)"
                ))
            })
    }
}

/// Embedding width `embed` (d) and hidden width `hidden` (l). Each
/// recurrent direction has l/2 units.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    pub embed: usize,
    pub hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            embed: 100,
            hidden: 150,
        }
    }
}

impl Dims {
    pub fn new(embed: usize, hidden: usize) -> Result<Self> {
        if embed == 0 {
            return Err(Error::Config("embedding size must be at least 1".into()));
        }
        if hidden == 0 || !hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "hidden size must be positive and even, got {hidden}"
            )));
        }
        Ok(Dims { embed, hidden })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams<T> {
    pub w_ih: Tensor<T>,
    pub w_hh: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> LstmParams<T> {
    fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_ih = Matrix::random_uniform(4 * hidden, input, -INIT_RANGE, INIT_RANGE, rng);
        let w_hh = Matrix::random_uniform(4 * hidden, hidden, -INIT_RANGE, INIT_RANGE, rng);
        let mut bias = Matrix::zeros(4 * hidden, 1);
        for r in hidden..2 * hidden {
            bias[(r, 0)] = T::lit(FORGET_BIAS);
        }
        LstmParams {
            w_ih: Tensor::parameter(w_ih),
            w_hh: Tensor::parameter(w_hh),
            bias: Tensor::parameter(bias),
        }
    }

    pub fn input_size(&self) -> usize {
        self.w_ih.value.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams<T> {
    pub forward: LstmParams<T>,
    pub backward: LstmParams<T>,
}

impl<T: Scalar> BiLstmParams<T> {
    fn init<R: Rng>(input: usize, output: usize, rng: &mut R) -> Self {
        let forward = LstmParams::init(input, output / 2, rng);
        let backward = LstmParams::init(input, output / 2, rng);
        BiLstmParams { forward, backward }
    }
}

/// Every learnable tensor of the matcher. In the flat variant
/// `sentence_lstm` and `document_lstm` are the first and second stacked
/// layers over the whole passage.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub variant: Variant,
    pub dims: Dims,
    pub encoder: BiLstmParams<T>,
    /// l×l projection applied to question/answer states before attention.
    pub attn_w: Tensor<T>,
    pub attn_b: Tensor<T>,
    /// l×2l, shared by both matching branches.
    pub match_w: Tensor<T>,
    pub match_b: Tensor<T>,
    pub sentence_lstm: BiLstmParams<T>,
    pub document_lstm: BiLstmParams<T>,
    /// l×1 scoring vector.
    pub score_w: Tensor<T>,
}

const LSTM_PARTS: [&str; 3] = ["w_ih", "w_hh", "bias"];
const DIRECTIONS: [&str; 2] = ["forward", "backward"];
const BILSTMS: [&str; 3] = ["encoder", "sentence_lstm", "document_lstm"];

/// Parameter names in serialization order.
pub fn parameter_names() -> Vec<String> {
    let lstm = |prefix: &str| -> Vec<String> {
        DIRECTIONS
            .iter()
            .flat_map(|d| LSTM_PARTS.iter().map(move |p| format!("{prefix}.{d}.{p}")))
            .collect()
    };
    let mut names = lstm(BILSTMS[0]);
    names.extend(
        [
            "attention.weight",
            "attention.bias",
            "match.weight",
            "match.bias",
        ]
        .map(String::from),
    );
    names.extend(lstm(BILSTMS[1]));
    names.extend(lstm(BILSTMS[2]));
    names.push("score.weight".into());
    names
}

fn lstm_refs<T>(b: &BiLstmParams<T>) -> [&Tensor<T>; 6] {
    [
        &b.forward.w_ih,
        &b.forward.w_hh,
        &b.forward.bias,
        &b.backward.w_ih,
        &b.backward.w_hh,
        &b.backward.bias,
    ]
}

impl<T: Scalar> ModelParams<T> {
    pub fn init(dims: Dims, variant: Variant, seed: u64) -> Result<Self> {
        let dims = Dims::new(dims.embed, dims.hidden)?;
        let (d, l) = (dims.embed, dims.hidden);
        let mut rng = substream(seed, Stream::Init);
        let uniform = |r: usize, c: usize, rng: &mut _| {
            Tensor::parameter(Matrix::random_uniform(r, c, -INIT_RANGE, INIT_RANGE, rng))
        };
        let encoder = BiLstmParams::init(d, l, &mut rng);
        let attn_w = uniform(l, l, &mut rng);
        let attn_b = Tensor::parameter(Matrix::zeros(l, 1));
        let match_w = uniform(l, 2 * l, &mut rng);
        let match_b = Tensor::parameter(Matrix::zeros(l, 1));
        let sentence_input = match variant {
            Variant::SingleMatch => l,
            Variant::Full | Variant::Flat => 2 * l,
        };
        let sentence_lstm = BiLstmParams::init(sentence_input, l, &mut rng);
        let document_lstm = BiLstmParams::init(l, l, &mut rng);
        let score_w = uniform(l, 1, &mut rng);
        Ok(ModelParams {
            variant,
            dims,
            encoder,
            attn_w,
            attn_b,
            match_w,
            match_b,
            sentence_lstm,
            document_lstm,
            score_w,
        })
    }

    /// `(name, tensor)` pairs in serialization order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut refs: Vec<&Tensor<T>> = lstm_refs(&self.encoder).to_vec();
        refs.extend([&self.attn_w, &self.attn_b, &self.match_w, &self.match_b]);
        refs.extend(lstm_refs(&self.sentence_lstm));
        refs.extend(lstm_refs(&self.document_lstm));
        refs.push(&self.score_w);
        parameter_names().into_iter().zip(refs).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(PARAM_TENSORS);
        push_lstm_mut(&mut self.encoder, &mut out);
        out.push(&mut self.attn_w);
        out.push(&mut self.attn_b);
        out.push(&mut self.match_w);
        out.push(&mut self.match_b);
        push_lstm_mut(&mut self.sentence_lstm, &mut out);
        push_lstm_mut(&mut self.document_lstm, &mut out);
        out.push(&mut self.score_w);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.tensors_mut() {
            t.zero_grad();
        }
    }

    /// Records every tensor on `tape` as a leaf. With `trainable` false the
    /// leaves need no gradient, which is all inference wants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.leaf(t.value.clone(), trainable && t.requires_grad))
            .collect();
        BoundParams::from_vars(vars).expect("one var per named tensor")
    }

    /// Replaces every tensor value from name-keyed data, checking shapes.
    pub fn assign(&mut self, values: Vec<(String, Matrix<T>)>) -> Result<()> {
        let names = parameter_names();
        if values.len() != names.len() {
            return Err(Error::Mismatch(format!(
                "expected {} parameter tensors, found {}",
                names.len(),
                values.len()
            )));
        }
        for ((expected, t), (name, value)) in names.iter().zip(self.tensors_mut()).zip(values) {
            if *expected != name {
                return Err(Error::Mismatch(format!(
                    "expected tensor {expected}, found {name}"
                )));
            }
            if t.shape() != value.shape() {
                return Err(Error::Mismatch(format!(
                    "{name}: expected shape {:?}, found {:?}",
                    t.shape(),
                    value.shape()
                )));
            }
            t.value = value;
        }
        Ok(())
    }
}

fn push_lstm_mut<'a, T>(b: &'a mut BiLstmParams<T>, out: &mut Vec<&'a mut Tensor<T>>) {
    for dir in [&mut b.forward, &mut b.backward] {
        out.push(&mut dir.w_ih);
        out.push(&mut dir.w_hh);
        out.push(&mut dir.bias);
    }
}

pub fn init_params<T: Scalar>(dims: Dims, variant: Variant, seed: u64) -> Result<ModelParams<T>> {
    ModelParams::init(dims, variant, seed)
}

/// Tape handles for one bound copy of [`ModelParams`].
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub encoder: BiLstmVars,
    pub attn_w: Var,
    pub attn_b: Var,
    pub match_w: Var,
    pub match_b: Var,
    pub sentence_lstm: BiLstmVars,
    pub document_lstm: BiLstmVars,
    pub score_w: Var,
    /// All handles in serialization order.
    pub vars: Vec<Var>,
}

impl BoundParams {
    /// Wraps handles given in serialization order.
    pub fn from_vars(vars: Vec<Var>) -> Result<Self> {
        if vars.len() != PARAM_TENSORS {
            return Err(Error::Contract(format!(
                "expected {PARAM_TENSORS} parameter handles, got {}",
                vars.len()
            )));
        }
        let lstm = |i: usize| LstmVars {
            w_ih: vars[i],
            w_hh: vars[i + 1],
            bias: vars[i + 2],
        };
        let bi = |i: usize| BiLstmVars {
            forward: lstm(i),
            backward: lstm(i + 3),
        };
        Ok(BoundParams {
            encoder: bi(0),
            attn_w: vars[6],
            attn_b: vars[7],
            match_w: vars[8],
            match_b: vars[9],
            sentence_lstm: bi(10),
            document_lstm: bi(16),
            score_w: vars[22],
            vars,
        })
    }
}
