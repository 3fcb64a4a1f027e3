//! Binary checkpoint: magic `CMC1`, u32 version, u32 tensor count, then per
//! tensor a u16-prefixed name, u8 rank, u32 dims and little-endian f64
//! data; then the vocabulary (u32 count, u32-prefixed tokens) and the
//! config (u32-prefixed `key=value` text). Integers are little-endian.

use std::fs;
use std::path::Path;

use crate::data::{EmbeddingTable, Vocabulary, PAD_TOKEN, UNK_TOKEN};
use crate::error::{Error, Result};
use crate::model::{parameter_names, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::Matrix;
use crate::train::config::TrainConfig;

pub const MAGIC: &[u8; 4] = b"CMC1";
pub const VERSION: u32 = 1;
/// Name of the word-vector table, stored after the model tensors.
pub const EMBEDDINGS_TENSOR: &str = "embeddings";

/// Everything needed to score new examples.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub params: ModelParams<T>,
    pub embeddings: EmbeddingTable<T>,
    pub vocab: Vocabulary,
    pub config: TrainConfig,
}

impl<T: Scalar> Checkpoint<T> {
    /// Fails with a mismatch error unless the stored sizes are `(d, l)`.
    pub fn expect_dims(&self, d: usize, l: usize) -> Result<()> {
        let dims = self.params.dims;
        if (dims.embed, dims.hidden) != (d, l) {
            return Err(Error::Mismatch(format!(
                "checkpoint has d={} l={}, requested d={d} l={l}",
                dims.embed, dims.hidden
            )));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v =
        u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, m: &Matrix<T>) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Contract(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(2);
    put_u32(out, m.rows())?;
    put_u32(out, m.cols())?;
    for &x in m.data() {
        out.extend_from_slice(&x.as_f64().to_le_bytes());
    }
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    put_u32(out, s.len())?;
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<Vec<u8>> {
    let tensors = ckpt.params.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, tensors.len() + 1)?;
    for (name, t) in &tensors {
        put_tensor(&mut out, name, &t.value)?;
    }
    put_tensor(&mut out, EMBEDDINGS_TENSOR, &ckpt.embeddings.vectors.value)?;
    put_u32(&mut out, ckpt.vocab.len())?;
    for tok in ckpt.vocab.tokens() {
        put_str(&mut out, tok)?;
    }
    put_str(&mut out, &ckpt.config.to_lines())?;
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, msg: impl Into<String>) -> Error {
        Error::CorruptCheckpoint {
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.corrupt(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<usize> {
        let b = self.take(2, what)?;
        Ok(usize::from(u16::from_le_bytes([b[0], b[1]])))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn utf8(&mut self, n: usize, what: &str) -> Result<String> {
        let start = self.pos;
        let b = self.take(n, what)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::CorruptCheckpoint {
            offset: start,
            msg: format!("{what} is not UTF-8"),
        })
    }

    fn tensor<T: Scalar>(&mut self) -> Result<(String, Matrix<T>)> {
        let n = self.u16("tensor name length")?;
        let name = self.utf8(n, "tensor name")?;
        let rank = self.u8("tensor rank")?;
        let (rows, cols) = match rank {
            1 => (self.u32("tensor dim")?, 1),
            2 => (self.u32("tensor dim")?, self.u32("tensor dim")?),
            r => return Err(self.corrupt(format!("{name}: unsupported rank {r}"))),
        };
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| self.corrupt(format!("{name}: size overflows")))?;
        let bytes = self.take(count.saturating_mul(8), &format!("data of {name}"))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| {
                let mut a = [0u8; 8];
                a.copy_from_slice(c);
                T::lit(f64::from_le_bytes(a))
            })
            .collect();
        Ok((name, Matrix::from_vec(rows, cols, data)?))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint {
            offset: 0,
            msg: "bad magic".into(),
        });
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(Error::CorruptCheckpoint {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let count_at = r.pos;
    let count = r.u32("tensor count")?;
    let expected = parameter_names().len() + 1;
    if count != expected {
        return Err(Error::CorruptCheckpoint {
            offset: count_at,
            msg: format!("expected {expected} tensors, found {count}"),
        });
    }
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        tensors.push(r.tensor::<T>()?);
    }

    let vocab_at = r.pos;
    let n_tokens = r.u32("vocabulary size")?;
    let mut tokens = Vec::with_capacity(n_tokens.min(bytes.len()));
    for _ in 0..n_tokens {
        let n = r.u32("token length")?;
        tokens.push(r.utf8(n, "token")?);
    }
    let config_len = r.u32("config length")?;
    let config_at = r.pos;
    let config_text = r.utf8(config_len, "config")?;
    if r.pos != bytes.len() {
        return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let config = TrainConfig::from_lines(&config_text).map_err(|e| Error::CorruptCheckpoint {
        offset: config_at,
        msg: e.to_string(),
    })?;
    if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
        return Err(Error::CorruptCheckpoint {
            offset: vocab_at,
            msg: "vocabulary does not start with the reserved entries".into(),
        });
    }
    let vocab = Vocabulary::from_tokens(tokens.into_iter().skip(2)).map_err(|e| {
        Error::CorruptCheckpoint {
            offset: vocab_at,
            msg: e.to_string(),
        }
    })?;

    let (emb_name, emb) = tensors.pop().expect("count checked above");
    if emb_name != EMBEDDINGS_TENSOR {
        return Err(Error::Mismatch(format!(
            "expected tensor {EMBEDDINGS_TENSOR}, found {emb_name}"
        )));
    }
    let dims = config.dims()?;
    if emb.shape() != (dims.embed, vocab.len()) {
        return Err(Error::Mismatch(format!(
            "embeddings are {:?} but config and vocabulary imply {:?}",
            emb.shape(),
            (dims.embed, vocab.len())
        )));
    }
    let mut params = ModelParams::init(dims, config.variant, config.seed)?;
    params.assign(tensors)?;
    Ok(Checkpoint {
        params,
        embeddings: EmbeddingTable::new(emb, config.trainable_embeddings),
        vocab,
        config,
    })
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
