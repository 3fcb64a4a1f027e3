use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use crate::data::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor};

/// d×|V| word vectors, one column per vocabulary index. The PAD column is
/// zero.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub vectors: Tensor<T>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(vectors: Matrix<T>, trainable: bool) -> Self {
        let vectors = if trainable {
            Tensor::parameter(vectors)
        } else {
            Tensor::frozen(vectors)
        };
        EmbeddingTable { vectors }
    }

    /// Values uniform in [−0.1, 0.1] for every non-PAD entry.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = substream(seed, Stream::EmbeddingFill);
        let mut m = Matrix::zeros(dim, vocab_size);
        for c in 0..vocab_size {
            if c == PAD {
                continue;
            }
            for r in 0..dim {
                m[(r, c)] = T::lit(rng.gen_range(-0.1..=0.1));
            }
        }
        Self::new(m, false)
    }

    pub fn dim(&self) -> usize {
        self.vectors.value.rows()
    }

    pub fn vocab_size(&self) -> usize {
        self.vectors.value.cols()
    }

    pub fn trainable(&self) -> bool {
        self.vectors.requires_grad
    }

    pub fn set_trainable(&mut self, on: bool) {
        self.vectors.set_requires_grad(on);
    }

    /// Columns for `indices`, as a d×T matrix.
    pub fn gather(&self, indices: &[usize]) -> Matrix<T> {
        let table = &self.vectors.value;
        let mut out = Matrix::zeros(table.rows(), indices.len());
        for (c, &idx) in indices.iter().enumerate() {
            for r in 0..table.rows() {
                out[(r, c)] = table[(r, idx)];
            }
        }
        out
    }

    /// Re-zeroes the PAD column (after an optimizer step, say).
    pub fn clear_pad(&mut self) {
        let m = &mut self.vectors.value;
        for r in 0..m.rows() {
            m[(r, PAD)] = T::zero();
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedEmbeddings<T> {
    pub table: EmbeddingTable<T>,
    /// Matched non-reserved entries.
    pub matched: usize,
    /// `matched` over the number of non-reserved vocabulary entries.
    pub coverage: f64,
}

/// Reads a whitespace-separated `token v1 ... vd` file. A first line of the
/// form `count dim` is skipped when `dim` equals the arity of the following
/// line minus one. Vocabulary entries absent from the file are filled
/// uniformly from [−0.1, 0.1] using the embedding-fill substream of `seed`.
pub fn load_embeddings<T: Scalar>(
    path: &Path,
    vocab: &Vocabulary,
    dim: usize,
    seed: u64,
) -> Result<LoadedEmbeddings<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let fmt_err = |line: usize, msg: String| Error::Format {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut table = Matrix::<T>::zeros(dim, vocab.len());
    let mut found = vec![false; vocab.len()];
    let mut pending_header: Option<(usize, Vec<String>)> = None;

    let mut handle = |line_no: usize, fields: &[&str]| -> Result<()> {
        if fields.len() != dim + 1 {
            return Err(fmt_err(
                line_no,
                format!(
                    "expected {} values, found {}",
                    dim,
                    fields.len().saturating_sub(1)
                ),
            ));
        }
        if let Some(idx) = vocab.lookup(fields[0]) {
            if idx == PAD || found[idx] {
                return Ok(());
            }
            for (r, v) in fields[1..].iter().enumerate() {
                let x: f64 = v
                    .parse()
                    .map_err(|_| fmt_err(line_no, format!("bad number {v:?}")))?;
                table[(r, idx)] = T::lit(x);
            }
            found[idx] = true;
        }
        Ok(())
    };

    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_no = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if line_no == 1 && fields.len() == 2 && fields[1].parse::<usize>().is_ok() {
            pending_header = Some((line_no, fields.iter().map(|s| s.to_string()).collect()));
            continue;
        }
        if let Some((hline, header)) = pending_header.take() {
            let header_dim: usize = header[1].parse().expect("checked above");
            if header_dim != fields.len() - 1 {
                let refs: Vec<&str> = header.iter().map(String::as_str).collect();
                handle(hline, &refs)?;
            }
        }
        handle(line_no, &fields)?;
    }
    if let Some((hline, header)) = pending_header {
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        handle(hline, &refs)?;
    }

    let mut rng = substream(seed, Stream::EmbeddingFill);
    let mut matched = 0;
    for idx in 0..vocab.len() {
        if idx == PAD {
            continue;
        }
        if found[idx] {
            if idx > 1 {
                matched += 1;
            }
            continue;
        }
        for r in 0..dim {
            table[(r, idx)] = T::lit(rng.gen_range(-0.1..=0.1));
        }
    }
    let regular = vocab.len().saturating_sub(2);
    let coverage = if regular == 0 {
        0.0
    } else {
        matched as f64 / regular as f64
    };
    Ok(LoadedEmbeddings {
        table: EmbeddingTable::new(table, false),
        matched,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["the", "cat", "dog"]).unwrap()
    }

    #[test]
    fn file_vectors_and_fill() {
        let f = write("the 0.5 -0.25\ncat 1 2\n<pad> 9 9\nzebra 3 3\n");
        let e = load_embeddings::<f64>(f.path(), &vocab(), 2, 1).unwrap();
        let m = &e.table.vectors.value;
        assert_eq!(m.column(2), vec![0.5, -0.25]);
        assert_eq!(m.column(3), vec![1.0, 2.0]);
        assert_eq!(m.column(PAD), vec![0.0, 0.0]);
        assert!(m.column(4).iter().all(|x| x.abs() <= 0.1));
        assert_eq!(e.matched, 2);
        assert!((e.coverage - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn header_line_is_skipped() {
        let f = write("3 2\nthe 1 1\ncat 2 2\n");
        let e = load_embeddings::<f64>(f.path(), &vocab(), 2, 1).unwrap();
        assert_eq!(e.matched, 2);
    }

    #[test]
    fn dimension_mismatch_names_line() {
        let f = write("the 1 1\ncat 2 2 2\n");
        let err = load_embeddings::<f64>(f.path(), &vocab(), 2, 1).unwrap_err();
        assert!(matches!(err, Error::Format { line: 2, .. }), "{err}");
    }

    #[test]
    fn fill_is_seeded() {
        let f = write("the 1 1\n");
        let a = load_embeddings::<f64>(f.path(), &vocab(), 2, 5).unwrap();
        let b = load_embeddings::<f64>(f.path(), &vocab(), 2, 5).unwrap();
        assert!(a.table.vectors.value.bit_eq(&b.table.vectors.value));
    }
}
