use std::collections::BTreeSet;

use rand::seq::SliceRandom;

use crate::data::race::{RawExample, Subset};
use crate::data::text::{split_sentences, tokenize};
use crate::data::vocab::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::model::question_type::{bucket_by_question_type, QuestionType};
use crate::rng::{indexed_substream, Stream};

/// Per-sequence token caps applied at encoding time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TruncationCaps {
    pub sentence: usize,
    pub question: usize,
    pub option: usize,
}

impl Default for TruncationCaps {
    fn default() -> Self {
        TruncationCaps {
            sentence: 50,
            question: 30,
            option: 20,
        }
    }
}

/// Token indices plus a mask marking real (non-padding) positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sequence {
    pub tokens: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Sequence {
    pub fn unpadded(tokens: Vec<usize>) -> Self {
        let mask = vec![true; tokens.len()];
        Sequence { tokens, mask }
    }

    /// Right-pads with PAD up to `len`.
    pub fn padded(tokens: &[usize], len: usize) -> Self {
        let mut t = tokens.to_vec();
        let mut mask = vec![true; t.len()];
        t.resize(len.max(tokens.len()), PAD);
        mask.resize(t.len(), false);
        Sequence { tokens: t, mask }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Token-level concatenation, masks included.
    pub fn concat(&self, other: &Sequence) -> Sequence {
        let mut tokens = self.tokens.clone();
        tokens.extend_from_slice(&other.tokens);
        let mut mask = self.mask.clone();
        mask.extend_from_slice(&other.mask);
        Sequence { tokens, mask }
    }

    pub fn all_real(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }
}

/// What the model consumes for one question: the passage sentences, the
/// question and the candidate answers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExampleInput {
    pub sentences: Vec<Sequence>,
    pub question: Sequence,
    pub options: Vec<Sequence>,
}

/// Surface tokens after sentence splitting, tokenization and truncation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedExample {
    pub sentences: Vec<Vec<String>>,
    pub question: Vec<String>,
    pub options: Vec<Vec<String>>,
}

impl TokenizedExample {
    pub fn new(article: &str, question: &str, options: &[String], caps: TruncationCaps) -> Self {
        let cap = |mut v: Vec<String>, n: usize| {
            v.truncate(n);
            v
        };
        TokenizedExample {
            sentences: split_sentences(article)
                .iter()
                .map(|s| cap(tokenize(s), caps.sentence))
                .filter(|s| !s.is_empty())
                .collect(),
            question: cap(tokenize(question), caps.question),
            options: options
                .iter()
                .map(|o| cap(tokenize(o), caps.option))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub id: String,
    pub subset: Subset,
    pub sentences: Vec<Vec<usize>>,
    pub question: Vec<usize>,
    pub options: Vec<Vec<usize>>,
    pub gold: usize,
    pub question_types: BTreeSet<QuestionType>,
}

impl EncodedExample {
    pub fn input(&self) -> ExampleInput {
        ExampleInput {
            sentences: self
                .sentences
                .iter()
                .map(|s| Sequence::unpadded(s.clone()))
                .collect(),
            question: Sequence::unpadded(self.question.clone()),
            options: self
                .options
                .iter()
                .map(|o| Sequence::unpadded(o.clone()))
                .collect(),
        }
    }
}

fn indices(tokens: &[String], vocab: &Vocabulary) -> Vec<usize> {
    tokens.iter().map(|t| vocab.get(t)).collect()
}

pub fn encode_tokenized(
    id: &str,
    tokens: &TokenizedExample,
    gold: usize,
    subset: Subset,
    vocab: &Vocabulary,
) -> Result<EncodedExample> {
    if tokens.sentences.is_empty() {
        return Err(Error::Validation(format!(
            "example {id} has no non-empty passage sentences"
        )));
    }
    if gold >= tokens.options.len() {
        return Err(Error::Validation(format!(
            "example {id}: gold {gold} but {} options",
            tokens.options.len()
        )));
    }
    Ok(EncodedExample {
        id: id.to_string(),
        subset,
        sentences: tokens.sentences.iter().map(|s| indices(s, vocab)).collect(),
        question: indices(&tokens.question, vocab),
        options: tokens.options.iter().map(|o| indices(o, vocab)).collect(),
        gold,
        question_types: bucket_by_question_type(&tokens.question),
    })
}

pub fn encode_example(
    raw: &RawExample,
    vocab: &Vocabulary,
    caps: TruncationCaps,
) -> Result<EncodedExample> {
    let tokens = TokenizedExample::new(&raw.article, &raw.question, &raw.options, caps);
    encode_tokenized(&raw.id, &tokens, raw.gold, raw.subset, vocab)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchItem {
    pub id: String,
    pub subset: Subset,
    pub gold: usize,
    pub question_types: BTreeSet<QuestionType>,
    /// Number of real sentences; slots past it are all padding.
    pub sentence_count: usize,
    pub sentences: Vec<Sequence>,
    pub question: Sequence,
    pub options: Vec<Sequence>,
}

impl BatchItem {
    pub fn input(&self) -> ExampleInput {
        ExampleInput {
            sentences: self.sentences[..self.sentence_count].to_vec(),
            question: self.question.clone(),
            options: self.options.clone(),
        }
    }
}

/// A group of examples padded to common lengths: every sentence to
/// `sentence_len`, every example to `max_sentences` sentence slots, and so
/// on.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub max_sentences: usize,
    pub sentence_len: usize,
    pub question_len: usize,
    pub option_len: usize,
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn from_examples(examples: &[&EncodedExample]) -> Batch {
        let max_of =
            |f: &dyn Fn(&EncodedExample) -> usize| examples.iter().map(|e| f(e)).max().unwrap_or(0);
        let max_sentences = max_of(&|e| e.sentences.len());
        let sentence_len = max_of(&|e| e.sentences.iter().map(Vec::len).max().unwrap_or(0));
        let question_len = max_of(&|e| e.question.len());
        let option_len = max_of(&|e| e.options.iter().map(Vec::len).max().unwrap_or(0));

        let items = examples
            .iter()
            .map(|e| {
                let mut sentences: Vec<Sequence> = e
                    .sentences
                    .iter()
                    .map(|s| Sequence::padded(s, sentence_len))
                    .collect();
                sentences.resize(max_sentences, Sequence::padded(&[], sentence_len));
                BatchItem {
                    id: e.id.clone(),
                    subset: e.subset,
                    gold: e.gold,
                    question_types: e.question_types.clone(),
                    sentence_count: e.sentences.len(),
                    sentences,
                    question: Sequence::padded(&e.question, question_len),
                    options: e
                        .options
                        .iter()
                        .map(|o| Sequence::padded(o, option_len))
                        .collect(),
                }
            })
            .collect();
        Batch {
            max_sentences,
            sentence_len,
            question_len,
            option_len,
            items,
        }
    }
}

/// Shuffles with the shuffle substream of `seed` (split by `epoch`) and
/// groups into padded batches of at most `batch_size`.
pub fn make_batches(
    examples: &[EncodedExample],
    batch_size: usize,
    seed: u64,
    epoch: u32,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut indexed_substream(seed, Stream::Shuffle, epoch));
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let refs: Vec<&EncodedExample> = chunk.iter().map(|&i| &examples[i]).collect();
            Batch::from_examples(&refs)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::UNK;

    fn encoded(id: &str, sentence_lens: &[usize], q: usize, opts: &[usize]) -> EncodedExample {
        EncodedExample {
            id: id.into(),
            subset: Subset::Middle,
            sentences: sentence_lens.iter().map(|&n| vec![5; n]).collect(),
            question: vec![6; q],
            options: opts.iter().map(|&n| vec![7; n]).collect(),
            gold: 0,
            question_types: BTreeSet::new(),
        }
    }

    #[test]
    fn padding_rule() {
        let a = encoded("a", &[3], 2, &[1, 1]);
        let b = encoded("b", &[5, 2], 2, &[1, 4]);
        let batch = Batch::from_examples(&[&a, &b]);
        let s = &batch.items[0].sentences[0];
        assert_eq!(s.mask, [true, true, true, false, false]);
        assert_eq!(&s.tokens[3..], [PAD, PAD]);
        assert_eq!(batch.items[0].sentences.len(), 2);
        assert_eq!(batch.items[0].sentence_count, 1);
        assert_eq!(batch.items[0].input().sentences.len(), 1);
        assert_eq!(batch.items[1].options[0].real_len(), 1);
    }

    #[test]
    fn batches_are_seeded() {
        let exs: Vec<EncodedExample> = (0..10)
            .map(|i| encoded(&i.to_string(), &[i % 3 + 1], 2, &[1, 2]))
            .collect();
        let a = make_batches(&exs, 3, 9, 0).unwrap();
        let b = make_batches(&exs, 3, 9, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        let c = make_batches(&exs, 3, 9, 1).unwrap();
        assert_ne!(a, c);
        assert!(make_batches(&exs, 0, 9, 0).is_err());
    }

    #[test]
    fn encode_uses_unk_and_drops_empty_sentences() {
        let vocab = Vocabulary::from_tokens(["he", "bought", "it", "."]).unwrap();
        let raw = RawExample {
            id: "x#0".into(),
            article_id: "x".into(),
            article: "He bought it. ?  ! He sold it.".into(),
            question: "who?".into(),
            options: vec!["he".into(), "it".into()],
            gold: 1,
            subset: Subset::High,
        };
        let e = encode_example(&raw, &vocab, TruncationCaps::default()).unwrap();
        assert_eq!(e.sentences.len(), 4);
        assert_eq!(e.sentences[0], [2, 3, 4, 5]);
        assert_eq!(e.sentences[3], [2, UNK, 4, 5]);
        assert!(e.question_types.contains(&QuestionType::Who));

        let empty = RawExample {
            article: "   ".into(),
            ..raw
        };
        let err = encode_example(&empty, &vocab, TruncationCaps::default()).unwrap_err();
        assert!(err.to_string().contains("x#0"));
    }

    #[test]
    fn truncation_caps_apply() {
        let caps = TruncationCaps {
            sentence: 2,
            question: 1,
            option: 1,
        };
        let t = TokenizedExample::new("a b c d.", "q r s", &["x y".into()], caps);
        assert_eq!(t.sentences, [["a", "b"]]);
        assert_eq!(t.question, ["q"]);
        assert_eq!(t.options, [["x"]]);
    }
}
