use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EncodedExample, Subset, Vocabulary, UNK};
use crate::error::Result;
use crate::model::QuestionType;
use crate::rng::{substream, Stream};

pub const SYNTHETIC_VOCAB: usize = 50;
pub const SYNTHETIC_SENTENCES: usize = 3;
pub const SYNTHETIC_SENTENCE_LEN: usize = 5;
pub const SYNTHETIC_QUESTION_LEN: usize = 3;
pub const SYNTHETIC_OPTIONS: usize = 4;

/// Vocabulary of [`SYNTHETIC_VOCAB`] entries, reserved ones included.
pub fn synthetic_vocab() -> Vocabulary {
    let words = (0..SYNTHETIC_VOCAB - 2).map(|i| format!("w{i}"));
    Vocabulary::from_tokens(words).expect("distinct synthetic words")
}

/// A copy task: the passage is three sentences of five random words, the
/// correct option repeats one of them and the distractors are random word
/// strings of the same length. Subsets alternate middle/high.
pub fn synthetic_dataset(n: usize, seed: u64) -> Result<(Vocabulary, Vec<EncodedExample>)> {
    let vocab = synthetic_vocab();
    let mut rng = substream(seed, Stream::Synthetic);
    let word = |rng: &mut ChaCha8Rng, len: usize| -> Vec<usize> {
        (0..len)
            .map(|_| rng.gen_range(UNK + 1..SYNTHETIC_VOCAB))
            .collect()
    };
    let examples = (0..n)
        .map(|i| {
            let sentences: Vec<Vec<usize>> = (0..SYNTHETIC_SENTENCES)
                .map(|_| word(&mut rng, SYNTHETIC_SENTENCE_LEN))
                .collect();
            let question = word(&mut rng, SYNTHETIC_QUESTION_LEN);
            let source = rng.gen_range(0..SYNTHETIC_SENTENCES);
            let gold = rng.gen_range(0..SYNTHETIC_OPTIONS);
            let options = (0..SYNTHETIC_OPTIONS)
                .map(|k| {
                    if k == gold {
                        sentences[source].clone()
                    } else {
                        word(&mut rng, SYNTHETIC_SENTENCE_LEN)
                    }
                })
                .collect();
            EncodedExample {
                id: format!("synthetic-{i}"),
                subset: if i % 2 == 0 {
                    Subset::Middle
                } else {
                    Subset::High
                },
                sentences,
                question,
                options,
                gold,
                question_types: BTreeSet::from([QuestionType::Other]),
            }
        })
        .collect();
    Ok((vocab, examples))
}
