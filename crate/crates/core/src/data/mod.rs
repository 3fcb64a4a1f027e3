pub mod batch;
pub mod embeddings;
pub mod race;
pub mod text;
pub mod vocab;

pub use batch::{
    encode_example, encode_tokenized, make_batches, Batch, BatchItem, EncodedExample, ExampleInput,
    Sequence, TokenizedExample, TruncationCaps,
};
pub use embeddings::{load_embeddings, EmbeddingTable, LoadedEmbeddings};
pub use race::{answer_index, answer_letter, load_race_dir, RaceArticle, RawExample, Subset};
pub use text::{split_sentences, tokenize};
pub use vocab::{build_vocab, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
