//! All randomness derives from one user seed through named substreams, so
//! e.g. changing the shuffle order never perturbs parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    EmbeddingFill = 3,
    Synthetic = 4,
    Dropout = 5,
}

pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    indexed_substream(seed, stream, 0)
}

/// Like [`substream`] but further split by `index` (e.g. the epoch number).
pub fn indexed_substream(seed: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 32) | u64::from(index));
    rng
}

/// Substream keyed by a 64-bit `key` as well as an index, for draws that
/// must not depend on scheduling (e.g. dropout masks per optimizer step and
/// batch position).
pub fn keyed_substream(seed: u64, stream: Stream, key: u64, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(((stream as u64) << 32) | u64::from(index));
    rng
}
