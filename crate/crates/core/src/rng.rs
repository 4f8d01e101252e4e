//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha8 stream derived from a
//! single user seed: the generator is seeded with the seed and then switched to a
//! stream id that encodes the purpose (and, for repeated draws such as Monte-Carlo
//! trials or epochs, an index). Distinct purposes therefore never share random
//! numbers, and results do not depend on the order in which streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Features = 1,
    Noise = 2,
    Coefficients = 3,
    Permutations = 4,
    MonteCarlo = 5,
    Initialization = 6,
}

/// Generator for `stream` with index 0.
pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    substream_rng(seed, stream, 0)
}

/// Generator for the `index`-th substream of `stream`. Up to 2^56 substreams per purpose.
pub fn substream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) | (index & ((1 << 56) - 1)));
    rng
}
