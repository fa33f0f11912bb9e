//! Seeded random streams.
//!
//! Every random choice in the toolkit draws from ChaCha20 (`rand_chacha`
//! 0.9.0, pinned) seeded with `SeedableRng::seed_from_u64(seed)`, on a
//! ChaCha stream id reserved for that purpose. Distinct purposes therefore
//! never share a random stream even when given the same seed, and the
//! sequences are identical on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream ids by purpose.
#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Selection,
    /// Per-epoch batch shuffle.
    Shuffle(u32),
    Noise,
    MapSample,
    Synthetic,
    Permutation,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Selection => 1,
            Stream::Shuffle(epoch) => (1 << 32) | u64::from(epoch),
            Stream::Noise => 2,
            Stream::MapSample => 3,
            Stream::Synthetic => 4,
            Stream::Permutation => 5,
        }
    }
}

pub fn seeded(seed: u64, stream: Stream) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// `amount` distinct indices below `length`, ascending.
pub fn sample_indices(seed: u64, stream: Stream, length: usize, amount: usize) -> Vec<usize> {
    let mut rng = seeded(seed, stream);
    let mut idx = rand::seq::index::sample(&mut rng, length, amount).into_vec();
    idx.sort_unstable();
    idx
}
