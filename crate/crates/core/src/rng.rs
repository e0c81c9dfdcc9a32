//! Seed splitting. Every consumer of randomness draws from its own ChaCha
//! stream keyed by `(seed, purpose, index)`, so results do not depend on the
//! order in which independent consumers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StanRng = ChaCha8Rng;

/// Purposes that own a dedicated stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    GeneratorInit = 1,
    DiscriminatorInit = 2,
    Pretrain = 3,
    Adversarial = 4,
    SynthTrain = 5,
    SynthTest = 6,
    SynthCorpus = 7,
    Misc = 8,
}

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> StanRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) ^ index);
    rng
}
