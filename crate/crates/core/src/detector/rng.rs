use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random sub-streams derived from one seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    SceneGen = 1,
    Init = 2,
    Shuffle = 3,
    ValScenes = 4,
}

/// Independent generator for `(seed, stream, index)`.
pub fn sub_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 56) ^ index);
    rng
}
