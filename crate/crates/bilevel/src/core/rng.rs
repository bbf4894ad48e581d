use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout: ChaCha with 8 rounds. Its output is
/// specified bit-for-bit independently of platform and word size.
pub type RngStream = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> RngStream {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for replication `index` under a base `seed`.
///
/// ChaCha exposes 2^64 stream ids per key, so sub-streams never overlap.
pub fn substream(seed: u64, index: u64) -> RngStream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}
