//! Seed derivation and the named randomness substreams of a trial.
//!
//! Every trial owns one 64-bit seed. The graph, the private beliefs and the
//! node selection process each read from their own ChaCha stream keyed by that
//! seed, so consuming more of one source never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The independent sources of randomness inside one trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Substream {
    /// Edge indicators. `attempt` distinguishes graphs redrawn after a rejection
    /// (for example when the experiment conditions on connectivity).
    Edges { attempt: u32 },
    Beliefs,
    Selection,
}

impl Substream {
    fn stream_id(self) -> u64 {
        match self {
            Substream::Beliefs => 1,
            Substream::Selection => 2,
            Substream::Edges { attempt } => 16 + u64::from(attempt),
        }
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed for trial `index` of an experiment seeded with `base_seed`.
///
/// Depends only on the pair, so appending trials to a sweep leaves the seeds of
/// earlier trials untouched.
pub fn derive_trial_seed(base_seed: u64, index: u64) -> u64 {
    mix64(base_seed ^ mix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Opens `substream` of the trial seeded with `seed`.
pub fn substream(seed: u64, which: Substream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.stream_id());
    rng
}
