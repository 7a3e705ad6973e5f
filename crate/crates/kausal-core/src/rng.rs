//! Counter-keyed random streams.
//!
//! Every Monte Carlo sample owns a ChaCha stream selected by `(seed, tag,
//! sample)`, so a sample's draws never depend on which thread or chunk
//! produced it.

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

/// Samples per tag; stream ids pack `tag` above this many bits.
pub const SAMPLE_BITS: u32 = 40;

/// Stream tags for the independent noise sources of the lab.
pub mod tags {
    /// Driving noise of ν-samples.
    pub const NU: u64 = 1;
    /// Independent Brownian increments used by non-optimal couplings.
    pub const FRESH: u64 = 2;
    /// μ-samples for the strong-solution check.
    pub const MU: u64 = 3;
    /// Clouds for the empirical transport bound.
    pub const CLOUD: u64 = 4;
    /// Samples for the Fisher information.
    pub const FISHER: u64 = 5;
    /// Bridge verification runs.
    pub const BRIDGE: u64 = 6;
    /// μ-samples for the martingale check of the density.
    pub const DENSITY: u64 = 7;
}

pub fn stream(seed: u64, tag: u64, sample: usize) -> ChaCha8Rng {
    let sample = sample as u64;
    assert!(sample < 1 << SAMPLE_BITS, "sample index exceeds the stream key space");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << SAMPLE_BITS) | sample);
    rng
}
