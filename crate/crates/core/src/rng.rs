//! Counter-based deterministic substreams.
//!
//! Every consumer of randomness (a client's chain, a client's observation
//! noise, the problem generator, output selection, ...) owns a [`RngKey`]
//! made of the master seed, a [`Domain`] tag and an index. The key selects a
//! ChaCha8 stream; the position inside the stream is a plain counter, so a
//! substream can be reopened at any offset and never shares state with
//! another key. This is what makes runs bit-identical regardless of how
//! clients are scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose tag folded into the ChaCha stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u16)]
pub enum Domain {
    Chain = 1,
    Noise = 2,
    InitialState = 3,
    Generator = 4,
    Output = 5,
    Partition = 6,
    Verify = 7,
    Grid = 8,
}

/// Identifies one deterministic random substream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub seed: u64,
    pub domain: Domain,
    pub index: u64,
}

impl RngKey {
    pub fn new(seed: u64, domain: Domain, index: u64) -> Self {
        debug_assert!(index < 1 << 48, "substream index must fit in 48 bits");
        Self { seed, domain, index }
    }

    fn stream_id(&self) -> u64 {
        ((self.domain as u64) << 48) | (self.index & ((1 << 48) - 1))
    }

    /// Generator positioned at the start of this substream.
    pub fn rng(&self) -> ChaCha8Rng {
        self.rng_at(0)
    }

    /// Generator positioned after `draws` 64-bit outputs.
    pub fn rng_at(&self, draws: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id());
        rng.set_word_pos(u128::from(draws) * 2);
        rng
    }

    /// Derives a child key, e.g. one per Monte-Carlo trial.
    pub fn child(&self, index: u64) -> Self {
        let mixed = splitmix64(self.seed ^ splitmix64(self.stream_id()) ^ index.rotate_left(17));
        Self { seed: mixed, domain: self.domain, index: self.index }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in `[0, 1)` from exactly one 64-bit output (53 random bits).
#[inline]
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform draw in `[lo, hi)`.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

/// Uniform integer in `[0, n)` by rejection, so the result is unbiased.
pub fn below<R: RngCore + ?Sized>(rng: &mut R, n: u64) -> u64 {
    assert!(n > 0, "empty range");
    let zone = u64::MAX - (u64::MAX % n);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % n;
        }
    }
}
