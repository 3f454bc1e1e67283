//! Counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream addressed by a 256-bit key and a
//! 64-bit stream number. The key carries `(seed, purpose)` and the stream
//! number carries the sample index, so a Monte Carlo draw is a pure
//! function of `(seed, purpose, index)` and never depends on how samples
//! are spread over worker threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A single-owner random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
    seed: u64,
    purpose: u64,
    stream_id: u64,
}

impl RngStream {
    /// Stream `stream_id` of the master `seed`.
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::keyed(seed, 0, stream_id)
    }

    /// Stream keyed by a master seed, a purpose tag separating unrelated
    /// experiments, and an index (typically the Monte Carlo sample index).
    pub fn keyed(seed: u64, purpose: u64, index: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&purpose.to_le_bytes());
        let mut inner = ChaCha8Rng::from_seed(key);
        inner.set_stream(index);
        Self {
            inner,
            seed,
            purpose,
            stream_id: index,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn purpose(&self) -> u64 {
        self.purpose
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Shorthand for [`RngStream::new`].
pub fn make_stream(seed: u64, stream_id: u64) -> RngStream {
    RngStream::new(seed, stream_id)
}

/// Hashes a human-readable label into a purpose tag (FNV-1a).
pub fn purpose_tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325_u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}
