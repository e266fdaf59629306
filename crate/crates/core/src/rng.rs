//! Counter-based random streams.
//!
//! Every random draw in the lab comes from a ChaCha8 keystream addressed by
//! `(seed, replica, substream)`. The seed is the key, and the 64-bit stream
//! id packs the replica index (upper 44 bits) with a substream index (lower
//! 20 bits). Because streams are addressed rather than split off a shared
//! generator, the draws a replica sees never depend on how replicas are
//! scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

/// Identifier written into reports so a reader knows how to regenerate draws.
pub const STREAM_ALGORITHM: &str = "chacha8/seed-key/replica<<20|substream";

const SUBSTREAM_BITS: u32 = 20;

/// Substream used for initial-condition sampling.
pub const SUBSTREAM_INIT: u64 = 0;
/// Substreams `SUBSTREAM_NOISE_BASE + rank` carry the Brownian increments of each rank.
pub const SUBSTREAM_NOISE_BASE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StreamKey {
    pub seed: u64,
    pub replica: u64,
    pub substream: u64,
}

impl StreamKey {
    pub fn new(seed: u64, replica: u64, substream: u64) -> Self {
        Self {
            seed,
            replica,
            substream,
        }
    }

    pub fn stream_id(&self) -> u64 {
        assert!(
            self.substream < (1 << SUBSTREAM_BITS),
            "substream index out of range"
        );
        assert!(
            self.replica < (1 << (64 - SUBSTREAM_BITS)),
            "replica index out of range"
        );
        (self.replica << SUBSTREAM_BITS) | self.substream
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        // Domain-separate the key so `seed` never aliases a raw ChaCha key.
        key[8..16].copy_from_slice(b"atlaslab");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.stream_id());
        rng
    }
}

pub fn stream(seed: u64, replica: u64, substream: u64) -> ChaCha8Rng {
    StreamKey::new(seed, replica, substream).rng()
}

/// Per-rank Gaussian increment streams for one replica.
///
/// Rank `j` always reads from substream `SUBSTREAM_NOISE_BASE + j`, so two
/// systems of different sizes built from the same `(seed, replica)` share the
/// increments of every rank they have in common.
pub struct RankNoise {
    streams: Vec<ChaCha8Rng>,
}

impl RankNoise {
    pub fn new(seed: u64, replica: u64, ranks: usize) -> Self {
        let streams = (0..ranks as u64)
            .map(|j| stream(seed, replica, SUBSTREAM_NOISE_BASE + j))
            .collect();
        Self { streams }
    }

    pub fn ranks(&self) -> usize {
        self.streams.len()
    }

    /// Fill `out` with `scale * N(0,1)` draws, one per rank.
    pub fn fill(&mut self, out: &mut [f64], scale: f64) {
        debug_assert_eq!(out.len(), self.streams.len());
        for (x, rng) in out.iter_mut().zip(self.streams.iter_mut()) {
            let z: f64 = StandardNormal.sample(rng);
            *x = scale * z;
        }
    }
}
