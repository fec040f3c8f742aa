//! Keyed, counter-based randomness.
//!
//! Every random quantity in the crate is derived from a [`StreamKey`]: a
//! master seed plus a domain tag plus a short list of integer indices. The
//! key is folded through splitmix64 so that distinct keys give unrelated
//! streams, and a key always reproduces the same draws.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[inline]
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold one word into a running hash.
#[inline]
pub fn mix(h: u64, word: u64) -> u64 {
    splitmix64(h ^ splitmix64(word))
}

/// FNV-1a over the tag bytes; tags are short ASCII labels.
pub fn tag_hash(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Map 64 random bits to a uniform double in [0, 1).
#[inline]
pub fn unit_f64(bits: u64) -> f64 {
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[inline]
pub fn hash_coords(mut h: u64, coords: &[i64]) -> u64 {
    for &c in coords {
        h = mix(h, c as u64);
    }
    h
}

/// Derivation key of a random stream: (master seed, domain tag, indices).
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    hash: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, tag: &str) -> Self {
        StreamKey {
            hash: mix(splitmix64(master_seed), tag_hash(tag)),
        }
    }

    /// Child key with one more index appended.
    pub fn with(&self, index: u64) -> Self {
        StreamKey {
            hash: mix(self.hash, index),
        }
    }

    /// Child key with a sub-tag appended.
    pub fn tagged(&self, tag: &str) -> Self {
        StreamKey {
            hash: mix(self.hash, tag_hash(tag)),
        }
    }

    /// The canonical (replica, walker) key used by experiments.
    pub fn walker(master_seed: u64, tag: &str, replica: u64, walker: u64) -> Self {
        Self::new(master_seed, tag).with(replica).with(walker)
    }

    pub fn hash(&self) -> u64 {
        self.hash
    }

    /// A fresh 64-bit seed, e.g. for deriving an environment.
    pub fn seed(&self) -> u64 {
        splitmix64(self.hash ^ 0x5EED)
    }

    /// Counter-based uniform in [0, 1) for a given lattice point and counter.
    #[inline]
    pub fn uniform_at(&self, coords: &[i64], counter: u64) -> f64 {
        unit_f64(mix(hash_coords(self.hash, coords), counter))
    }

    pub fn stream(&self) -> RngStream {
        RngStream::new(self.clone())
    }
}

/// Sequential stream of draws; replaying the same key replays the draws.
#[derive(Clone, Debug)]
pub struct RngStream {
    key: StreamKey,
    rng: ChaCha8Rng,
    position: u64,
}

impl RngStream {
    pub fn new(key: StreamKey) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(key.hash);
        RngStream {
            key,
            rng,
            position: 0,
        }
    }

    pub fn key(&self) -> &StreamKey {
        &self.key
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.position += 1;
        self.rng.random::<f64>()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.position += 1;
        self.rng.next_u64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.position += 1;
        self.rng.random_range(0..n)
    }
}
