//! Reproducible, splittable random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `(seed, stream_id)`. Forking
//! hashes the parent's key together with a label, so a child stream depends
//! only on the parent's identity and never on how many draws the parent has
//! already produced. Constants:
//!
//! * label hash: FNV-1a 64 (offset `0xcbf29ce484222325`, prime `0x100000001b3`)
//! * mixer: SplitMix64 finalizer (`0x9e3779b97f4a7c15`, `0xbf58476d1ce4e5b9`,
//!   `0x94d049bb133111eb`)
//! * seed expansion: `ChaCha8Rng::seed_from_u64` (PCG32 expansion defined by
//!   `rand_core`), stream selected with `set_stream`.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A deterministic random stream identified by `(seed, stream_id)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Child stream keyed by this stream's identity and `label`.
    pub fn fork(&self, label: &str) -> RngStream {
        self.fork_hashed(fnv1a(label.as_bytes()))
    }

    /// Child stream keyed by `label` and an integer index (member, epoch, ...).
    pub fn fork_indexed(&self, label: &str, index: u64) -> RngStream {
        self.fork_hashed(mix64(fnv1a(label.as_bytes()) ^ mix64(index)))
    }

    fn fork_hashed(&self, h: u64) -> RngStream {
        let seed = mix64(self.seed ^ mix64(h));
        let stream = mix64(self.stream_id.wrapping_add(h).rotate_left(17) ^ self.seed);
        RngStream::with_stream(seed, stream)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fill `out` with i.i.d. standard normals.
    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
