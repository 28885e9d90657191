use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Deterministic random stream.
///
/// Backed by ChaCha8 keyed with `seed`, with `stream_id` selecting the
/// ChaCha stream (nonce). ChaCha output is defined bit-for-bit by its
/// reference algorithm, so a given `(seed, stream_id, call sequence)`
/// produces identical values on every platform, and distinct stream ids
/// never overlap.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        SeededRng { seed, stream_id, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            return lo;
        }
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be nonempty");
        self.inner.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// `Gamma(shape, 1)` draw; `shape` must be positive.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        Gamma::new(shape, 1.0)
            .expect("gamma shape must be positive")
            .sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

impl RngCore for SeededRng {
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

/// Stream-id layout shared by the simulator: the server owns stream 0,
/// each device owns a disjoint block of purposes.
pub mod streams {
    pub const SERVER: u64 = 0;
    pub const DATA: u64 = 1;

    const DEVICE_BASE: u64 = 16;
    const PER_DEVICE: u64 = 4;

    pub fn device_training(device: usize) -> u64 {
        DEVICE_BASE + PER_DEVICE * device as u64
    }

    pub fn device_conditions(device: usize) -> u64 {
        DEVICE_BASE + PER_DEVICE * device as u64 + 1
    }
}
