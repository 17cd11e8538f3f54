use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seedable generator backed by ChaCha8.
///
/// ChaCha8 output is specified bit-for-bit independent of platform, and
/// normal variates come from `rand_distr`'s ziggurat sampler on top of it,
/// so a seed pins the whole draw sequence.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for the same seed, e.g. init vs. training noise.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn uniform(&mut self, low: f64, high: f64) -> f64 {
        self.inner.gen_range(low..high)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.gen()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Source of standard-normal noise for reparameterized sampling.
pub trait Noise {
    fn standard_normal(&mut self) -> f64;

    fn fill_standard_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.standard_normal();
        }
    }
}

impl Noise for Rng {
    fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }
}

/// Noise source that always returns 0, turning every sample into its mean.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl Noise for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }
}

impl<N: Noise + ?Sized> Noise for &mut N {
    fn standard_normal(&mut self) -> f64 {
        (**self).standard_normal()
    }
}
