use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::matrix::{unit_normalize, C64};

/// Seeded random stream. Identical `(seed, stream)` pairs produce identical draws
/// on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    /// Independent sub-stream of `seed`; used to give every episode, batch or
    /// worker its own generator without coordination.
    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian `CN(0, variance)`.
    pub fn complex_normal(&mut self, variance: f64) -> C64 {
        let s = (variance / 2.0).sqrt();
        C64::new(s * self.normal(), s * self.normal())
    }

    /// `e^{jω}` with `ω` uniform on `[0, 2π)`.
    pub fn unit_phase(&mut self) -> C64 {
        C64::from_polar(1.0, std::f64::consts::TAU * self.uniform())
    }

    pub fn unit_phases(&mut self, n: usize) -> Vec<C64> {
        (0..n).map(|_| self.unit_phase()).collect()
    }

    /// Direction drawn uniformly from the complex unit sphere.
    pub fn unit_vector(&mut self, n: usize) -> Vec<C64> {
        loop {
            let x: Vec<C64> = (0..n).map(|_| self.complex_normal(1.0)).collect();
            if let Ok(u) = unit_normalize(&x) {
                return u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn streams_differ() {
        let mut a = Rng::with_stream(42, 0);
        let mut b = Rng::with_stream(42, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn complex_normal_has_requested_variance() {
        let mut rng = Rng::new(7);
        let n = 200_000;
        let var: f64 = (0..n).map(|_| rng.complex_normal(2.0).norm_sqr()).sum::<f64>() / n as f64;
        assert!((var - 2.0).abs() < 0.03, "{var}");
    }
}
