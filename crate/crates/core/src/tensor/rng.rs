use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use super::{numel, Dtype, NdArray};
use crate::error::{Error, Result};

/// Deterministic generator behind every random draw in the crate.
///
/// The stream is ChaCha8 keyed through `SeedableRng::seed_from_u64`. A
/// uniform sample takes the top 24 bits of one `u32` output and centers it in
/// its bin, `u = (bits + 0.5) / 2^24`, so `u` lies strictly inside (0, 1)
/// and the mapping is identical on every platform.
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

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform sample in the open interval (0, 1).
    pub fn unit(&mut self) -> f32 {
        let bits = self.inner.next_u32() >> 8;
        (bits as f32 + 0.5) * (1.0 / 16_777_216.0)
    }

    /// Uniform sample in `[low, high)`.
    pub fn uniform(&mut self, low: f32, high: f32) -> f32 {
        let v = low + (high - low) * self.unit();
        if v >= high {
            f32::from_bits(high.to_bits() - 1).max(low)
        } else {
            v.max(low)
        }
    }

    /// Standard normal sample (Box-Muller, one value per call).
    pub fn normal(&mut self) -> f32 {
        let u1 = self.unit() as f64;
        let u2 = self.unit() as f64;
        ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        (self.inner.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

pub fn seeded_uniform(shape: &[usize], low: f32, high: f32, rng: &mut Rng) -> Result<NdArray> {
    if low.partial_cmp(&high) != Some(std::cmp::Ordering::Less) {
        return Err(Error::InvalidRange { low, high });
    }
    let data = (0..numel(shape)).map(|_| rng.uniform(low, high)).collect();
    NdArray::from_vec_dtype(shape, data, Dtype::F32)
}
