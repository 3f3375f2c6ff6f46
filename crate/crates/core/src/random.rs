//! Seeded, portable random streams and an exact Poisson sampler.
//!
//! Every stream is a ChaCha8 generator (RFC 7539 block function, 8 rounds)
//! keyed from `(seed, domain)` through SplitMix64 and positioned on a 64-bit
//! stream id, typically the row-major pixel index. Streams with different ids
//! never share output, so changing one pixel's draws cannot perturb another's
//! and results do not depend on scheduling order.
//!
//! Floating-point work in the sampler goes through `libm`, keeping the
//! sequence bit-identical across platforms.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Stream domains. Keeping them apart means, for example, that a Monte Carlo
/// run with seed 7 does not replay the photon draws of a scene with seed 7.
pub mod domain {
    pub const PIXEL: u64 = 0x5049_5845_4c00_0001;
    pub const MONTE_CARLO: u64 = 0x4d43_0000_0000_0002;
    pub const AUX: u64 = 0x4155_5800_0000_0003;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RandomSource {
    pub seed: u64,
}

impl RandomSource {
    pub const ALGORITHM: &'static str = "chacha8-splitmix64-v1";

    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn stream(&self, domain: u64, id: u64) -> Stream {
        let mut state = self.seed ^ domain.rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(id);
        Stream { rng }
    }

    /// Photon stream for the pixel with row-major index `pixel_index`.
    pub fn pixel_stream(&self, pixel_index: u64) -> Stream {
        self.stream(domain::PIXEL, pixel_index)
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform index in `0..n` (Lemire's multiply-shift, with rejection).
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// One Poisson(mean) draw.
    ///
    /// Means below 10 use inversion by sequential search; larger means use
    /// Hörmann's transformed rejection with squeeze (PTRS, 1993). Both are
    /// exact samplers.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean.is_nan() || mean <= 0.0 {
            return 0;
        }
        if mean < 10.0 {
            self.poisson_inversion(mean)
        } else {
            self.poisson_ptrs(mean)
        }
    }

    fn poisson_inversion(&mut self, mean: f64) -> u64 {
        let u = self.uniform();
        let mut k = 0u64;
        let mut p = libm::exp(-mean);
        let mut cdf = p;
        while u > cdf {
            k += 1;
            p *= mean / k as f64;
            cdf += p;
            // Rounding can leave the running sum a hair below 1.
            if p == 0.0 && k as f64 > mean {
                break;
            }
        }
        k
    }

    fn poisson_ptrs(&mut self, mean: f64) -> u64 {
        let slam = mean.sqrt();
        let loglam = libm::log(mean);
        let b = 0.931 + 2.53 * slam;
        let a = -0.059 + 0.024_83 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = libm::floor((2.0 * a / us + b) * u + mean + 0.43);
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let lhs = libm::log(v) + libm::log(inv_alpha) - libm::log(a / (us * us) + b);
            let rhs = -mean + k * loglam - libm::lgamma(k + 1.0);
            if lhs <= rhs {
                return k as u64;
            }
        }
    }
}
