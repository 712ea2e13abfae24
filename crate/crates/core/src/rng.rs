//! Portable counter-based random stream.
//!
//! The generator is SplitMix64 written in counter form. With key `s` and a
//! counter `n` that starts at 0 and is incremented before every draw, the
//! `n`-th 64-bit output is
//!
//! ```text
//! z = s + n * 0x9E3779B97F4A7C15          (wrapping)
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 (wrapping)
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB (wrapping)
//! out = z ^ (z >> 31)
//! ```
//!
//! Derived draws:
//!
//! * `uniform()` = `(out >> 11) * 2^-53`, in `[0, 1)`.
//! * `uniform_open()` = `((out >> 11) + 0.5) * 2^-53`, in `(0, 1)`.
//! * `standard_normal()` uses Box–Muller on two consecutive draws,
//!   `u1 = uniform_open()`, `u2 = uniform()`, returning
//!   `sqrt(-2 ln u1) * cos(2π u2)`. The sine branch is discarded so every
//!   normal consumes exactly two outputs.
//! * `below(n)` = `min(floor(uniform() * n), n - 1)`.
//! * `split()` returns a fresh generator keyed by the next 64-bit output.
//!
//! Any implementation following these rules reproduces the same stream.

use serde::{Deserialize, Serialize};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit outputs consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self
            .seed
            .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_NEG_53
    }

    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * TWO_POW_NEG_53
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform_open();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    /// Independent stream for a concurrent consumer.
    pub fn split(&mut self) -> Rng {
        Rng::new(self.next_u64())
    }

    /// Fisher–Yates, walking from the back.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
