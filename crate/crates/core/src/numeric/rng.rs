//! Seeded random streams.
//!
//! Each `(seed, stream)` pair selects its own xoshiro256** sequence. State
//! word `i` is `a_i ^ rotl(b_i, 17)`, where `a` and `b` are the first four
//! SplitMix64 outputs seeded with the seed and the (salted) stream index.
//! Variates are derived from the raw 64-bit outputs with fixed formulas, so
//! draws are bit-identical across platforms.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::{SplitMix64, Xoshiro256StarStar};

use crate::error::{Error, Result};

const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Draw {
    Uniform01,
    StandardNormal,
    Bernoulli(f64),
}

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    gen: Xoshiro256StarStar,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut a = SplitMix64::seed_from_u64(seed);
        let mut b = SplitMix64::seed_from_u64(stream ^ STREAM_SALT);
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            let w = a.next_u64() ^ b.next_u64().rotate_left(17);
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        RngState {
            seed,
            stream,
            gen: Xoshiro256StarStar::from_seed(bytes),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform01()
    }

    /// Box–Muller on two uniforms; only the cosine branch is used so the
    /// generator carries no cached spare.
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform01(); // (0, 1]
        let u2 = self.uniform01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::domain("bernoulli", format!("p = {p} outside [0, 1]")));
        }
        Ok(self.uniform01() < p)
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.uniform01() * n as f64) as usize).min(n - 1)
    }

    pub fn draw(&mut self, kind: Draw) -> Result<f64> {
        match kind {
            Draw::Uniform01 => Ok(self.uniform01()),
            Draw::StandardNormal => Ok(self.standard_normal()),
            Draw::Bernoulli(p) => Ok(if self.bernoulli(p)? { 1.0 } else { 0.0 }),
        }
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
