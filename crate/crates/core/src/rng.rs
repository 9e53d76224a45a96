//! Deterministic random streams.
//!
//! Every random decision in the crate draws from [`SplitMix64`], a 64-bit
//! generator whose full definition fits in a few lines, so episode streams
//! can be reproduced in any language from the seed alone:
//!
//! ```text
//! state += 0x9E3779B97F4A7C15
//! z = state
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! return z ^ (z >> 31)
//! ```
//!
//! Uniform reals take the top 53 bits: `(next >> 11) * 2^-53`.
//! Uniform integers below `n` use rejection on `next % n` with the
//! threshold `(2^64 - n) % n`. Normal draws use the Box-Muller cosine
//! branch on two consecutive uniforms, with `u1` mapped to `1 - u1` so the
//! log argument is never zero.
//!
//! Subsystem streams are split off a run seed with [`SplitMix64::derive`],
//! which mixes the seed with a fixed per-subsystem tag (see [`Stream`]).

/// Subsystem tags for seed splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Lps = 2,
    Init = 3,
    Eval = 4,
    Backbone = 5,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Independent stream for one subsystem: `mix(seed ^ mix(tag * GOLDEN))`.
    pub fn derive(seed: u64, stream: Stream) -> Self {
        Self::derive_tagged(seed, stream as u64)
    }

    pub fn derive_tagged(seed: u64, tag: u64) -> Self {
        SplitMix64::new(mix(seed ^ mix(tag.wrapping_mul(GOLDEN))))
    }

    /// Child stream for worker `index`, leaving `self` untouched.
    pub fn split(&self, index: u64) -> Self {
        Self::derive_tagged(self.state, index.wrapping_add(0x100))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        let threshold = n.wrapping_neg() % n;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % n;
            }
        }
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        lo + self.below((hi - lo) as u64 + 1) as i64
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn choose<'a, T>(&mut self, items: &'a [T]) -> Option<&'a T> {
        if items.is_empty() {
            None
        } else {
            Some(&items[self.below(items.len() as u64) as usize])
        }
    }
}
