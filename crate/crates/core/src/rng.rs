//! SplitMix64 — the pinned deterministic generator.
//!
//! Every random draw in the system (peer sampling, fault injection, trace
//! generation, test state generation) goes through this one algorithm so
//! that a seed fully determines behavior and golden outputs stay portable
//! across implementations.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX1: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX2: u64 = 0x94D0_49BB_1331_11EB;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX2);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, bound)`. Bound 0 is treated as 1. Plain modulo
    /// reduction: the tiny bias is irrelevant here and the draw sequence
    /// stays reproducible from the documented algorithm alone.
    pub fn below(&mut self, bound: u64) -> u64 {
        if bound <= 1 {
            self.next_u64();
            return 0;
        }
        self.next_u64() % bound
    }

    /// Uniform draw in `[lo, hi]` inclusive.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.below(hi - lo + 1)
    }

    /// Uniform f64 in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Bernoulli draw; always consumes exactly one `next_u64`.
    pub fn chance(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Derive an independent stream for a sub-purpose.
    pub fn fork(&self, salt: u64) -> SplitMix64 {
        let mut mixer = SplitMix64::new(self.state ^ salt);
        SplitMix64::new(mixer.next_u64())
    }
}
