//! Seedable pseudo-random stream.
//!
//! The generator is xoshiro256++ whose 256-bit state is filled from the seed
//! by SplitMix64. Child streams are derived with [`RngState::derive`] (seed +
//! stream id) or [`RngState::split`] (next parent word becomes the child
//! seed), so independent jobs never share a state. Gaussian draws use the
//! Box–Muller transform on the uniform stream; the second value of each pair
//! is cached and is part of the state, so a restored state continues the
//! exact same sequence.

use rand_core::{impls, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RngState {
    seed: u64,
    s: [u64; 4],
    spare_normal: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        RngState {
            seed,
            s,
            spare_normal: None,
        }
    }

    /// Independent stream number `stream` for a base seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        let mut sm = seed ^ stream.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA);
        Self::new(splitmix64(&mut sm))
    }

    /// Child stream seeded from the next word of this one.
    pub fn split(&mut self) -> Self {
        let child_seed = self.next_word();
        Self::new(child_seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn next_word(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0].wrapping_add(s[3]).rotate_left(23).wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(v) = self.spare_normal.take() {
            return v;
        }
        // u1 in (0, 1] keeps the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare_normal = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// Bernoulli draw with success probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Raw state for checkpointing: seed, xoshiro words, cached Gaussian.
    pub fn to_parts(&self) -> (u64, [u64; 4], Option<f64>) {
        (self.seed, self.s, self.spare_normal)
    }

    pub fn from_parts(seed: u64, s: [u64; 4], spare_normal: Option<f64>) -> Self {
        RngState {
            seed,
            s,
            spare_normal,
        }
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = RngState::derive(7, 0);
        let mut b = RngState::derive(7, 1);
        let xs: Vec<u64> = (0..4).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..4).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngState::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn parts_round_trip_continues_stream() {
        let mut a = RngState::new(99);
        a.standard_normal();
        let (seed, s, spare) = a.to_parts();
        assert!(spare.is_some());
        let mut b = RngState::from_parts(seed, s, spare);
        for _ in 0..50 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }
}
