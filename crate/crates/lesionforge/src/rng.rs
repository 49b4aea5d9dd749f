//! Deterministic random number generation.
//!
//! All randomness in the crate flows through [`Stream`], a SplitMix64
//! generator extended with hash-based stream splitting. A stream remembers
//! the seed it was created from, so `child(tag)` derives a sub-stream from
//! `(seed, tag)` alone — independent of how many values were already drawn
//! from the parent. That property is what makes batch items, ellipsoids and
//! displacement-field components reproducible regardless of evaluation
//! order or parallelism.

/// 64-bit finalizer used by SplitMix64 (Stafford's mix13 variant).
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Hash a sequence of 64-bit parts into a single seed.
///
/// Used for child-seed derivation: `hash64(&[master, item, stage])`.
pub fn hash64(parts: &[u64]) -> u64 {
    // pi in hex as the starting point, nothing magic beyond fixed
    let mut h: u64 = 0x2435_F6A8_885A_308D;
    for &p in parts {
        h = mix64(h ^ mix64(p.wrapping_add(GOLDEN_GAMMA)));
    }
    h
}

/// SplitMix64 stream with order-independent child derivation.
#[derive(Debug, Clone)]
pub struct Stream {
    seed: u64,
    state: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Stream { seed, state: seed }
    }

    /// Seed this stream was created with.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derive a child stream from this stream's seed and a tag.
    ///
    /// The child depends only on `(seed, tag)`, never on draw position.
    pub fn child(&self, tag: u64) -> Stream {
        Stream::new(hash64(&[self.seed, tag]))
    }

    /// Child stream keyed by two tags, e.g. `(item_index, stage)`.
    pub fn child2(&self, a: u64, b: u64) -> Stream {
        Stream::new(hash64(&[self.seed, a, b]))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n). Uses the multiply-shift reduction.
    pub fn uniform_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform integer in [lo, hi] inclusive.
    pub fn uniform_int(&mut self, lo: u32, hi: u32) -> u32 {
        debug_assert!(lo <= hi);
        lo + self.uniform_index((hi - lo + 1) as usize) as u32
    }

    /// Standard normal via Box-Muller. Consumes two uniforms per call.
    pub fn normal(&mut self) -> f64 {
        // guard against ln(0)
        let u1 = (self.next_f64()).max(f64::MIN_POSITIVE);
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }
}

/// Stage tags used when deriving child seeds. Keeping them in one place
/// documents the crate's stream layout.
pub mod stage {
    pub const MASK: u64 = 0x01;
    pub const ELLIPSOID: u64 = 0x02;
    pub const ELASTIC: u64 = 0x03;
    pub const PERLIN: u64 = 0x04;
    pub const TEXTURE: u64 = 0x05;
    pub const PERTURB: u64 = 0x06;
    pub const PLACEMENT: u64 = 0x07;
    pub const ITEM: u64 = 0x08;
    pub const SAMPLE: u64 = 0x09;
}
