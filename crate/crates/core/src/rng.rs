//! Counter-based splittable random number generator.
//!
//! Every stream is identified by a 64-bit key. The `i`-th output of a stream
//! is a pure function of `(key, i)`:
//!
//! ```text
//! out(key, i) = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)    (wrapping u64)
//! mix64(z)    = splitmix64 finalizer:
//!               z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//!               z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//!               z ^ (z >> 31)
//! ```
//!
//! A root stream has key `mix64(seed)`. Child streams are derived from the
//! parent key alone, never from its counter, so splitting needs no shared
//! mutable state:
//!
//! ```text
//! split(label)   = key' = mix64(key ^ mix64(fnv1a64(label) + GOLDEN))
//! split_u64(tag) = key' = mix64(key ^ mix64(tag + GOLDEN) ^ 0xD1B54A32D192ED03)
//! ```
//!
//! Uniform reals take the top 53 bits: `(out >> 11) * 2^-53`, in `[0, 1)`.
//! Normal deviates use Box-Muller on two uniforms (cosine branch only) with
//! the pure-Rust `libm` routines, so the stream is identical on every IEEE-754
//! platform.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const INDEX_SALT: u64 = 0xD1B5_4A32_D192_ED03;

#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a over the UTF-8 bytes of `label`.
pub fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitRng {
    key: u64,
    counter: u64,
}

/// Shorthand for [`SplitRng::new`].
pub fn make_rng(seed: u64) -> SplitRng {
    SplitRng::new(seed)
}

impl SplitRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix64(seed),
            counter: 0,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Independent child stream named by `label`.
    pub fn split(&self, label: &str) -> SplitRng {
        SplitRng {
            key: mix64(self.key ^ mix64(fnv1a64(label).wrapping_add(GOLDEN))),
            counter: 0,
        }
    }

    /// Independent child stream indexed by an integer tag.
    pub fn split_u64(&self, tag: u64) -> SplitRng {
        SplitRng {
            key: mix64(self.key ^ mix64(tag.wrapping_add(GOLDEN)) ^ INDEX_SALT),
            counter: 0,
        }
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_word() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    ///
    /// Plain modulo reduction; the bias is below `n / 2^64`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        self.next_word() % n
    }

    /// Standard normal deviate (Box-Muller, cosine branch).
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    /// Log-normal deviate with parameters of the underlying normal.
    pub fn log_normal(&mut self, mu: f64, sigma: f64) -> f64 {
        libm::exp(mu + sigma * self.standard_normal())
    }
}

impl RngCore for SplitRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
