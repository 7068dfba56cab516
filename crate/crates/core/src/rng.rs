//! Counter-based, splittable pseudo-random streams.
//!
//! Every draw is a pure function of `(key, counter)`, so a stream can be
//! reproduced in any language from the algorithm alone:
//!
//! * `next_u64`: `counter += 1; mix64(key + counter * GAMMA)` (wrapping),
//!   which is SplitMix64 seeded with `key`.
//! * `split(id)`: child key `mix64(key ^ mix64(id * GAMMA + SPLIT_SALT))`,
//!   child counter 0. The parent stream is not advanced.
//! * `next_f64`: top 53 bits scaled by 2⁻⁵³, uniform on `[0, 1)`.
//! * `below(n)`: rejection of the lowest `2⁶⁴ mod n` values, then `x mod n`.
//! * `standard_normal`: Box–Muller, cosine branch only, with
//!   `u1 = 1 - next_f64()` so the logarithm never sees zero.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const SPLIT_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 output finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl Stream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            counter: 0,
        }
    }

    /// Independent child stream identified by `id`.
    pub fn split(&self, id: u64) -> Self {
        let salt = mix64(id.wrapping_mul(GAMMA).wrapping_add(SPLIT_SALT));
        Self {
            key: mix64(self.key ^ salt),
            counter: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
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

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    /// `k` distinct indices from `0..n` via a partial Fisher–Yates shuffle,
    /// in draw order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
