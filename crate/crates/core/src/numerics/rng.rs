//! Counter-based random numbers.
//!
//! A value is a pure function of `(key, index)`: the SplitMix64 output
//! function applied to `key + (index + 1) * GOLDEN`. Parallel kernels ask for
//! the value at an element's flat index, so samples never depend on which
//! worker produced them or in what order.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed counter-based generator. Cheap to copy; holds no mutable state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    key: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            key: mix64(seed ^ 0x6a09_e667_f3bc_c909),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Child stream `id`. Distinct ids give distinct keys; children of
    /// children are keyed by the whole path.
    pub fn fork(&self, id: u64) -> Rng {
        Rng {
            seed: self.seed,
            key: mix64(self.key ^ mix64(id.wrapping_add(0xbb67_ae85_84ca_a73b))),
        }
    }

    #[inline]
    pub fn bits(&self, index: u64) -> u64 {
        mix64(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&self, index: u64) -> f64 {
        (self.bits(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Sequential view over this key, starting at index 0.
    pub fn stream(&self) -> RngStream {
        RngStream {
            rng: *self,
            counter: 0,
        }
    }
}

/// Stateful cursor over an [`Rng`] for code that consumes values one by one
/// (weight init, dataset noise, shuffles).
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: Rng,
    counter: u64,
}

impl RngStream {
    pub fn next_u64(&mut self) -> u64 {
        let v = self.rng.bits(self.counter);
        self.counter += 1;
        v
    }

    pub fn next_f64(&mut self) -> f64 {
        let v = self.rng.uniform(self.counter);
        self.counter += 1;
        v
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller; consumes two values.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64(); // (0, 1]
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`. Modulo bias is below 2^-40 for the sizes
    /// used here.
    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let a = Rng::new(42);
        let b = Rng::new(42);
        for i in 0..100 {
            assert_eq!(a.bits(i), b.bits(i));
        }
        assert_ne!(Rng::new(42).bits(0), Rng::new(43).bits(0));
    }

    #[test]
    fn forks_differ_and_are_stable() {
        let root = Rng::new(1);
        assert_eq!(root.fork(3), root.fork(3));
        assert_ne!(root.fork(3).bits(0), root.fork(4).bits(0));
        assert_ne!(root.fork(0).bits(0), root.bits(0));
        assert_ne!(root.fork(1).fork(2).bits(9), root.fork(2).fork(1).bits(9));
    }

    #[test]
    fn stream_matches_indexed_values() {
        let r = Rng::new(5);
        let mut s = r.stream();
        for i in 0..10 {
            assert_eq!(s.next_f64(), r.uniform(i));
        }
    }

    #[test]
    fn uniform_in_unit_interval_and_roughly_flat() {
        let r = Rng::new(99);
        let n = 200_000;
        let mut bins = [0usize; 10];
        for i in 0..n {
            let u = r.uniform(i);
            assert!((0.0..1.0).contains(&u));
            bins[(u * 10.0) as usize] += 1;
        }
        for b in bins {
            assert!((b as f64 / n as f64 - 0.1).abs() < 0.005);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = Rng::new(8).stream();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02, "{mean}");
        assert!((var - 1.0).abs() < 0.03, "{var}");
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        Rng::new(0).stream().shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
