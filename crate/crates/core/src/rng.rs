//! Counter-based deterministic RNG.
//!
//! Every drawn value is a pure function of (seed, stream name, counter), so
//! initialization order and parallel scheduling cannot change results.

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100_0000_01b3);
    }
    h
}

/// A named stream of deterministic values.
#[derive(Debug, Clone, Copy)]
pub struct Stream {
    key: u64,
}

impl Stream {
    pub fn new(seed: u64, name: &str) -> Self {
        Stream {
            key: mix64(seed ^ fnv1a(name.as_bytes())),
        }
    }

    /// i-th raw value of the stream.
    #[inline]
    pub fn u64_at(&self, i: u64) -> u64 {
        mix64(self.key.wrapping_add((i + 1).wrapping_mul(GAMMA)))
    }

    /// i-th value uniform in [0, 1).
    #[inline]
    pub fn unit_at(&self, i: u64) -> f64 {
        (self.u64_at(i) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// i-th value uniform in [-bound, bound].
    #[inline]
    pub fn symmetric_at(&self, i: u64, bound: f64) -> f64 {
        bound * (2.0 * self.unit_at(i) - 1.0)
    }
}

/// Sequential convenience wrapper over a [`Stream`].
#[derive(Debug, Clone)]
pub struct Counter {
    stream: Stream,
    next: u64,
}

impl Counter {
    pub fn new(seed: u64, name: &str) -> Self {
        Counter {
            stream: Stream::new(seed, name),
            next: 0,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let v = self.stream.u64_at(self.next);
        self.next += 1;
        v
    }

    pub fn next_unit(&mut self) -> f64 {
        let v = self.stream.unit_at(self.next);
        self.next += 1;
        v
    }

    /// Uniform in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    pub fn next_below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_pure_functions() {
        let a = Stream::new(42, "layer.w");
        let b = Stream::new(42, "layer.w");
        assert_eq!(a.u64_at(7), b.u64_at(7));
        assert_ne!(
            Stream::new(42, "layer.w").u64_at(0),
            Stream::new(43, "layer.w").u64_at(0)
        );
        assert_ne!(
            Stream::new(42, "layer.w").u64_at(0),
            Stream::new(42, "layer.b").u64_at(0)
        );
    }

    #[test]
    fn unit_values_in_range() {
        let s = Stream::new(1, "x");
        for i in 0..1000 {
            let v = s.unit_at(i);
            assert!((0.0..1.0).contains(&v));
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = Counter::new(9, "shuffle");
        let mut v: Vec<usize> = (0..100).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..100).collect::<Vec<_>>());
    }
}
