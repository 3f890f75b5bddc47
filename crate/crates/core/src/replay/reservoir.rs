use rand::Rng;

use crate::rng::SeededRng;

/// Uniform fixed-size sample of a stream (Vitter's algorithm R).
///
/// The `i`-th offered item is kept with probability `min(K / i, 1)`, replacing a
/// uniformly chosen slot once the reservoir is full.
#[derive(Clone, Debug)]
pub struct Reservoir<T> {
    capacity: usize,
    entries: Vec<T>,
    seen: u64,
    rng: SeededRng,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize, rng: SeededRng) -> Self {
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            seen: 0,
            rng,
        }
    }

    pub(crate) fn from_parts(capacity: usize, entries: Vec<T>, seen: u64, rng: SeededRng) -> Self {
        Self {
            capacity,
            entries,
            seen,
            rng,
        }
    }

    /// Returns whether the item was stored.
    pub fn offer(&mut self, item: T) -> bool {
        self.seen += 1;
        if self.entries.len() < self.capacity {
            self.entries.push(item);
            return true;
        }
        let j = self.rng.gen_range(0..self.seen);
        if (j as usize) < self.capacity {
            self.entries[j as usize] = item;
            true
        } else {
            false
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub(crate) fn rng(&self) -> &SeededRng {
        &self.rng
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Indices of `n` entries: without replacement when `n <= len`, else with.
    pub fn sample_indices(&self, n: usize, rng: &mut impl Rng) -> Vec<usize> {
        let len = self.entries.len();
        if len == 0 {
            return Vec::new();
        }
        if n <= len {
            rand::seq::index::sample(rng, len, n).into_vec()
        } else {
            (0..n).map(|_| rng.gen_range(0..len)).collect()
        }
    }
}
