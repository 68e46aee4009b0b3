use crate::linalg::SeededRng;

/// One replay record. The snapshots hold the top-down input of every
/// layer at `t` and at `t + 1`; they are empty for networks without
/// top-down connections.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub obs: Vec<T>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<T>,
    pub done: bool,
    pub topdown: Vec<Vec<T>>,
    pub next_topdown: Vec<Vec<T>>,
}

/// Fixed-capacity ring; the oldest item is overwritten first.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<X> {
    items: Vec<X>,
    capacity: usize,
    next: usize,
}

impl<X> ReplayBuffer<X> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, item: X) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Storage slot `i`; slots are not in insertion order once full.
    pub fn get(&self, i: usize) -> &X {
        &self.items[i]
    }

    /// Items from oldest to newest.
    pub fn iter_ordered(&self) -> impl Iterator<Item = &X> {
        let split = if self.items.len() < self.capacity { 0 } else { self.next };
        self.items[split..].iter().chain(&self.items[..split])
    }

    /// `n` slot indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut SeededRng) -> Vec<usize> {
        (0..n).map(|_| rng.below(self.items.len())).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Vec<&X> {
        self.sample_indices(n, rng).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_eviction() {
        let mut b = ReplayBuffer::new(5);
        for i in 0..8 {
            b.push(i);
        }
        assert_eq!(b.len(), 5);
        assert_eq!(b.iter_ordered().copied().collect::<Vec<_>>(), vec![3, 4, 5, 6, 7]);
    }

    #[test]
    fn partial_fill_order() {
        let mut b = ReplayBuffer::new(5);
        b.push('a');
        b.push('b');
        assert_eq!(b.iter_ordered().collect::<String>(), "ab");
    }
}
