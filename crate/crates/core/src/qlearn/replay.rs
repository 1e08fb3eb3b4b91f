use rand::seq::index;
use rand::Rng;

use crate::error::LearnError;
use crate::netmodel::ActionSet;

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub s: Vec<S>,
    pub a: usize,
    pub r: S,
    pub s_next: Vec<S>,
    pub done: bool,
    /// Admissible actions in `s_next`.
    pub next_mask: ActionSet,
}

/// Fixed-capacity ring; the oldest transition is overwritten first.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayMemory<S> {
    capacity: usize,
    buf: Vec<Transition<S>>,
    cursor: usize,
}

impl<S: Clone> ReplayMemory<S> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayMemory { capacity, buf: Vec::new(), cursor: 0 }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn push(&mut self, t: Transition<S>) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        let split = if self.buf.len() < self.capacity { 0 } else { self.cursor };
        self.buf[split..].iter().chain(&self.buf[..split])
    }

    /// `batch` distinct transitions drawn uniformly.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition<S>>, LearnError> {
        if self.buf.len() < batch {
            return Err(LearnError::InsufficientSamples { have: self.buf.len(), need: batch });
        }
        Ok(index::sample(rng, self.buf.len(), batch).into_iter().map(|i| &self.buf[i]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn tr(k: usize) -> Transition<f64> {
        Transition { s: vec![k as f64], a: 0, r: 0.0, s_next: vec![], done: false, next_mask: ActionSet::FULL }
    }

    proptest! {
        #[test]
        fn fifo_eviction(cap in 1usize..40, extra in 0usize..60) {
            let mut m = ReplayMemory::new(cap);
            for k in 0..cap + extra {
                m.push(tr(k));
            }
            let kept: Vec<usize> = m.iter().map(|t| t.s[0] as usize).collect();
            let expect: Vec<usize> = (extra..cap + extra).collect();
            prop_assert_eq!(kept, expect);
        }
    }

    #[test]
    fn sample_needs_enough() {
        let mut m = ReplayMemory::new(10);
        m.push(tr(0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        assert_eq!(m.sample(2, &mut rng).unwrap_err(), LearnError::InsufficientSamples { have: 1, need: 2 });
        m.push(tr(1));
        let s = m.sample(2, &mut rng).unwrap();
        assert_ne!(s[0].s, s[1].s);
    }
}
