use std::collections::VecDeque;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::TeacherTransition;
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const DEFAULT_SYNTHETIC_CAPACITY: usize = 1000;

/// Bounded FIFO of transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayBuffer {
    items: VecDeque<TeacherTransition>,
    capacity: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "buffer capacity must be positive");
        Self {
            items: VecDeque::with_capacity(capacity.min(4096)),
            capacity,
            pushed: 0,
        }
    }

    pub fn push(&mut self, t: TeacherTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
        self.pushed += 1;
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

    /// Pushes ever made, including evicted ones.
    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn iter(&self) -> impl Iterator<Item = &TeacherTransition> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&TeacherTransition> {
        self.items.get(i)
    }

    pub fn sample<'a>(&'a self, rng: &mut Rng) -> Option<&'a TeacherTransition> {
        (!self.items.is_empty()).then(|| &self.items[rng.random_range(0..self.items.len())])
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}

/// `ceil(psi * batch_size)` uniform draws from `real`, the rest from `syn`.
/// An empty `syn` falls back to an all-real batch.
pub fn mix_batch(
    real: &ReplayBuffer,
    syn: &ReplayBuffer,
    psi: f64,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<TeacherTransition>> {
    if real.is_empty() {
        return Err(Error::CannotTrain);
    }
    assert!((0.0..=1.0).contains(&psi), "psi must lie in [0, 1]");
    let mut n_real = ((psi * batch_size as f64).ceil() as usize).min(batch_size);
    if syn.is_empty() && n_real < batch_size {
        log::warn!("synthetic buffer is empty; training on real transitions only");
        n_real = batch_size;
    }
    let mut out = Vec::with_capacity(batch_size);
    for _ in 0..n_real {
        out.push(real.sample(rng).unwrap().clone());
    }
    for _ in n_real..batch_size {
        out.push(syn.sample(rng).unwrap().clone());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ParamVector;
    use crate::rng::seeded;
    use crate::teacher::Origin;
    use proptest::prelude::*;

    fn tr(tag: f64, origin: Origin) -> TeacherTransition {
        TeacherTransition::new(vec![tag, 0.0], ParamVector::new(vec![0.0]), tag, vec![0.0, tag], origin).unwrap()
    }

    #[test]
    fn evicts_oldest() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..4 {
            b.push(tr(i as f64, Origin::Real));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.get(0).unwrap().reward, 1.0);
        assert_eq!(b.total_pushed(), 4);
        assert_eq!(ReplayBuffer::new(DEFAULT_SYNTHETIC_CAPACITY).capacity(), 1000);
    }

    #[test]
    fn mixing_ratios() {
        let mut real = ReplayBuffer::new(100);
        let mut syn = ReplayBuffer::new(100);
        for i in 0..10 {
            real.push(tr(i as f64, Origin::Real));
            syn.push(tr(i as f64, Origin::Synthetic));
        }
        let mut rng = seeded(0);
        let count = |b: &[TeacherTransition]| b.iter().filter(|t| t.origin == Origin::Real).count();
        assert_eq!(count(&mix_batch(&real, &syn, 1.0, 64, &mut rng).unwrap()), 64);
        let b = mix_batch(&real, &syn, 0.25, 64, &mut rng).unwrap();
        assert_eq!((count(&b), b.len()), (16, 64));
        let b = mix_batch(&real, &ReplayBuffer::new(5), 0.25, 64, &mut rng).unwrap();
        assert_eq!(count(&b), 64);
        assert!(matches!(
            mix_batch(&ReplayBuffer::new(5), &syn, 0.25, 64, &mut rng),
            Err(Error::CannotTrain)
        ));
    }

    proptest! {
        #[test]
        fn fifo_matches_model(cap in 1usize..12, n in 0usize..60) {
            let mut b = ReplayBuffer::new(cap);
            for i in 0..n {
                b.push(tr(i as f64, Origin::Real));
            }
            let expect: Vec<f64> = (n.saturating_sub(cap)..n).map(|i| i as f64).collect();
            let got: Vec<f64> = b.iter().map(|t| t.reward).collect();
            prop_assert_eq!(got, expect);
        }
    }
}
