//! FIFO replay buffer of flattened transitions.

use std::collections::VecDeque;

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::policy::Transition;
use crate::rollout::SessionTrajectory;

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
    insert_count: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Argument("buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
            insert_count: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Transitions ever inserted, including evicted ones.
    pub fn insert_count(&self) -> u64 {
        self.insert_count
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.storage.get(i)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// Appends a trajectory's transitions in order, evicting the oldest
    /// beyond capacity. The trajectory must end in exactly one terminal
    /// transition.
    pub fn push(&mut self, trajectory: &SessionTrajectory) -> Result<()> {
        trajectory.validate()?;
        self.push_transitions(trajectory.transitions.iter().cloned());
        Ok(())
    }

    fn push_transitions<I: IntoIterator<Item = Transition>>(&mut self, items: I) {
        for t in items {
            if self.storage.len() == self.capacity {
                self.storage.pop_front();
            }
            self.storage.push_back(t);
            self.insert_count += 1;
        }
    }

    /// Positions of `batch_size` distinct transitions chosen uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        if self.storage.len() < batch_size {
            return Err(Error::NotReady(format!(
                "buffer holds {} transitions, batch needs {batch_size}",
                self.storage.len()
            )));
        }
        Ok(index::sample(rng, self.storage.len(), batch_size).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(batch_size, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}
