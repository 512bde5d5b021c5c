//! Replay storage: a FIFO ring with uniform sampling, and the record types kept in it.

use rand::Rng;

use crate::{Error, Result};

/// One environment step for 1-step TD learning.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Set only when the step entered an irrecoverable state.
    pub terminal: bool,
}

/// A reset-episode transition with its realized `horizon`-step successor.
#[derive(Debug, Clone, PartialEq)]
pub struct NStepSegment {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub horizon_state: Vec<f64>,
    pub horizon: usize,
    /// The start state was irrecoverable, so the action had no effect.
    pub absorbing: bool,
}

/// Fixed-capacity FIFO ring buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct RingBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    /// Index of the slot the next push overwrites once full.
    head: usize,
}

impl<T> RingBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self {
            items: Vec::new(),
            capacity,
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends `item`, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Contents from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer)
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// `n` indices drawn uniformly with replacement; `get` resolves them.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        Ok((0..n).map(|_| rng.random_range(0..self.items.len())).collect())
    }

    /// `n` items drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<&T>> {
        Ok(self.sample_indices(rng, n)?.into_iter().map(|i| &self.items[i]).collect())
    }

    /// Internal slot order, for exact checkpoint round-trips.
    pub fn raw_parts(&self) -> (&[T], usize) {
        (&self.items, self.head)
    }

    pub fn from_raw_parts(capacity: usize, items: Vec<T>, head: usize) -> Result<Self> {
        if capacity == 0 || items.len() > capacity || (head != 0 && head >= items.len()) {
            return Err(Error::Archive(format!(
                "inconsistent ring buffer: capacity {capacity}, len {}, head {head}",
                items.len()
            )));
        }
        if items.len() < capacity && head != 0 {
            return Err(Error::Archive("partially filled ring buffer has nonzero head".into()));
        }
        Ok(Self {
            items,
            capacity,
            head,
        })
    }
}
