//! Ring buffer of past batches with their behavior probabilities.

use crate::rng::SplitMix64;
use std::collections::VecDeque;

/// One stored transition with the full behavior distribution mu(.|s_t)
/// that generated it. The stored mu never changes afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredStep {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub terminal: bool,
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StoredBatch {
    pub steps: Vec<StoredStep>,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: VecDeque<StoredBatch>,
    capacity: usize,
    rng: SplitMix64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self {
            buf: VecDeque::with_capacity(capacity.min(1024)),
            capacity,
            rng: SplitMix64::new(seed),
        }
    }

    pub fn push(&mut self, batch: StoredBatch) {
        if self.capacity == 0 {
            return;
        }
        if self.buf.len() == self.capacity {
            self.buf.pop_front();
        }
        self.buf.push_back(batch);
    }

    /// Uniformly sample one stored batch, or None when empty.
    pub fn sample(&mut self) -> Option<StoredBatch> {
        if self.buf.is_empty() {
            return None;
        }
        let idx = self.rng.next_below(self.buf.len() as u64) as usize;
        Some(self.buf[idx].clone())
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}
