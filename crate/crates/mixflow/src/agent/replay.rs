//! Prioritized replay over a sum tree with O(log N) sampling.

use crate::mdp::{Action, Observation};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("buffer holds {len} entries, need at least {need}")]
    Underfull { len: usize, need: usize },
}

/// One n-step transition. `return_sum` already folds the discounted
/// rewards of `steps` consecutive decisions; a missing bootstrap marks a
/// terminal tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub observation: Observation,
    pub action: Action,
    pub return_sum: f64,
    pub steps: usize,
    pub bootstrap: Option<Observation>,
}

impl ReplayEntry {
    pub fn is_terminal(&self) -> bool {
        self.bootstrap.is_none()
    }
}

/// Binary sum tree over leaf weights; leaves sit at `capacity - 1 ..`.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    tree: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        SumTree {
            capacity,
            tree: vec![0.0; 2 * capacity - 1],
        }
    }

    fn total(&self) -> f64 {
        self.tree[0]
    }

    fn get(&self, leaf: usize) -> f64 {
        self.tree[leaf + self.capacity - 1]
    }

    fn set(&mut self, leaf: usize, value: f64) {
        let mut ix = leaf + self.capacity - 1;
        let delta = value - self.tree[ix];
        self.tree[ix] = value;
        while ix > 0 {
            ix = (ix - 1) / 2;
            self.tree[ix] += delta;
        }
    }

    /// Leaf whose cumulative span contains `s` in `[0, total)`.
    fn find(&self, mut s: f64) -> usize {
        let mut ix = 0;
        loop {
            let left = 2 * ix + 1;
            if left >= self.tree.len() {
                return ix + 1 - self.capacity;
            }
            if s < self.tree[left] || self.tree[left + 1] == 0.0 {
                ix = left;
            } else {
                s -= self.tree[left];
                ix = left + 1;
            }
        }
    }
}

/// A sampled batch plus the bookkeeping the learner needs to update
/// priorities afterwards.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub entries: Vec<ReplayEntry>,
    /// Importance weights `(N P(i))^-beta`, normalized by the batch max.
    pub weights: Vec<f64>,
}

/// Ring buffer with proportional prioritized sampling: entry `i` is drawn
/// with probability `p_i^omega / sum_j p_j^omega`.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    entries: Vec<Option<ReplayEntry>>,
    tree: SumTree,
    omega: f64,
    cursor: usize,
    len: usize,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, omega: f64) -> Self {
        assert!(capacity > 0);
        PrioritizedReplay {
            entries: vec![None; capacity],
            tree: SumTree::new(capacity),
            omega,
            cursor: 0,
            len: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.entries.len()
    }

    /// Insert with the maximum priority seen so far, so fresh transitions
    /// are sampled at least once.
    pub fn push(&mut self, entry: ReplayEntry) -> usize {
        let ix = self.cursor;
        self.entries[ix] = Some(entry);
        self.tree.set(ix, self.max_priority.powf(self.omega));
        self.cursor = (self.cursor + 1) % self.entries.len();
        self.len = (self.len + 1).min(self.entries.len());
        ix
    }

    pub fn update_priority(&mut self, index: usize, priority: f64) {
        debug_assert!(priority > 0.0);
        self.max_priority = self.max_priority.max(priority);
        self.tree.set(index, priority.powf(self.omega));
    }

    /// Independent proportional draws with importance weights at the given
    /// `beta`.
    pub fn sample(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampledBatch, ReplayError> {
        if self.len < batch_size {
            return Err(ReplayError::Underfull {
                len: self.len,
                need: batch_size,
            });
        }
        let total = self.tree.total();
        let mut indices = Vec::with_capacity(batch_size);
        let mut entries = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        let n = self.len as f64;
        for _ in 0..batch_size {
            let s = rng.random::<f64>() * total;
            let ix = self.tree.find(s).min(self.len - 1);
            let p = self.tree.get(ix) / total;
            indices.push(ix);
            entries.push(self.entries[ix].clone().expect("sampled live entry"));
            weights.push((n * p).powf(-beta));
        }
        let max_w = weights.iter().fold(f64::MIN, |a, &b| a.max(b));
        for w in weights.iter_mut() {
            *w /= max_w;
        }
        Ok(SampledBatch {
            indices,
            entries,
            weights,
        })
    }
}
