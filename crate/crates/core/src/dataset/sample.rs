//! BPR triple sampling.

use crate::dataset::SplitIndex;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A batch of (user, positive, negative) training triples. Positives
/// are train-tagged; negatives avoid the user's full positive set
/// across all splits, since pairing an observed (but held-out) item as
/// a negative would corrupt the training target.
#[derive(Clone, Debug)]
pub struct TripleBatch {
    pub users: Vec<usize>,
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    /// Sorted unique items appearing in the batch (positives and
    /// negatives); the contrastive subset under in-batch scope.
    pub fn unique_items(&self) -> Vec<usize> {
        let mut items: Vec<usize> = self.pos.iter().chain(self.neg.iter()).copied().collect();
        items.sort_unstable();
        items.dedup();
        items
    }
}

/// Uniform sampler over train interactions with rejection-sampled
/// negatives. Holds private RNG state; use one sampler per thread.
pub struct TripleSampler<'a> {
    index: &'a SplitIndex,
    rng: ChaCha8Rng,
    /// Users found with every item positive, skipped with a warning.
    pub saturated_user_skips: usize,
}

impl<'a> TripleSampler<'a> {
    pub fn new(index: &'a SplitIndex, rng: ChaCha8Rng) -> Result<Self> {
        if index.train.is_empty() {
            return Err(Error::Config("cannot sample from an empty train split".into()));
        }
        Ok(Self {
            index,
            rng,
            saturated_user_skips: 0,
        })
    }

    pub fn sample(&mut self, batch_size: usize) -> TripleBatch {
        let mut batch = TripleBatch {
            users: Vec::with_capacity(batch_size),
            pos: Vec::with_capacity(batch_size),
            neg: Vec::with_capacity(batch_size),
        };
        while batch.users.len() < batch_size {
            let (u, i) = self.index.train[self.rng.gen_range(0..self.index.train.len())];
            let positives = &self.index.per_user_all[u];
            if positives.len() >= self.index.n_items {
                self.saturated_user_skips += 1;
                continue;
            }
            let j = loop {
                let j = self.rng.gen_range(0..self.index.n_items);
                if positives.binary_search(&j).is_err() {
                    break j;
                }
            };
            batch.users.push(u);
            batch.pos.push(i);
            batch.neg.push(j);
        }
        batch
    }
}
