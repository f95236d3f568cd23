use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic epoch-wise mini-batch sampler.
///
/// Each epoch is a fresh permutation drawn from `(seed, epoch)`. Batches are
/// consecutive chunks of that permutation; the short tail is emitted.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    batch_size: usize,
    seed: u64,
    len: usize,
    epoch: u64,
    cursor: usize,
    order: Vec<usize>,
}

impl BatchSampler {
    pub fn new(batch_size: usize, seed: u64, len: usize) -> Self {
        assert!(batch_size > 0, "batch size must be positive");
        let mut s = BatchSampler {
            batch_size,
            seed,
            len,
            epoch: 0,
            cursor: 0,
            order: Vec::new(),
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.epoch);
        self.order = (0..self.len).collect();
        self.order.shuffle(&mut rng);
        self.cursor = 0;
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    /// Epoch the next batch will be drawn from.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.len.div_ceil(self.batch_size)
    }

    /// Indices of the next batch; rolls into the next epoch when the current
    /// one is exhausted. Empty only when the underlying collection is empty.
    pub fn next_indices(&mut self) -> Vec<usize> {
        if self.len == 0 {
            return Vec::new();
        }
        if self.cursor >= self.len {
            self.epoch += 1;
            self.reshuffle();
        }
        let end = (self.cursor + self.batch_size).min(self.len);
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }

    pub fn next_batch<'a, T>(&mut self, items: &'a [T]) -> Vec<&'a T> {
        assert_eq!(items.len(), self.len, "sampler built for a different collection");
        self.next_indices().into_iter().map(|i| &items[i]).collect()
    }
}

/// Mixes a tag into a seed (SplitMix64 finalizer) so independent streams can
/// share one user-facing seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
