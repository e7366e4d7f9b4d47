use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::split_even;

/// One worker's slice of an epoch's permutation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Shard {
    pub worker: usize,
    pub indices: Vec<usize>,
}

fn epoch_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Seeded per-epoch permutation of `0..n_signals` cut into `worker_count`
/// contiguous shards whose sizes differ by at most one.
pub fn partition(n_signals: usize, worker_count: usize, epoch: u64, seed: u64) -> Result<Vec<Shard>> {
    if worker_count == 0 {
        return Err(Error::config("worker_count must be at least 1"));
    }
    if worker_count > n_signals {
        return Err(Error::config(format!(
            "{worker_count} workers cannot share {n_signals} signals"
        )));
    }
    let mut perm: Vec<usize> = (0..n_signals).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
    Ok(split_even(n_signals, worker_count)
        .into_iter()
        .enumerate()
        .map(|(worker, r): (usize, Range<usize>)| Shard {
            worker,
            indices: perm[r].to_vec(),
        })
        .collect())
}
