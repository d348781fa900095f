//! Frozen train/validation partitions.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::storage;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

fn check_sizes(n_total: usize, n_val: usize) -> Result<()> {
    if n_val == 0 || n_val >= n_total {
        return Err(Error::Config(format!(
            "validation size {n_val} must lie in (0, {n_total})"
        )));
    }
    Ok(())
}

/// Uniform random partition of `0..n_total` with `n_val` held out.
pub fn split_train_val(n_total: usize, n_val: usize, seed: u64) -> Result<Split> {
    check_sizes(n_total, n_val)?;
    let mut idx: Vec<usize> = (0..n_total).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok(Split { seed, train, val })
}

/// Partition that spreads the held-out items evenly over label groups.
///
/// Labels are visited in a seeded random order and each visit moves one
/// still-unused item of that label into the validation set, so group
/// shares differ by at most one item.
pub fn split_train_val_stratified(labels: &[String], n_val: usize, seed: u64) -> Result<Split> {
    check_sizes(labels.len(), n_val)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, l) in labels.iter().enumerate() {
        groups.entry(l.as_str()).or_default().push(i);
    }
    let mut pools: Vec<Vec<usize>> = groups.into_values().collect();
    for p in &mut pools {
        p.shuffle(&mut rng);
    }
    pools.shuffle(&mut rng);

    let mut val = Vec::with_capacity(n_val);
    // Never empty a group completely while others still have spare items.
    'outer: for keep_one in [true, false] {
        loop {
            let mut progressed = false;
            for p in pools.iter_mut() {
                if val.len() == n_val {
                    break 'outer;
                }
                let floor = usize::from(keep_one);
                if p.len() > floor {
                    val.push(p.pop().unwrap());
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
    }
    val.sort_unstable();
    let mut train: Vec<usize> = pools.into_iter().flatten().collect();
    train.sort_unstable();
    Ok(Split { seed, train, val })
}

impl Split {
    pub fn save(&self, path: &Path) -> Result<()> {
        storage::write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Loads the split at `path` when it exists and matches `n_total`; otherwise
    /// builds it with `make` and freezes it to `path`.
    pub fn load_or_create(path: &Path, n_total: usize, make: impl FnOnce() -> Result<Split>) -> Result<Split> {
        if path.exists() {
            let split = Split::load(path)?;
            if split.train.len() + split.val.len() != n_total {
                return Err(Error::Format(format!(
                    "frozen split {} covers {} items, dataset has {n_total}",
                    path.display(),
                    split.train.len() + split.val.len()
                )));
            }
            return Ok(split);
        }
        let split = make()?;
        split.save(path)?;
        Ok(split)
    }
}
