use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};

/// One mixed training batch: `n - 1` pseudo-labeled samples and exactly one
/// ground-truth sample, as indices into their pools.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSpec {
    pub pseudo: Vec<usize>,
    pub gt: usize,
}

impl BatchSpec {
    pub fn len(&self) -> usize {
        self.pseudo.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Draws a batch of size `n`: the ground-truth member uniformly from
/// `gt_pool` items, the pseudo members without replacement from
/// `pseudo_pool` items.
pub fn build_mixed_batch(pseudo_pool: usize, gt_pool: usize, n: usize, rng: &mut impl Rng) -> Result<BatchSpec> {
    if n == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    if gt_pool == 0 {
        return Err(Error::EmptyInput("ground-truth pool"));
    }
    if n - 1 > pseudo_pool {
        return Err(Error::InvalidConfig(format!(
            "batch of {n} needs {} pseudo-labeled samples, pool has {pseudo_pool}",
            n - 1
        )));
    }
    let pseudo = sample(rng, pseudo_pool, n - 1).into_vec();
    let gt = rng.gen_range(0..gt_pool);
    Ok(BatchSpec { pseudo, gt })
}
