//! Batch inference and Hit@k on the toy task.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use super::AdapterParams;
use crate::error::{Error, Result};

/// Adapter outputs `y` for each row of `contexts`.
pub fn adapter_outputs(params: &AdapterParams, contexts: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if contexts.ncols() != params.d() {
        return Err(Error::Dimension {
            expected: params.d(),
            actual: contexts.ncols(),
            context: "adapter input width",
        });
    }
    let mut out = DMatrix::zeros(contexts.nrows(), params.d());
    for i in 0..contexts.nrows() {
        let y = params.forward(&contexts.row(i).transpose());
        out.row_mut(i).copy_from(&y.transpose());
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HitRates {
    pub ks: Vec<usize>,
    pub rates: Vec<f64>,
}

impl HitRates {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.rates[i])
    }
}

/// Hit@k with one positive and `negatives` items sampled without replacement
/// from the rest. The positive's rank is the number of negatives scoring
/// strictly higher.
pub fn hit_rates(
    reps: &DMatrix<f64>,
    targets: &[usize],
    items: &DMatrix<f64>,
    ks: &[usize],
    negatives: usize,
    seed: u64,
) -> Result<HitRates> {
    let n_items = items.nrows();
    if reps.nrows() != targets.len() || reps.nrows() == 0 {
        return Err(Error::Dimension {
            expected: reps.nrows(),
            actual: targets.len(),
            context: "hit-rate targets",
        });
    }
    if reps.ncols() != items.ncols() {
        return Err(Error::Dimension {
            expected: items.ncols(),
            actual: reps.ncols(),
            context: "hit-rate representation width",
        });
    }
    if negatives + 1 > n_items {
        return Err(Error::Config(format!(
            "need at least {} items for {negatives} sampled negatives, have {n_items}",
            negatives + 1
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; ks.len()];
    let scores = reps * items.transpose();
    for (i, &target) in targets.iter().enumerate() {
        if target >= n_items {
            return Err(Error::Invariant(format!("target {target} out of {n_items} items")));
        }
        let positive = scores[(i, target)];
        let rank = sample(&mut rng, n_items - 1, negatives)
            .iter()
            .map(|j| if j >= target { j + 1 } else { j })
            .filter(|&j| scores[(i, j)] > positive)
            .count();
        for (slot, &k) in ks.iter().enumerate() {
            if rank < k {
                hits[slot] += 1;
            }
        }
    }
    let n = targets.len() as f64;
    Ok(HitRates {
        ks: ks.to_vec(),
        rates: hits.iter().map(|&h| h as f64 / n).collect(),
    })
}
