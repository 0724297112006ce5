use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::EmbeddingSet;
use crate::error::{Error, Result};

/// Uniform random partition of `0..n` into train/val/test index sets.
///
/// Train and val sizes are floored, test takes the remainder. Each returned
/// index set is sorted ascending.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<[Vec<usize>; 3]> {
    let (train, val, test) = fractions;
    if [train, val, test].iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (train + val + test - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, not 1",
            train + val + test
        )));
    }
    // The epsilon keeps exact products like 0.8·10 from flooring to 7.
    let n_train = (train * n as f64 + 1e-9).floor() as usize;
    let n_val = (val * n as f64 + 1e-9).floor() as usize;
    let n_test = n.saturating_sub(n_train + n_val);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "N={n} too small for fractions {fractions:?} (sizes {n_train}/{n_val}/{n_test})"
        )));
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut parts = [
        perm[..n_train].to_vec(),
        perm[n_train..n_train + n_val].to_vec(),
        perm[n_train + n_val..].to_vec(),
    ];
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn split_dataset(
    set: &EmbeddingSet,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(EmbeddingSet, EmbeddingSet, EmbeddingSet)> {
    let [a, b, c] = split_indices(set.n(), fractions, seed)?;
    Ok((set.subset(&a)?, set.subset(&b)?, set.subset(&c)?))
}
