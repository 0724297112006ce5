//! One-vs-rest AUC as the Mann–Whitney statistic.

use crate::error::{Error, Result};

/// `P(score_pos > score_neg) + ½·P(tie)` over all positive/negative pairs.
///
/// Computed from tie-averaged ranks in `O(N log N)`; the result is the same
/// rational number exhaustive pair counting gives.
pub fn auc_one_vs_rest(scores: &[f64], labels: &[usize], positive: usize) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: labels.len(),
            actual: scores.len(),
            context: "AUC scores vs labels",
        });
    }
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (&s, &l) in scores.iter().zip(labels) {
        if l == positive {
            pos.push(s);
        } else {
            neg.push(s);
        }
    }
    auc_from_groups(&pos, &neg)
}

/// AUC of positive scores against negative scores.
pub fn auc_from_groups(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Degenerate(format!(
            "AUC needs both classes ({} positive, {} negative)",
            pos.len(),
            neg.len()
        )));
    }
    if pos.iter().chain(neg).any(|s| !s.is_finite()) {
        return Err(Error::Degenerate("non-finite score".into()));
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the positive rank sum stays an integer even with averaged ties.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j average to (i+1+j)/2
        let twice_avg = (i + 1 + j) as u128;
        let n_pos = all[i..j].iter().filter(|(_, p)| *p).count() as u128;
        twice_rank_sum += twice_avg * n_pos;
        i = j;
    }
    let np = pos.len() as u128;
    let nn = neg.len() as u128;
    // 2U = 2R − np(np+1)
    let twice_u = twice_rank_sum - np * (np + 1);
    Ok(twice_u as f64 / (2 * np * nn) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute(scores: &[f64], labels: &[usize], positive: usize) -> f64 {
        let mut twice = 0u64;
        let mut pairs = 0u64;
        for (i, &a) in scores.iter().enumerate() {
            if labels[i] != positive {
                continue;
            }
            for (j, &b) in scores.iter().enumerate() {
                if labels[j] == positive {
                    continue;
                }
                pairs += 1;
                twice += if a > b {
                    2
                } else if a == b {
                    1
                } else {
                    0
                };
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn perfect_separation() {
        let s = [0.9, 0.8, 0.1, 0.2];
        let l = [1, 1, 0, 0];
        assert_eq!(auc_one_vs_rest(&s, &l, 1).unwrap(), 1.0);
        assert_eq!(auc_one_vs_rest(&s, &l, 0).unwrap(), 0.0);
    }

    #[test]
    fn all_ties_give_half() {
        assert_eq!(auc_one_vs_rest(&[0.3; 6], &[0, 1, 2, 0, 1, 2], 2).unwrap(), 0.5);
    }

    #[test]
    fn hand_counted_pairs() {
        let s = [0.7, 0.2, 0.5, 0.1];
        let l = [1, 1, 0, 0];
        assert_eq!(auc_one_vs_rest(&s, &l, 1).unwrap(), 0.75);
    }

    #[test]
    fn degenerate_class_is_an_error() {
        assert!(auc_one_vs_rest(&[0.1, 0.2], &[1, 1], 1).is_err());
        assert!(auc_one_vs_rest(&[0.1, 0.2], &[0, 0], 1).is_err());
    }

    proptest! {
        #[test]
        fn matches_pair_counting_exactly(
            raw in prop::collection::vec((0u8..12, 0usize..3), 2..200),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 * 0.1).collect();
            let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
            for c in 0..3 {
                let has_pos = labels.contains(&c);
                let has_neg = labels.iter().any(|&l| l != c);
                if has_pos && has_neg {
                    prop_assert_eq!(auc_one_vs_rest(&scores, &labels, c).unwrap(), brute(&scores, &labels, c));
                }
            }
        }

        #[test]
        fn invariant_under_increasing_transform(
            raw in prop::collection::vec((-5.0f64..5.0, 0usize..2), 4..100),
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s).collect();
            let labels: Vec<usize> = raw.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.contains(&0) && labels.contains(&1));
            let moved: Vec<f64> = scores.iter().map(|s| (0.5 * s).exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(
                auc_one_vs_rest(&scores, &labels, 1).unwrap(),
                auc_one_vs_rest(&moved, &labels, 1).unwrap()
            );
        }
    }
}
