use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::auc::auc_one_vs_rest;
use super::mlp::{fit_mlp_probe, MlpConfig, MlpProbe};
use crate::error::{Error, Result};

/// Per-class one-vs-rest AUCs of a probe and the Counterfactual Leakage Gap
/// `ΔCL = (1/m) Σ |AUC_i − 0.5|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub attribute: String,
    /// `None` marks a class excluded for lacking positives or negatives.
    pub auc_per_class: Vec<Option<f64>>,
    pub gap: f64,
}

impl LeakageReport {
    /// Gap over the classes that have an AUC; excluded classes do not count
    /// towards `m`.
    pub fn from_aucs(attribute: impl Into<String>, auc_per_class: Vec<Option<f64>>) -> Result<Self> {
        let gap = clg(&auc_per_class)?;
        Ok(LeakageReport {
            attribute: attribute.into(),
            auc_per_class,
            gap,
        })
    }

    pub fn classes(&self) -> usize {
        self.auc_per_class.len()
    }

    pub fn excluded(&self) -> Vec<usize> {
        self.auc_per_class
            .iter()
            .enumerate()
            .filter(|(_, a)| a.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// `(1/m) Σ |AUC_i − 0.5|` over the present entries.
pub fn clg(aucs: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = aucs.iter().flatten().cloned().collect();
    if present.is_empty() {
        return Err(Error::Degenerate("no class has a defined AUC".into()));
    }
    Ok(present.iter().map(|a| (a - 0.5).abs()).sum::<f64>() / present.len() as f64)
}

impl fmt::Display for LeakageReport {
    /// One record: attribute, m, per-class AUC (`-` for excluded), gap.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "attribute = {}", self.attribute)?;
        writeln!(f, "classes = {}", self.classes())?;
        let aucs: Vec<String> = self
            .auc_per_class
            .iter()
            .map(|a| a.map_or_else(|| "-".to_string(), |v| format!("{v:.6}")))
            .collect();
        writeln!(f, "auc = {}", aucs.join(","))?;
        writeln!(f, "gap = {:.6}", self.gap)
    }
}

/// Leakage report from an `N×m` matrix of class scores.
pub fn leakage_from_scores(attribute: &str, scores: &DMatrix<f64>, labels: &[usize]) -> Result<LeakageReport> {
    let m = scores.ncols();
    let mut aucs = Vec::with_capacity(m);
    for class in 0..m {
        let has_pos = labels.contains(&class);
        let has_neg = labels.iter().any(|&l| l != class);
        if !(has_pos && has_neg) {
            aucs.push(None);
            continue;
        }
        let col: Vec<f64> = scores.column(class).iter().cloned().collect();
        aucs.push(Some(auc_one_vs_rest(&col, labels, class)?));
    }
    LeakageReport::from_aucs(attribute, aucs)
}

/// Audit a trained MLP probe on held-out rows.
pub fn leakage_gap(probe: &MlpProbe, x: &DMatrix<f64>, labels: &[usize]) -> Result<LeakageReport> {
    if x.nrows() != labels.len() {
        return Err(Error::Dimension {
            expected: x.nrows(),
            actual: labels.len(),
            context: "held-out labels",
        });
    }
    leakage_from_scores(&probe.attribute, &probe.class_scores(x), labels)
}

/// Train an MLP probe on one representation and audit it on another.
pub fn audit_leakage(
    x_fit: &DMatrix<f64>,
    labels_fit: &[usize],
    x_held: &DMatrix<f64>,
    labels_held: &[usize],
    classes: usize,
    attribute: &str,
    cfg: &MlpConfig,
) -> Result<LeakageReport> {
    let probe = fit_mlp_probe(x_fit, labels_fit, classes, attribute, cfg)?;
    leakage_gap(&probe, x_held, labels_held)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gap_arithmetic() {
        assert_eq!(clg(&[Some(0.5), Some(0.5)]).unwrap(), 0.0);
        assert!((clg(&[Some(0.9), Some(0.5)]).unwrap() - 0.2).abs() < 1e-15);
        assert!((clg(&[Some(0.3), Some(0.8), Some(0.5)]).unwrap() - 0.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn excluded_class_does_not_count() {
        let rep = LeakageReport::from_aucs("a", vec![Some(0.9), None, Some(0.5)]).unwrap();
        assert!((rep.gap - 0.2).abs() < 1e-15);
        assert_eq!(rep.excluded(), vec![1]);
    }

    #[test]
    fn class_absent_from_held_out_is_flagged() {
        let scores = DMatrix::from_row_slice(
            4,
            3,
            &[
                0.8, 0.1, 0.1, //
                0.2, 0.7, 0.1, //
                0.6, 0.3, 0.1, //
                0.1, 0.8, 0.1,
            ],
        );
        let rep = leakage_from_scores("a", &scores, &[0, 1, 0, 1]).unwrap();
        assert_eq!(rep.excluded(), vec![2]);
        assert_eq!(rep.auc_per_class[0], Some(1.0));
    }

    #[test]
    fn display_lists_every_field() {
        let rep = LeakageReport::from_aucs("gender", vec![Some(0.75), None]).unwrap();
        let text = rep.to_string();
        assert!(text.contains("attribute = gender"));
        assert!(text.contains("classes = 2"));
        assert!(text.contains("auc = 0.750000,-"));
        assert!(text.contains("gap = 0.250000"));
    }

    proptest! {
        #[test]
        fn gap_is_bounded_and_zero_only_at_chance(aucs in prop::collection::vec(0.0f64..=1.0, 1..25)) {
            let wrapped: Vec<Option<f64>> = aucs.iter().cloned().map(Some).collect();
            let gap = clg(&wrapped).unwrap();
            prop_assert!((0.0..=0.5).contains(&gap));
            prop_assert_eq!(gap == 0.0, aucs.iter().all(|&a| a == 0.5));
        }
    }
}
