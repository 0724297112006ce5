//! Linear probes that drive null-space projection, MLP probes that audit
//! residual leakage, and the AUC / leakage-gap metrics.

mod auc;
mod leakage;
mod linear;
mod mlp;

pub use auc::{auc_from_groups, auc_one_vs_rest};
pub use leakage::{audit_leakage, clg, leakage_from_scores, leakage_gap, LeakageReport};
pub use linear::{fit_linear_probe, LinearProbe, LinearProbeConfig};
pub use mlp::{fit_mlp_probe, MlpConfig, MlpProbe};

use crate::error::{Error, Result};

pub(crate) fn class_counts(labels: &[usize], classes: usize) -> Vec<usize> {
    let mut counts = vec![0; classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts
}

/// Shape and coverage checks shared by every probe fit.
pub(crate) fn check_labels(n: usize, labels: &[usize], classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Dimension {
            expected: n,
            actual: labels.len(),
            context: "probe labels",
        });
    }
    if classes < 2 {
        return Err(Error::Config(format!("probe needs m ≥ 2 classes, got {classes}")));
    }
    if n < classes {
        return Err(Error::Degenerate(format!("{n} samples for {classes} classes")));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Degenerate(format!("label {bad} outside [0, {classes})")));
    }
    let counts = class_counts(labels, classes);
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Degenerate(format!(
            "class {missing} absent from probe training labels"
        )));
    }
    Ok(())
}
