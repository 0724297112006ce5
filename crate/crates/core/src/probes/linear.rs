//! Multinomial logistic regression fit by full-batch gradient descent.
//!
//! The step size is `1/L` for a Lipschitz bound `L` on the gradient of the
//! penalized loss, so every accepted step is a descent step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_labels, class_counts};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearProbeConfig {
    pub max_iters: usize,
    /// Weight of `½‖W‖²` (bias is not penalized).
    pub l2: f64,
    /// Stop once the largest gradient entry falls below this.
    pub tol: f64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        LinearProbeConfig {
            max_iters: 300,
            l2: 1e-4,
            tol: 1e-6,
        }
    }
}

/// Softmax probe `p(class | x) = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub attribute: String,
    /// `m×p`, one row per class.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub train_accuracy: f64,
    /// Penalized loss before each step and after the last one.
    pub loss_trace: Vec<f64>,
}

impl LinearProbe {
    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    /// `N×m` class logits.
    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = x * self.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += self.bias.transpose();
        }
        z
    }

    /// `N×m` softmax probabilities.
    pub fn class_scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        softmax_rows(self.logits(x))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        argmax_rows(&self.logits(x))
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        accuracy(&self.predict(x), labels)
    }

    /// Class rows with the softmax gauge removed: `w_i − w̄`.
    pub fn centered_directions(&self) -> Vec<DVector<f64>> {
        let m = self.weights.nrows();
        let mean = self.weights.row_mean().transpose();
        (0..m).map(|i| self.weights.row(i).transpose() - &mean).collect()
    }
}

pub(crate) fn softmax_rows(mut z: DMatrix<f64>) -> DMatrix<f64> {
    let m = z.ncols();
    let mut buf = vec![0.0; m];
    for i in 0..z.nrows() {
        for k in 0..m {
            buf[k] = z[(i, k)];
        }
        softmax_in_place(&mut buf);
        for k in 0..m {
            z[(i, k)] = buf[k];
        }
    }
    z
}

pub(crate) fn argmax_rows(z: &DMatrix<f64>) -> Vec<usize> {
    (0..z.nrows())
        .map(|i| {
            let row = z.row(i);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn accuracy(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    hits as f64 / labels.len().max(1) as f64
}

/// Upper bound on `λ_max([X 1]ᵀ[X 1] / N)` by power iteration with a margin.
fn gram_spectral_bound(x: &DMatrix<f64>) -> f64 {
    let (n, p) = x.shape();
    let mut v = DVector::from_element(p + 1, 1.0 / ((p + 1) as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..60 {
        // u = [X 1] v, w = [X 1]ᵀ u / N
        let mut u = x * v.rows(0, p);
        u.add_scalar_mut(v[p]);
        let mut w = DVector::zeros(p + 1);
        w.rows_mut(0, p).copy_from(&x.tr_mul(&u));
        w[p] = u.sum();
        w /= n as f64;
        let norm = w.norm();
        if norm == 0.0 {
            return 1.0;
        }
        lambda = norm;
        v = w / norm;
    }
    // power iteration approaches λ_max from below
    lambda * 1.1 + 1e-12
}

/// Penalized mean cross-entropy and its gradient.
fn loss_and_grad(
    x: &DMatrix<f64>,
    labels: &[usize],
    w: &DMatrix<f64>,
    b: &DVector<f64>,
    l2: f64,
) -> (f64, DMatrix<f64>, DVector<f64>) {
    let n = x.nrows();
    let m = w.nrows();
    let mut z = x * w.transpose();
    let mut loss = 0.0;
    let mut buf = vec![0.0; m];
    for i in 0..n {
        for k in 0..m {
            buf[k] = z[(i, k)] + b[k];
        }
        loss += log_sum_exp(&buf) - buf[labels[i]];
        softmax_in_place(&mut buf);
        buf[labels[i]] -= 1.0;
        for k in 0..m {
            z[(i, k)] = buf[k] / n as f64;
        }
    }
    loss /= n as f64;
    loss += 0.5 * l2 * w.norm_squared();
    // z now holds (P − Y)/N
    let gw = z.tr_mul(x) + w * l2;
    let gb = DVector::from_fn(m, |k, _| z.column(k).sum());
    (loss, gw, gb)
}

/// Fit a multinomial probe on `x` (rows are samples) for `classes` classes.
pub fn fit_linear_probe(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    attribute: &str,
    cfg: &LinearProbeConfig,
) -> Result<LinearProbe> {
    check_labels(x.nrows(), labels, classes)?;
    if cfg.l2.is_nan() || cfg.l2 < 0.0 || cfg.max_iters == 0 {
        return Err(Error::Config(format!("bad linear probe config {cfg:?}")));
    }
    let n = x.nrows() as f64;
    let p = x.ncols();
    let counts = class_counts(labels, classes);

    let mut w = DMatrix::zeros(classes, p);
    // Start from the intercept-only optimum: predicts the majority class.
    let mut b = DVector::from_fn(classes, |k, _| (counts[k] as f64 / n).ln());
    let step = 1.0 / (0.5 * gram_spectral_bound(x) + cfg.l2);

    let mut trace = Vec::with_capacity(cfg.max_iters + 1);
    for iter in 0..cfg.max_iters {
        let (loss, gw, gb) = loss_and_grad(x, labels, &w, &b, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: iter,
                context: format!("linear probe for `{attribute}`"),
            });
        }
        trace.push(loss);
        let gmax = gw.amax().max(gb.amax());
        if gmax < cfg.tol {
            break;
        }
        w -= gw * step;
        b -= gb * step;
    }
    let (final_loss, _, _) = loss_and_grad(x, labels, &w, &b, cfg.l2);
    trace.push(final_loss);

    let mut probe = LinearProbe {
        attribute: attribute.to_string(),
        weights: w,
        bias: b,
        train_accuracy: 0.0,
        loss_trace: trace,
    };
    probe.train_accuracy = probe.accuracy(x, labels);
    Ok(probe)
}
