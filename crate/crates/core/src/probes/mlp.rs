//! Two-layer ReLU MLP probe trained by mini-batch SGD with momentum.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::check_labels;
use super::linear::{accuracy, argmax_rows, softmax_rows};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax_in_place};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden: 128,
            epochs: 50,
            lr: 1e-3,
            momentum: 0.9,
            batch_size: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpProbe {
    pub attribute: String,
    /// `hidden×d`
    pub w1: DMatrix<f64>,
    pub b1: DVector<f64>,
    /// `m×hidden`
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl MlpProbe {
    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    pub fn classes(&self) -> usize {
        self.w2.nrows()
    }

    fn hidden_activations(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut h = x * self.w1.transpose();
        for mut row in h.row_iter_mut() {
            row += self.b1.transpose();
            row.apply(|v| *v = v.max(0.0));
        }
        h
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = self.hidden_activations(x) * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            row += self.b2.transpose();
        }
        z
    }

    /// `N×m` softmax probabilities; column `i` is the class-`i` score.
    pub fn class_scores(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        softmax_rows(self.logits(x))
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<usize> {
        argmax_rows(&self.logits(x))
    }

    pub fn accuracy(&self, x: &DMatrix<f64>, labels: &[usize]) -> f64 {
        accuracy(&self.predict(x), labels)
    }
}

fn uniform_init(rng: &mut ChaCha20Rng, rows: usize, cols: usize, fan_in: usize) -> DMatrix<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..bound))
}

pub fn fit_mlp_probe(
    x: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    attribute: &str,
    cfg: &MlpConfig,
) -> Result<MlpProbe> {
    check_labels(x.nrows(), labels, classes)?;
    if cfg.hidden == 0 || cfg.batch_size == 0 || cfg.lr.is_nan() || cfg.lr <= 0.0 || !(0.0..1.0).contains(&cfg.momentum)
    {
        return Err(Error::Config(format!("bad MLP config {cfg:?}")));
    }
    let (n, d) = x.shape();
    let hidden = cfg.hidden;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut probe = MlpProbe {
        attribute: attribute.to_string(),
        w1: uniform_init(&mut rng, hidden, d, d),
        b1: DVector::from_iterator(hidden, uniform_init(&mut rng, hidden, 1, d).iter().cloned()),
        w2: uniform_init(&mut rng, classes, hidden, hidden),
        b2: DVector::from_iterator(classes, uniform_init(&mut rng, classes, 1, hidden).iter().cloned()),
    };
    let mut v_w1 = DMatrix::zeros(hidden, d);
    let mut v_b1 = DVector::zeros(hidden);
    let mut v_w2 = DMatrix::zeros(classes, hidden);
    let mut v_b2 = DVector::zeros(classes);

    let mut order: Vec<usize> = (0..n).collect();
    let mut logit_buf = vec![0.0; classes];
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let b = batch.len();
            let xb = DMatrix::from_fn(b, d, |i, j| x[(batch[i], j)]);
            let h = probe.hidden_activations(&xb);
            let mut g = &h * probe.w2.transpose();
            let mut loss = 0.0;
            for i in 0..b {
                for k in 0..classes {
                    logit_buf[k] = g[(i, k)] + probe.b2[k];
                }
                let y = labels[batch[i]];
                loss += log_sum_exp(&logit_buf) - logit_buf[y];
                softmax_in_place(&mut logit_buf);
                logit_buf[y] -= 1.0;
                for k in 0..classes {
                    g[(i, k)] = logit_buf[k] / b as f64;
                }
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    context: format!("MLP probe for `{attribute}`"),
                });
            }
            // g = dL/dlogits (b×m)
            let gw2 = g.tr_mul(&h);
            let gb2 = DVector::from_fn(classes, |k, _| g.column(k).sum());
            let mut gh = &g * &probe.w2;
            gh.zip_apply(&h, |gv, hv| {
                if hv <= 0.0 {
                    *gv = 0.0
                }
            });
            let gw1 = gh.tr_mul(&xb);
            let gb1 = DVector::from_fn(hidden, |k, _| gh.column(k).sum());

            v_w1 = &v_w1 * cfg.momentum + gw1;
            v_b1 = &v_b1 * cfg.momentum + gb1;
            v_w2 = &v_w2 * cfg.momentum + gw2;
            v_b2 = &v_b2 * cfg.momentum + gb2;
            probe.w1 -= &v_w1 * cfg.lr;
            probe.b1 -= &v_b1 * cfg.lr;
            probe.w2 -= &v_w2 * cfg.lr;
            probe.b2 -= &v_b2 * cfg.lr;
            step += 1;
        }
    }
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn xor_data(n: usize, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let centers = [(-1.0, -1.0, 0), (1.0, 1.0, 0), (-1.0, 1.0, 1), (1.0, -1.0, 1)];
        let mut x = DMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (cx, cy, l) = centers[i % 4];
            let e0: f64 = StandardNormal.sample(&mut rng);
            let e1: f64 = StandardNormal.sample(&mut rng);
            x[(i, 0)] = cx + 0.2 * e0;
            x[(i, 1)] = cy + 0.2 * e1;
            labels.push(l);
        }
        (x, labels)
    }

    #[test]
    fn learns_xor_clusters() {
        let (x, labels) = xor_data(400, 5);
        let probe = fit_mlp_probe(&x, &labels, 2, "xor", &MlpConfig::default()).unwrap();
        let acc = probe.accuracy(&x, &labels);
        assert!(acc >= 0.95, "accuracy {acc}");
    }

    #[test]
    fn separable_data_is_classified_perfectly() {
        let (mut x, _) = xor_data(200, 6);
        let labels: Vec<usize> = (0..200).map(|i| (x[(i, 0)] > 0.0) as usize).collect();
        for i in 0..200 {
            x[(i, 1)] *= 0.1;
        }
        let probe = fit_mlp_probe(&x, &labels, 2, "g", &MlpConfig::default()).unwrap();
        assert_eq!(probe.accuracy(&x, &labels), 1.0);
    }

    #[test]
    fn same_seed_same_weights() {
        let (x, labels) = xor_data(64, 7);
        let cfg = MlpConfig {
            epochs: 3,
            ..MlpConfig::default()
        };
        let a = fit_mlp_probe(&x, &labels, 2, "g", &cfg).unwrap();
        let b = fit_mlp_probe(&x, &labels, 2, "g", &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scores_are_probabilities() {
        let (x, labels) = xor_data(32, 8);
        let cfg = MlpConfig {
            epochs: 1,
            hidden: 8,
            ..MlpConfig::default()
        };
        let probe = fit_mlp_probe(&x, &labels, 2, "g", &cfg).unwrap();
        let s = probe.class_scores(&x);
        for row in s.row_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
