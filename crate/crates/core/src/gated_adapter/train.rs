//! Task loss with entropy and sparsity penalties, hand-derived gradients, and
//! the momentum-SGD training loop.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::{layer_norm_parts, level1_gate, level2_gate, AdapterParams, LAYER_NORM_EPS};
use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, softmax_in_place};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterTrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight on `Σ α log α` (negative entropy of the level-1 gate).
    pub lambda_entropy: f64,
    /// Weight on `Σ β_k`.
    pub lambda_l1: f64,
    /// Expert rank `r`.
    pub rank: usize,
    /// Standard deviation of the initial `V_k` entries.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for AdapterTrainConfig {
    fn default() -> Self {
        AdapterTrainConfig {
            lr: 1e-2,
            momentum: 0.9,
            epochs: 30,
            batch_size: 32,
            lambda_entropy: 1e-3,
            lambda_l1: 1e-3,
            rank: 8,
            init_scale: 0.01,
            seed: 0,
        }
    }
}

impl AdapterTrainConfig {
    /// Same settings with both penalties switched off.
    pub fn without_regularizers(mut self) -> Self {
        self.lambda_entropy = 0.0;
        self.lambda_l1 = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("adapter.lr must be positive, got {}", self.lr)));
        }
        if !(self.lambda_entropy >= 0.0 && self.lambda_l1 >= 0.0) {
            return Err(Error::Config("adapter penalty weights must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "adapter.momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 || self.rank == 0 {
            return Err(Error::Config("adapter batch_size and rank must be at least 1".into()));
        }
        Ok(())
    }
}

/// Softmax scorer over `I` item embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTaskHead {
    items: DMatrix<f64>,
}

impl ToyTaskHead {
    pub fn new(items: DMatrix<f64>) -> Result<Self> {
        if items.nrows() < 2 {
            return Err(Error::Config(format!(
                "task head needs at least 2 items, got {}",
                items.nrows()
            )));
        }
        Ok(ToyTaskHead { items })
    }

    pub fn items(&self) -> &DMatrix<f64> {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.items.nrows() == 0
    }
}

/// A pooled context with its per-projector removed components `(I − P_k)c`.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedContext {
    pub c: DVector<f64>,
    pub removed: Vec<DVector<f64>>,
    pub target: usize,
}

impl PreparedContext {
    pub fn new(c: DVector<f64>, target: usize, params: &AdapterParams) -> Self {
        let removed = params.projectors.iter().map(|p| &c - p * &c).collect();
        PreparedContext { c, removed, target }
    }

    /// One context per row of `contexts`.
    pub fn batch(contexts: &DMatrix<f64>, targets: &[usize], params: &AdapterParams) -> Result<Vec<Self>> {
        if contexts.nrows() != targets.len() {
            return Err(Error::Dimension {
                expected: contexts.nrows(),
                actual: targets.len(),
                context: "adapter targets",
            });
        }
        if contexts.ncols() != params.d() {
            return Err(Error::Dimension {
                expected: params.d(),
                actual: contexts.ncols(),
                context: "adapter context width",
            });
        }
        Ok((0..contexts.nrows())
            .map(|i| PreparedContext::new(contexts.row(i).transpose(), targets[i], params))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossParts {
    pub total: f64,
    pub task: f64,
    /// `λ_H · mean Σ α log α`.
    pub entropy_term: f64,
    /// `λ₁ · mean Σ β`.
    pub l1_term: f64,
    pub mean_alpha: Vec<f64>,
    pub mean_beta: Vec<f64>,
}

/// Gradients with the shapes of the trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    pub g1: DMatrix<f64>,
    pub gates: Vec<DVector<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub v: Vec<DMatrix<f64>>,
}

impl AdapterGrads {
    fn zeros_like(p: &AdapterParams) -> Self {
        AdapterGrads {
            g1: DMatrix::zeros(p.k(), p.d()),
            gates: vec![DVector::zeros(p.d()); p.k()],
            u: vec![DMatrix::zeros(p.d(), p.rank()); p.k()],
            v: vec![DMatrix::zeros(p.rank(), p.d()); p.k()],
        }
    }

    /// Flattened in the order of [`AdapterParams::trainable`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.g1.as_slice());
        self.gates.iter().for_each(|g| out.extend_from_slice(g.as_slice()));
        self.u.iter().for_each(|u| out.extend_from_slice(u.as_slice()));
        self.v.iter().for_each(|v| out.extend_from_slice(v.as_slice()));
        out
    }
}

struct Accum {
    task: f64,
    entropy: f64,
    l1: f64,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn accumulate(
    ctx: &PreparedContext,
    params: &AdapterParams,
    items: &DMatrix<f64>,
    lambda_entropy: f64,
    lambda_l1: f64,
    weight: f64,
    acc: &mut Accum,
    grads: Option<&mut AdapterGrads>,
) {
    let k = params.k();
    let c = &ctx.c;
    let alpha = level1_gate(c, &params.g1);
    let mut s = c.clone();
    for j in 0..k {
        s.axpy(-alpha[j], &ctx.removed[j], 1.0);
    }
    let (ct, inv_std) = layer_norm_parts(&s, LAYER_NORM_EPS);
    let beta: Vec<f64> = params.gates.iter().map(|g| level2_gate(&ct, g)).collect();
    let t: Vec<DVector<f64>> = params.v.iter().map(|v| v * &s).collect();
    let mut y = &params.o * &s;
    for j in 0..k {
        y.gemv(beta[j], &params.u[j], &t[j], 1.0);
    }
    let z: Vec<f64> = (items * &y).iter().cloned().collect();
    let task = log_sum_exp(&z) - z[ctx.target];
    let neg_entropy: f64 = alpha.iter().filter(|&&a| a > 0.0).map(|&a| a * a.ln()).sum();
    let l1: f64 = beta.iter().sum();
    acc.task += weight * task;
    acc.entropy += weight * lambda_entropy * neg_entropy;
    acc.l1 += weight * lambda_l1 * l1;
    for j in 0..k {
        acc.alpha[j] += weight * alpha[j];
        acc.beta[j] += weight * beta[j];
    }
    let Some(grads) = grads else { return };

    let mut gz = z;
    softmax_in_place(&mut gz);
    gz[ctx.target] -= 1.0;
    let gy = items.tr_mul(&DVector::from_vec(gz));
    let mut ds = params.o.tr_mul(&gy);
    let mut dct = DVector::zeros(params.d());
    for j in 0..k {
        let ut = params.u[j].tr_mul(&gy);
        grads.u[j].ger(weight * beta[j], &gy, &t[j], 1.0);
        let dt = &ut * beta[j];
        grads.v[j].ger(weight, &dt, &s, 1.0);
        ds.gemv_tr(1.0, &params.v[j], &dt, 1.0);
        let dbeta = ut.dot(&t[j]) + lambda_l1;
        let dlogit = dbeta * beta[j] * (1.0 - beta[j]);
        grads.gates[j].axpy(weight * dlogit, &ct, 1.0);
        dct.axpy(dlogit, &params.gates[j], 1.0);
    }
    let n = dct.len() as f64;
    let mean_g = dct.sum() / n;
    let mean_gx = dct.dot(&ct) / n;
    for i in 0..ds.len() {
        ds[i] += inv_std * (dct[i] - mean_g - ct[i] * mean_gx);
    }
    let dalpha: Vec<f64> = (0..k)
        .map(|j| {
            let reg = if alpha[j] > 0.0 {
                lambda_entropy * (alpha[j].ln() + 1.0)
            } else {
                0.0
            };
            -ds.dot(&ctx.removed[j]) + reg
        })
        .collect();
    let inner: f64 = (0..k).map(|j| alpha[j] * dalpha[j]).sum();
    let da = DVector::from_fn(k, |j, _| alpha[j] * (dalpha[j] - inner));
    grads.g1.ger(weight, &da, c, 1.0);
}

fn loss_over(
    data: &[PreparedContext],
    idx: &[usize],
    params: &AdapterParams,
    head: &ToyTaskHead,
    cfg: &AdapterTrainConfig,
    want_grads: bool,
    step: usize,
) -> Result<(LossParts, Option<AdapterGrads>)> {
    if idx.is_empty() {
        return Err(Error::Config("adapter loss needs a non-empty batch".into()));
    }
    if head.items().ncols() != params.d() {
        return Err(Error::Dimension {
            expected: params.d(),
            actual: head.items().ncols(),
            context: "item embedding width",
        });
    }
    let k = params.k();
    let weight = 1.0 / idx.len() as f64;
    let mut acc = Accum {
        task: 0.0,
        entropy: 0.0,
        l1: 0.0,
        alpha: vec![0.0; k],
        beta: vec![0.0; k],
    };
    let mut grads = want_grads.then(|| AdapterGrads::zeros_like(params));
    for &i in idx {
        let ctx = &data[i];
        if ctx.target >= head.len() || ctx.removed.len() != k {
            return Err(Error::Invariant(format!(
                "context {i}: target {} with {} items, {} prepared projections",
                ctx.target,
                head.len(),
                ctx.removed.len()
            )));
        }
        accumulate(
            ctx,
            params,
            head.items(),
            cfg.lambda_entropy,
            cfg.lambda_l1,
            weight,
            &mut acc,
            grads.as_mut(),
        );
    }
    let total = acc.task + acc.entropy + acc.l1;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            context: format!(
                "batch of {} (first row {}): task {} entropy {} l1 {}",
                idx.len(),
                idx[0],
                acc.task,
                acc.entropy,
                acc.l1
            ),
        });
    }
    let parts = LossParts {
        total,
        task: acc.task,
        entropy_term: acc.entropy,
        l1_term: acc.l1,
        mean_alpha: acc.alpha,
        mean_beta: acc.beta,
    };
    Ok((parts, grads))
}

/// Mean loss over `batch` and its gradient with respect to `G1`, `g_k`, `U_k`, `V_k`.
pub fn adapter_loss(
    batch: &[PreparedContext],
    params: &AdapterParams,
    head: &ToyTaskHead,
    cfg: &AdapterTrainConfig,
) -> Result<(LossParts, AdapterGrads)> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (parts, grads) = loss_over(batch, &idx, params, head, cfg, true, 0)?;
    Ok((parts, grads.expect("gradients requested")))
}

/// Loss parts without gradients.
pub fn evaluate_loss(
    data: &[PreparedContext],
    params: &AdapterParams,
    head: &ToyTaskHead,
    cfg: &AdapterTrainConfig,
) -> Result<LossParts> {
    let idx: Vec<usize> = (0..data.len()).collect();
    Ok(loss_over(data, &idx, params, head, cfg, false, 0)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub parts: LossParts,
    /// Total loss on the validation contexts, when given.
    pub validation: Option<f64>,
}

impl EpochRecord {
    pub fn header(k: usize) -> String {
        let mut cols = vec!["epoch", "loss", "task_loss", "entropy_term", "l1_term"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        cols.extend((1..=k).map(|j| format!("mean_alpha_{j}")));
        cols.join(",")
    }
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.parts;
        write!(
            f,
            "{},{:.8},{:.8},{:.8},{:.8}",
            self.epoch, p.total, p.task, p.entropy_term, p.l1_term
        )?;
        for a in &p.mean_alpha {
            write!(f, ",{a:.6}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedAdapter {
    /// Parameters of the selected epoch.
    pub params: AdapterParams,
    /// Epoch 0 is the untrained evaluation.
    pub trace: Vec<EpochRecord>,
    /// Last epoch without validation data, else the epoch with the lowest
    /// validation loss.
    pub selected_epoch: usize,
}

/// Loss factor over the initial loss that counts as a divergent epoch.
const DIVERGENCE_FACTOR: f64 = 10.0;
/// Consecutive divergent epochs that abort training.
const DIVERGENCE_PATIENCE: usize = 3;

/// Momentum SGD over shuffled mini-batches. Frozen tensors are checksummed
/// before and after; a mismatch is an invariant error.
///
/// With `validation` contexts, the returned parameters are those of the
/// epoch (including the untrained epoch 0) with the lowest validation loss.
pub fn train_adapter(
    train: &[PreparedContext],
    validation: Option<&[PreparedContext]>,
    init: &AdapterParams,
    head: &ToyTaskHead,
    cfg: &AdapterTrainConfig,
) -> Result<TrainedAdapter> {
    cfg.validate()?;
    init.validate()?;
    if train.is_empty() {
        return Err(Error::Config("adapter training set is empty".into()));
    }
    let validation = validation.filter(|v| !v.is_empty());
    let val_loss = |p: &AdapterParams| -> Result<Option<f64>> {
        validation
            .map(|v| evaluate_loss(v, p, head, cfg).map(|l| l.total))
            .transpose()
    };
    let frozen = init.frozen_checksums();
    let mut params = init.clone();
    let initial = evaluate_loss(train, &params, head, cfg)?;
    let initial_total = initial.total;
    let mut trace = vec![EpochRecord {
        epoch: 0,
        parts: initial,
        validation: val_loss(&params)?,
    }];
    let mut best = (trace[0].validation.unwrap_or(f64::INFINITY), 0, params.clone());
    let mut theta = params.trainable();
    let mut velocity = vec![0.0; theta.len()];
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut strikes = 0;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let (_, grads) = loss_over(train, chunk, &params, head, cfg, true, step)?;
            let g = grads.expect("gradients requested").flatten();
            for i in 0..theta.len() {
                velocity[i] = cfg.momentum * velocity[i] + g[i];
                theta[i] -= cfg.lr * velocity[i];
            }
            params.set_trainable(&theta);
        }
        let parts = evaluate_loss(train, &params, head, cfg)?;
        let loss = parts.total;
        let validation = val_loss(&params)?;
        if let Some(v) = validation {
            if v < best.0 {
                best = (v, epoch, params.clone());
            }
        }
        trace.push(EpochRecord {
            epoch,
            parts,
            validation,
        });
        if loss > DIVERGENCE_FACTOR * initial_total.abs() {
            strikes += 1;
            if strikes >= DIVERGENCE_PATIENCE {
                return Err(Error::Diverged {
                    epoch,
                    loss,
                    initial: initial_total,
                });
            }
        } else {
            strikes = 0;
        }
    }
    let (params, selected_epoch) = if validation.is_some() {
        (best.2, best.1)
    } else {
        (params, cfg.epochs)
    };
    if params.frozen_checksums() != frozen {
        return Err(Error::Invariant(
            "frozen adapter tensors changed during training".into(),
        ));
    }
    Ok(TrainedAdapter {
        params,
        trace,
        selected_epoch,
    })
}
