//! Two-level gated low-rank adapter.
//!
//! Level 1 mixes frozen per-attribute projectors with softmax weights
//! `α = softmax(G1·c)` into a soft projection `h⋆`. Level 2 adds rank-`r`
//! expert patches `U_k V_k` on top of a frozen output map `O`, each opened by
//! a sigmoid gate on the layer-normalized summary of `h⋆`.

mod eval;
mod train;

pub use eval::{adapter_outputs, hit_rates, HitRates};
pub use train::{
    adapter_loss, evaluate_loss, train_adapter, AdapterGrads, AdapterTrainConfig, EpochRecord, LossParts,
    PreparedContext, ToyTaskHead, TrainedAdapter,
};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, sigmoid};

/// Guard added to the variance in [`layer_normalize`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Mean of the token rows.
pub fn pool_context(tokens: &DMatrix<f64>) -> Result<DVector<f64>> {
    if tokens.nrows() == 0 {
        return Err(Error::Degenerate("cannot pool an empty sequence".into()));
    }
    Ok(tokens.row_mean().transpose())
}

/// `softmax(G1·c)`.
pub fn level1_gate(c: &DVector<f64>, g1: &DMatrix<f64>) -> DVector<f64> {
    assert_eq!(g1.ncols(), c.len(), "gate width must match context");
    let mut logits: Vec<f64> = (g1 * c).iter().cloned().collect();
    linalg::softmax_in_place(&mut logits);
    DVector::from_vec(logits)
}

/// `h⋆ = h − Σ_k α_k (I − P_k) h`.
pub fn soft_project(h: &DVector<f64>, alpha: &DVector<f64>, projectors: &[DMatrix<f64>]) -> Result<DVector<f64>> {
    check_mixture(h.len(), alpha, projectors)?;
    let mut out = h.clone();
    for (k, p) in projectors.iter().enumerate() {
        if alpha[k] != 0.0 {
            let removed = h - p * h;
            out.axpy(-alpha[k], &removed, 1.0);
        }
    }
    Ok(out)
}

/// `∂h⋆/∂h = I − Σ_k α_k (I − P_k)`.
pub fn soft_project_jacobian(alpha: &DVector<f64>, projectors: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let d = projectors.first().map_or(0, |p| p.nrows());
    check_mixture(d, alpha, projectors)?;
    let mut jac = DMatrix::identity(d, d);
    for (k, p) in projectors.iter().enumerate() {
        jac -= (DMatrix::identity(d, d) - p) * alpha[k];
    }
    Ok(jac)
}

fn check_mixture(d: usize, alpha: &DVector<f64>, projectors: &[DMatrix<f64>]) -> Result<()> {
    if alpha.len() != projectors.len() {
        return Err(Error::Dimension {
            expected: projectors.len(),
            actual: alpha.len(),
            context: "mixture weights vs projectors",
        });
    }
    for p in projectors {
        if p.shape() != (d, d) {
            return Err(Error::Dimension {
                expected: d,
                actual: p.nrows(),
                context: "projector size",
            });
        }
    }
    Ok(())
}

/// `σ(g_kᵀ c̃)`.
pub fn level2_gate(c_tilde: &DVector<f64>, g_k: &DVector<f64>) -> f64 {
    sigmoid(g_k.dot(c_tilde))
}

/// `(c − mean c) / sqrt(var c + eps)` with population variance and no affine.
pub fn layer_normalize(c: &DVector<f64>, eps: f64) -> DVector<f64> {
    layer_norm_parts(c, eps).0
}

/// Normalized vector and `1/sqrt(var + eps)`.
pub(crate) fn layer_norm_parts(c: &DVector<f64>, eps: f64) -> (DVector<f64>, f64) {
    let n = c.len() as f64;
    let mean = c.sum() / n;
    let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (c.map(|v| (v - mean) * inv_std), inv_std)
}

/// `y = O·h⋆ + Σ_k β_k U_k (V_k h⋆)`.
pub fn adapter_forward(h_star: &DVector<f64>, params: &AdapterParams, beta: &DVector<f64>) -> DVector<f64> {
    let mut y = &params.o * h_star;
    for k in 0..params.k() {
        if beta[k] != 0.0 {
            let t = &params.v[k] * h_star;
            y.gemv(beta[k], &params.u[k], &t, 1.0);
        }
    }
    y
}

/// Adapter state: trainable gates and experts plus the frozen maps.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    /// Level-1 gate, `K×d`.
    pub g1: DMatrix<f64>,
    /// Level-2 gate keys `g_k`, each of length `d`.
    pub gates: Vec<DVector<f64>>,
    /// Expert up-projections `U_k`, `d×r`.
    pub u: Vec<DMatrix<f64>>,
    /// Expert down-projections `V_k`, `r×d`.
    pub v: Vec<DMatrix<f64>>,
    /// Frozen output map.
    pub o: DMatrix<f64>,
    /// Frozen per-attribute projectors.
    pub projectors: Vec<DMatrix<f64>>,
}

impl AdapterParams {
    /// Zero gates and up-projections, `N(0, init_scale²)` down-projections.
    pub fn init(
        projectors: Vec<DMatrix<f64>>,
        o: DMatrix<f64>,
        rank: usize,
        init_scale: f64,
        seed: u64,
    ) -> Result<Self> {
        let k = projectors.len();
        let d = o.nrows();
        if k == 0 || rank == 0 {
            return Err(Error::Config(
                "adapter needs at least one projector and rank ≥ 1".into(),
            ));
        }
        let normal = Normal::new(0.0, init_scale)
            .map_err(|e| Error::Config(format!("bad adapter init scale {init_scale}: {e}")))?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let v = (0..k)
            .map(|_| DMatrix::from_fn(rank, d, |_, _| normal.sample(&mut rng)))
            .collect();
        let params = AdapterParams {
            g1: DMatrix::zeros(k, d),
            gates: vec![DVector::zeros(d); k],
            u: vec![DMatrix::zeros(d, rank); k],
            v,
            o,
            projectors,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn k(&self) -> usize {
        self.projectors.len()
    }

    pub fn d(&self) -> usize {
        self.o.nrows()
    }

    pub fn rank(&self) -> usize {
        self.u.first().map_or(0, |u| u.ncols())
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d, r) = (self.k(), self.d(), self.rank());
        let dim = |expected: usize, actual: usize, context: &'static str| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::Dimension {
                    expected,
                    actual,
                    context,
                })
            }
        };
        if k == 0 || r == 0 || d == 0 {
            return Err(Error::Invariant(format!(
                "adapter needs K, r, d ≥ 1 (got {k}, {r}, {d})"
            )));
        }
        dim(d, self.o.ncols(), "output map must be square")?;
        dim(k, self.g1.nrows(), "level-1 gate rows")?;
        dim(d, self.g1.ncols(), "level-1 gate columns")?;
        dim(k, self.gates.len(), "level-2 gate count")?;
        dim(k, self.u.len(), "expert count (U)")?;
        dim(k, self.v.len(), "expert count (V)")?;
        for i in 0..k {
            dim(d, self.gates[i].len(), "level-2 gate width")?;
            dim(d, self.u[i].nrows(), "U rows")?;
            dim(r, self.u[i].ncols(), "U rank")?;
            dim(r, self.v[i].nrows(), "V rank")?;
            dim(d, self.v[i].ncols(), "V columns")?;
            dim(d, self.projectors[i].nrows(), "projector rows")?;
            dim(d, self.projectors[i].ncols(), "projector columns")?;
        }
        Ok(())
    }

    /// Checksums of the frozen tensors: every projector, then `O`.
    pub fn frozen_checksums(&self) -> Vec<[u8; 32]> {
        self.projectors
            .iter()
            .chain(std::iter::once(&self.o))
            .map(linalg::checksum)
            .collect()
    }

    pub fn trainable_len(&self) -> usize {
        let (k, d, r) = (self.k(), self.d(), self.rank());
        k * d + k * d + 2 * k * d * r
    }

    /// Trainable coordinates flattened (G1, gates, U, V; column-major within each).
    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        out.extend_from_slice(self.g1.as_slice());
        self.gates.iter().for_each(|g| out.extend_from_slice(g.as_slice()));
        self.u.iter().for_each(|u| out.extend_from_slice(u.as_slice()));
        self.v.iter().for_each(|v| out.extend_from_slice(v.as_slice()));
        out
    }

    pub fn set_trainable(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.trainable_len());
        let mut rest = values;
        let mut fill = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        fill(self.g1.as_mut_slice());
        self.gates.iter_mut().for_each(|g| fill(g.as_mut_slice()));
        self.u.iter_mut().for_each(|u| fill(u.as_mut_slice()));
        self.v.iter_mut().for_each(|v| fill(v.as_mut_slice()));
    }

    /// Full per-sequence forward from a pooled context.
    pub fn forward(&self, c: &DVector<f64>) -> DVector<f64> {
        let alpha = level1_gate(c, &self.g1);
        let s = soft_project(c, &alpha, &self.projectors).expect("validated shapes");
        let c_tilde = layer_normalize(&s, LAYER_NORM_EPS);
        let beta = DVector::from_iterator(self.k(), self.gates.iter().map(|g| level2_gate(&c_tilde, g)));
        adapter_forward(&s, self, &beta)
    }
}
