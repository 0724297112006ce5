//! Isotropic perturbation and the random Fourier feature lift.
//!
//! `φ_σ(h) = √(2/D)·cos(Ω h + b)` with `Ω ~ N(0, σ⁻²)` entrywise and
//! `b ~ U[0, 2π)`, so `E⟨φ(x), φ(y)⟩ = exp(−‖x−y‖²/(2σ²))`. The lifted
//! vector is the concatenation `[h̃; φ_σ(h̃)]`.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Frozen random-lift parameters. `omega` and `phases` are a pure function of
/// `(seed, d, dim, sigma)` and are regenerated rather than stored.
#[derive(Debug, Clone, PartialEq)]
pub struct RffSpec {
    d: usize,
    dim: usize,
    sigma: f64,
    eta: f64,
    seed: u64,
    /// `D×d` frequency matrix.
    omega: DMatrix<f64>,
    /// Length-`D` phases in `[0, 2π)`.
    phases: DVector<f64>,
}

pub fn sample_rff(d: usize, dim: usize, sigma: f64, eta: f64, seed: u64) -> Result<RffSpec> {
    if d == 0 || dim == 0 {
        return Err(Error::Config(format!("RFF needs d ≥ 1 and D ≥ 1, got d={d}, D={dim}")));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Config(format!("RFF bandwidth must be positive, got {sigma}")));
    }
    if !(eta.is_finite() && eta >= 0.0) {
        return Err(Error::Config(format!("perturbation scale must be ≥ 0, got {eta}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let inv_sigma = 1.0 / sigma;
    let mut omega = DMatrix::zeros(dim, d);
    for i in 0..dim {
        for j in 0..d {
            let z: f64 = StandardNormal.sample(&mut rng);
            omega[(i, j)] = z * inv_sigma;
        }
    }
    let phases = DVector::from_fn(dim, |_, _| {
        let b = rng.random::<f64>() * TAU;
        if b >= TAU {
            0.0
        } else {
            b
        }
    });
    Ok(RffSpec {
        d,
        dim,
        sigma,
        eta,
        seed,
        omega,
        phases,
    })
}

impl RffSpec {
    /// Spec with explicit frequencies and phases; used for hand-built cases.
    pub fn from_parts(omega: DMatrix<f64>, phases: DVector<f64>, sigma: f64, eta: f64) -> Result<Self> {
        if omega.nrows() != phases.len() || omega.nrows() == 0 || omega.ncols() == 0 {
            return Err(Error::Config("omega rows must match phase count".into()));
        }
        if phases.iter().any(|b| !(0.0..TAU).contains(b)) {
            return Err(Error::Config("phases must lie in [0, 2π)".into()));
        }
        Ok(RffSpec {
            d: omega.ncols(),
            dim: omega.nrows(),
            sigma,
            eta,
            seed: 0,
            omega,
            phases,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of random features `D`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    /// Stable identifier recorded in projector provenance.
    pub fn id(&self) -> String {
        format!(
            "rff:d={},D={},sigma={:e},eta={:e},seed={}",
            self.d, self.dim, self.sigma, self.eta, self.seed
        )
    }

    /// `φ_σ(h)`, the `D` random features alone.
    pub fn features(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.d, h.len())?;
        let scale = (2.0 / self.dim as f64).sqrt();
        Ok((0..self.dim)
            .map(|i| {
                let row = self.omega.row(i);
                let arg: f64 = row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.phases[i];
                scale * arg.cos()
            })
            .collect())
    }
}

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::Dimension {
            expected,
            actual,
            context: "RFF input dimension",
        });
    }
    Ok(())
}

/// `h̃ = h + ε`, `ε ~ N(0, η²I)`. With `η = 0` the input is returned unchanged.
pub fn perturb<R: Rng + ?Sized>(h: &[f64], eta: f64, rng: &mut R) -> Vec<f64> {
    if eta == 0.0 {
        return h.to_vec();
    }
    h.iter()
        .map(|&x| {
            let z: f64 = StandardNormal.sample(rng);
            x + eta * z
        })
        .collect()
}

/// Row-wise [`perturb`] of an `N×d` matrix.
pub fn perturb_matrix<R: Rng + ?Sized>(x: &DMatrix<f64>, eta: f64, rng: &mut R) -> DMatrix<f64> {
    if eta == 0.0 {
        return x.clone();
    }
    let mut out = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let z: f64 = StandardNormal.sample(rng);
            out[(i, j)] += eta * z;
        }
    }
    out
}

/// `[h̃; φ_σ(h̃)]`.
pub fn lift(h_tilde: &[f64], spec: &RffSpec) -> Result<Vec<f64>> {
    let mut out = h_tilde.to_vec();
    out.extend(spec.features(h_tilde)?);
    Ok(out)
}

/// Row-wise [`lift`] of an `N×d` matrix into `N×(d+D)`.
pub fn lift_matrix(x: &DMatrix<f64>, spec: &RffSpec) -> Result<DMatrix<f64>> {
    check_dim(spec.d, x.ncols())?;
    let (n, d) = x.shape();
    let projected = x * spec.omega.transpose();
    let scale = (2.0 / spec.dim as f64).sqrt();
    let mut out = DMatrix::zeros(n, d + spec.dim);
    out.columns_mut(0, d).copy_from(x);
    for k in 0..spec.dim {
        let b = spec.phases[k];
        let src = projected.column(k);
        let mut dst = out.column_mut(d + k);
        for i in 0..n {
            dst[i] = scale * (src[i] + b).cos();
        }
    }
    Ok(out)
}

/// Feature map applied to (perturbed) embeddings before probe fitting.
///
/// `Backbone` is the no-lift ablation: probes see `h̃` alone.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureLift {
    Backbone { eta: f64 },
    Fourier(RffSpec),
}

impl FeatureLift {
    pub fn eta(&self) -> f64 {
        match self {
            FeatureLift::Backbone { eta } => *eta,
            FeatureLift::Fourier(spec) => spec.eta(),
        }
    }

    /// Number of appended feature coordinates (`D`, or 0 without a lift).
    pub fn extra_dim(&self) -> usize {
        match self {
            FeatureLift::Backbone { .. } => 0,
            FeatureLift::Fourier(spec) => spec.dim(),
        }
    }

    pub fn id(&self) -> String {
        match self {
            FeatureLift::Backbone { eta } => format!("none:eta={eta:e}"),
            FeatureLift::Fourier(spec) => spec.id(),
        }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            FeatureLift::Backbone { .. } => Ok(x.clone()),
            FeatureLift::Fourier(spec) => lift_matrix(x, spec),
        }
    }
}

/// `⟨φ_σ(x), φ_σ(y)⟩`, an unbiased estimate of the Gaussian kernel.
pub fn kernel_estimate(x: &[f64], y: &[f64], spec: &RffSpec) -> Result<f64> {
    let fx = spec.features(x)?;
    let fy = spec.features(y)?;
    Ok(fx.iter().zip(&fy).map(|(a, b)| a * b).sum())
}

/// `exp(−‖x−y‖²/(2σ²))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-sq / (2.0 * sigma * sigma)).exp()
}

/// Rows used by [`median_bandwidth`]: evenly strided, at most 1000.
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

/// Median pairwise Euclidean distance over an evenly strided subsample of at
/// most [`BANDWIDTH_SUBSAMPLE`] rows.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Degenerate(format!("median bandwidth needs N ≥ 2, got {n}")));
    }
    let rows: Vec<usize> = if n <= BANDWIDTH_SUBSAMPLE {
        (0..n).collect()
    } else {
        (0..BANDWIDTH_SUBSAMPLE).map(|k| k * n / BANDWIDTH_SUBSAMPLE).collect()
    };
    let mut dists = Vec::with_capacity(rows.len() * (rows.len() - 1) / 2);
    for (a, &i) in rows.iter().enumerate() {
        for &j in &rows[a + 1..] {
            let sq: f64 = (0..x.ncols()).map(|c| (x[(i, c)] - x[(j, c)]).powi(2)).sum();
            dists.push(sq.sqrt());
        }
    }
    let median = median_of(&mut dists);
    if median > 0.0 {
        return Ok(median);
    }
    // More than half the pairs coincide; fall back to the positive distances.
    let mut positive: Vec<f64> = dists.into_iter().filter(|&v| v > 0.0).collect();
    if positive.is_empty() {
        return Err(Error::Degenerate(
            "all sampled rows are identical; pass an explicit sigma".into(),
        ));
    }
    Ok(median_of(&mut positive))
}

/// Median with the even-count midpoint convention. Reorders `values`.
pub(crate) fn median_of(values: &mut [f64]) -> f64 {
    let n = values.len();
    let cmp = |a: &f64, b: &f64| a.total_cmp(b);
    let (_, &mut upper, _) = values.select_nth_unstable_by(n / 2, cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..n / 2].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}
