//! Iterative null-space projection on lifted embeddings.
//!
//! Probe directions are accumulated into an orthonormal stack `Ŵ` over the
//! lifted coordinates `[h̃; φ(h̃)]`. The projector `P̂ = I − Ŵᵀ(ŴŴᵀ)⁻¹Ŵ` is
//! applied in factored form while iterating; only its upper-left backbone
//! block is kept as the deliverable `P`.

mod projector;

pub use projector::{
    compose_matrices, compose_projectors, extract_backbone_block, nullspace_projector, CompositeProjector,
    NullspaceProjector, DEFAULT_RANK_TOLERANCE,
};

use std::borrow::Cow;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::embedding_io::{EmbeddingSet, ProjectorRecord};
use crate::error::{Error, Result};
use crate::kernel_lift::{perturb_matrix, FeatureLift};
use crate::linalg;
use crate::probes::{audit_leakage, fit_linear_probe, leakage_from_scores, LinearProbeConfig, MlpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InlpConfig {
    /// Leakage-gap threshold for both the inner linear check and the outer audit.
    pub tau: f64,
    pub max_iterations: usize,
    pub max_refinements: usize,
    pub rank_tolerance: f64,
    /// Share of rows held out for gap measurements.
    pub holdout_fraction: f64,
    pub linear_probe: LinearProbeConfig,
    pub audit_probe: MlpConfig,
}

impl Default for InlpConfig {
    fn default() -> Self {
        InlpConfig {
            tau: 0.05,
            max_iterations: 30,
            max_refinements: 3,
            rank_tolerance: DEFAULT_RANK_TOLERANCE,
            holdout_fraction: 0.2,
            linear_probe: LinearProbeConfig::default(),
            audit_probe: MlpConfig::default(),
        }
    }
}

impl InlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("inlp.tau must lie in (0,1), got {}", self.tau)));
        }
        if self.max_iterations == 0 || self.max_refinements == 0 {
            return Err(Error::Config(
                "inlp iteration and refinement caps must be at least 1".into(),
            ));
        }
        if !(self.rank_tolerance > 0.0 && self.rank_tolerance < 1.0) {
            return Err(Error::Config(format!(
                "inlp.rank_tolerance out of range: {}",
                self.rank_tolerance
            )));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config(format!(
                "inlp.holdout_fraction must lie in (0,1), got {}",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

/// Accumulated probe directions with orthonormal rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeStack {
    rows: DMatrix<f64>,
    /// Probe fits performed so far.
    pub iterations: usize,
}

impl ProbeStack {
    pub fn new(dim: usize) -> Self {
        ProbeStack {
            rows: DMatrix::zeros(0, dim),
            iterations: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    /// Orthonormalize `dirs` against the stack (two Gram–Schmidt passes) and
    /// append those whose residual norm is at least `tol`. Returns the count
    /// appended.
    pub fn push_directions(&mut self, dirs: &[DVector<f64>], tol: f64) -> Result<usize> {
        let p = self.dim();
        let mut added = 0;
        for dir in dirs {
            if dir.len() != p {
                return Err(Error::Dimension {
                    expected: p,
                    actual: dir.len(),
                    context: "probe direction",
                });
            }
            let norm = dir.norm();
            if !norm.is_finite() {
                return Err(Error::Invariant("non-finite probe direction".into()));
            }
            if norm == 0.0 || self.len() >= p {
                continue;
            }
            let mut v = dir / norm;
            for _ in 0..2 {
                for i in 0..self.rows.nrows() {
                    let q = self.rows.row(i);
                    let c = q.transpose().dot(&v);
                    v -= q.transpose() * c;
                }
            }
            let residual = v.norm();
            if residual < tol {
                continue;
            }
            v /= residual;
            let t = self.rows.nrows();
            let rows = std::mem::replace(&mut self.rows, DMatrix::zeros(0, 0));
            self.rows = rows.resize_vertically(t + 1, 0.0);
            self.rows.row_mut(t).copy_from(&v.transpose());
            added += 1;
        }
        Ok(added)
    }

    pub fn projector(&self) -> NullspaceProjector {
        NullspaceProjector::from_orthonormal(self.rows.clone())
    }

    /// Dense `P̂` via the closed form.
    pub fn lifted_projector(&self) -> Result<DMatrix<f64>> {
        nullspace_projector(&self.rows)
    }

    pub fn backbone_block(&self, d: usize) -> Result<DMatrix<f64>> {
        self.projector().backbone_block(d)
    }
}

/// Fit / held-out row partition, stratified by class.
#[derive(Debug, Clone, PartialEq)]
pub struct Holdout {
    pub fit: Vec<usize>,
    pub held: Vec<usize>,
}

impl Holdout {
    pub fn stratified(labels: &[usize], classes: usize, fraction: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut fit = Vec::new();
        let mut held = Vec::new();
        for class in 0..classes {
            let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
            members.shuffle(&mut rng);
            let take = if members.len() >= 2 {
                ((members.len() as f64 * fraction).round() as usize).clamp(1, members.len() - 1)
            } else {
                0
            };
            held.extend_from_slice(&members[..take]);
            fit.extend_from_slice(&members[take..]);
        }
        fit.sort_unstable();
        held.sort_unstable();
        if held.is_empty() || fit.is_empty() {
            return Err(Error::Degenerate("too few rows for a held-out split".into()));
        }
        Ok(Holdout { fit, held })
    }
}

/// Source of lifted features for each probe fit.
#[allow(clippy::large_enum_variant)]
pub enum LiftedInput<'a> {
    /// The same lifted matrix every iteration.
    Fixed(&'a DMatrix<f64>),
    /// Fresh perturbation of `x` followed by the lift, every iteration.
    Perturbed {
        x: &'a DMatrix<f64>,
        lift: &'a FeatureLift,
        rng: ChaCha20Rng,
    },
}

impl LiftedInput<'_> {
    fn draw(&mut self) -> Result<Cow<'_, DMatrix<f64>>> {
        match self {
            LiftedInput::Fixed(x) => Ok(Cow::Borrowed(*x)),
            LiftedInput::Perturbed { x, lift, rng } => {
                let noisy = perturb_matrix(x, lift.eta(), rng);
                Ok(Cow::Owned(lift.apply(&noisy)?))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InlpStatus {
    /// The last probe's held-out gap was within `tau`.
    Converged,
    /// `max_iterations` probes were fit without meeting `tau`.
    CapReached,
    /// A probe above `tau` contributed no new direction.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InlpIteration {
    pub iteration: usize,
    pub held_out_accuracy: f64,
    pub linear_gap: f64,
    pub added: usize,
    pub stack_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InlpOutcome {
    pub iterations: Vec<InlpIteration>,
    pub status: InlpStatus,
}

/// Probe-and-project rounds on top of `stack`.
///
/// With `force_update` the first probe's directions are appended even when
/// its gap is already within `tau`, so the stack always grows.
#[allow(clippy::too_many_arguments)]
pub fn inlp_rounds(
    input: &mut LiftedInput<'_>,
    labels: &[usize],
    classes: usize,
    attribute: &str,
    stack: &mut ProbeStack,
    split: &Holdout,
    cfg: &InlpConfig,
    force_update: bool,
) -> Result<InlpOutcome> {
    cfg.validate()?;
    let fit_labels: Vec<usize> = split.fit.iter().map(|&i| labels[i]).collect();
    let held_labels: Vec<usize> = split.held.iter().map(|&i| labels[i]).collect();
    let mut iterations = Vec::new();
    let mut status = InlpStatus::CapReached;
    for t in 0..cfg.max_iterations {
        let lifted = input.draw()?;
        if lifted.ncols() != stack.dim() || lifted.nrows() != labels.len() {
            return Err(Error::Dimension {
                expected: stack.dim(),
                actual: lifted.ncols(),
                context: "lifted features vs probe stack",
            });
        }
        let x_fit = stack.projector().apply_rows(&lifted.select_rows(split.fit.iter()));
        let x_held = stack.projector().apply_rows(&lifted.select_rows(split.held.iter()));
        let probe = fit_linear_probe(&x_fit, &fit_labels, classes, attribute, &cfg.linear_probe)?;
        stack.iterations += 1;
        let held_out_accuracy = probe.accuracy(&x_held, &held_labels);
        let linear_gap = leakage_from_scores(attribute, &probe.class_scores(&x_held), &held_labels)?.gap;
        let mut entry = InlpIteration {
            iteration: t + 1,
            held_out_accuracy,
            linear_gap,
            added: 0,
            stack_rows: stack.len(),
        };
        if linear_gap <= cfg.tau && !(force_update && t == 0) {
            iterations.push(entry);
            status = InlpStatus::Converged;
            break;
        }
        entry.added = stack.push_directions(&probe.centered_directions(), cfg.rank_tolerance)?;
        entry.stack_rows = stack.len();
        let stalled = entry.added == 0;
        iterations.push(entry);
        if stalled {
            status = InlpStatus::Stalled;
            break;
        }
    }
    Ok(InlpOutcome { iterations, status })
}

/// INLP on a fixed lifted matrix with an internal stratified hold-out.
pub fn run_inlp(
    x_lifted: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    attribute: &str,
    cfg: &InlpConfig,
    seed: u64,
) -> Result<(ProbeStack, InlpOutcome)> {
    let split = Holdout::stratified(labels, classes, cfg.holdout_fraction, seed)?;
    let mut stack = ProbeStack::new(x_lifted.ncols());
    let outcome = inlp_rounds(
        &mut LiftedInput::Fixed(x_lifted),
        labels,
        classes,
        attribute,
        &mut stack,
        &split,
        cfg,
        false,
    )?;
    Ok((stack, outcome))
}

/// One line of the fit log.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum FitEvent {
    Iteration {
        attribute: String,
        refinement: usize,
        #[serde(flatten)]
        detail: InlpIteration,
    },
    Refinement {
        attribute: String,
        refinement: usize,
        status: InlpStatus,
        mlp_gap: f64,
        idempotence_defect: f64,
    },
}

impl fmt::Display for FitEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitEvent::Iteration {
                attribute,
                refinement,
                detail,
            } => write!(
                f,
                "attr={attribute} refinement={refinement} iteration={} acc={:.4} linear_gap={:.4} added={} rows={}",
                detail.iteration, detail.held_out_accuracy, detail.linear_gap, detail.added, detail.stack_rows
            ),
            FitEvent::Refinement {
                attribute,
                refinement,
                status,
                mlp_gap,
                idempotence_defect,
            } => write!(
                f,
                "attr={attribute} refinement={refinement} inlp={status:?} mlp_gap={mlp_gap:.4} idem_defect={idempotence_defect:.3e}"
            ),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AttributeFit {
    pub record: ProjectorRecord,
    pub stack: ProbeStack,
    pub log: Vec<FitEvent>,
}

/// Fit the backbone projector for one attribute with audited refinement.
///
/// Rows are split once into fit / held-out parts. Each refinement round
/// redraws perturbations, extends the shared probe stack, and audits `P·h`
/// with an MLP probe; rounds stop once the audited gap is within `tau`.
/// Rounds after the first append at least one probe's directions.
pub fn fit_attribute_projector(
    train: &EmbeddingSet,
    attribute: &str,
    lift: &FeatureLift,
    cfg: &InlpConfig,
    seed: u64,
) -> Result<AttributeFit> {
    cfg.validate()?;
    let attr = train.attribute(attribute)?;
    let labels = attr.as_classes();
    let classes = attr.classes;
    let d = train.d();
    if let FeatureLift::Fourier(spec) = lift {
        if spec.d() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: spec.d(),
                context: "RFF spec input dimension",
            });
        }
    }
    let x = train.to_matrix();
    let split = Holdout::stratified(&labels, classes, cfg.holdout_fraction, seed)?;
    let fit_labels: Vec<usize> = split.fit.iter().map(|&i| labels[i]).collect();
    let held_labels: Vec<usize> = split.held.iter().map(|&i| labels[i]).collect();
    let x_fit = x.select_rows(split.fit.iter());
    let x_held = x.select_rows(split.held.iter());

    let mut stack = ProbeStack::new(d + lift.extra_dim());
    let mut input = LiftedInput::Perturbed {
        x: &x,
        lift,
        rng: ChaCha20Rng::seed_from_u64(seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
    };
    let mut log = Vec::new();
    let mut p = DMatrix::identity(d, d);
    let mut gap = f64::INFINITY;
    let mut refinements = 0;
    let mut converged = false;
    while refinements < cfg.max_refinements {
        refinements += 1;
        let force = refinements > 1;
        let outcome = inlp_rounds(&mut input, &labels, classes, attribute, &mut stack, &split, cfg, force)?;
        for detail in outcome.iterations {
            log.push(FitEvent::Iteration {
                attribute: attribute.to_string(),
                refinement: refinements,
                detail,
            });
        }
        p = stack.backbone_block(d)?;
        let mut audit_cfg = cfg.audit_probe;
        audit_cfg.seed = audit_cfg.seed.wrapping_add(seed).wrapping_add(refinements as u64);
        let report = audit_leakage(
            &(&x_fit * &p),
            &fit_labels,
            &(&x_held * &p),
            &held_labels,
            classes,
            attribute,
            &audit_cfg,
        )?;
        gap = report.gap;
        log.push(FitEvent::Refinement {
            attribute: attribute.to_string(),
            refinement: refinements,
            status: outcome.status,
            mlp_gap: gap,
            idempotence_defect: linalg::idempotence_defect(&p),
        });
        if gap <= cfg.tau {
            converged = true;
            break;
        }
    }
    let record = ProjectorRecord {
        attribute: attribute.to_string(),
        matrix: p,
        probe_count: stack.len(),
        achieved_gap: gap,
        rff_spec_id: lift.id(),
        refinements,
        converged,
    };
    record.validate()?;
    Ok(AttributeFit { record, stack, log })
}
