//! Closed-form null-space projectors, backbone-block extraction and the
//! composite projector over several attributes.

use nalgebra::{DMatrix, DVector};

use crate::embedding_io::ProjectorRecord;
use crate::error::{Error, Result};

/// Default residual-norm cutoff for dropping linearly dependent rows.
pub const DEFAULT_RANK_TOLERANCE: f64 = 1e-8;

/// `P̂ = I − Wᵀ(WWᵀ)⁻¹W` kept in factored form.
///
/// Rows of `W` that are (numerically) dependent on earlier rows are dropped
/// before the Gram matrix is formed, so `WWᵀ` is positive definite.
#[derive(Debug, Clone)]
pub struct NullspaceProjector {
    dim: usize,
    /// Retained rows of `W`, `T×p`.
    w: DMatrix<f64>,
    /// `(WWᵀ)⁻¹W`, `T×p`.
    gram_inv_w: DMatrix<f64>,
}

impl NullspaceProjector {
    pub fn new(w: &DMatrix<f64>, rank_tolerance: f64) -> Result<Self> {
        let dim = w.ncols();
        if dim == 0 {
            return Err(Error::Config("projector needs a positive ambient dimension".into()));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("probe stack has non-finite entries".into()));
        }
        let kept = independent_rows(w, rank_tolerance);
        let w = DMatrix::from_fn(kept.len(), dim, |i, j| w[(kept[i], j)]);
        if w.nrows() == 0 {
            return Ok(NullspaceProjector {
                dim,
                gram_inv_w: w.clone(),
                w,
            });
        }
        let gram = &w * w.transpose();
        let gram_inv_w = solve_gram(&gram, &w, rank_tolerance)?;
        Ok(NullspaceProjector { dim, w, gram_inv_w })
    }

    /// Projector for a stack whose rows are already orthonormal (`WWᵀ = I`).
    pub(crate) fn from_orthonormal(w: DMatrix<f64>) -> Self {
        NullspaceProjector {
            dim: w.ncols(),
            gram_inv_w: w.clone(),
            w,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    /// Number of removed directions.
    pub fn rank_removed(&self) -> usize {
        self.w.nrows()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Dense `p×p` matrix, symmetrized.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut p = DMatrix::identity(self.dim, self.dim);
        if self.w.nrows() > 0 {
            p -= self.w.tr_mul(&self.gram_inv_w);
        }
        symmetrize(p)
    }

    /// Upper-left `d×d` block `P̂₁₁ = I − W₁ᵀ(WWᵀ)⁻¹W₁`, where `W₁` holds the
    /// first `d` columns.
    pub fn backbone_block(&self, d: usize) -> Result<DMatrix<f64>> {
        if d == 0 || d > self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: d,
                context: "backbone block size",
            });
        }
        let mut p = DMatrix::identity(d, d);
        if self.w.nrows() > 0 {
            let w1 = self.w.columns(0, d);
            let g1 = self.gram_inv_w.columns(0, d);
            p -= w1.tr_mul(&g1);
        }
        Ok(symmetrize(p))
    }

    /// `X P̂` for row-sample matrix `X` (`N×p`), without forming `P̂`.
    pub fn apply_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(x.ncols(), self.dim, "row dimension must match projector");
        if self.w.nrows() == 0 {
            return x.clone();
        }
        let coeff = x * self.w.transpose();
        x - coeff * &self.gram_inv_w
    }
}

fn symmetrize(p: DMatrix<f64>) -> DMatrix<f64> {
    (&p + p.transpose()) * 0.5
}

/// Indices of rows that survive modified Gram–Schmidt with relative residual
/// at least `tol`.
fn independent_rows(w: &DMatrix<f64>, tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    for i in 0..w.nrows() {
        let row = w.row(i).transpose();
        let norm = row.norm();
        if norm == 0.0 {
            continue;
        }
        let mut v = row / norm;
        for _ in 0..2 {
            for q in &basis {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let residual = v.norm();
        if residual >= tol {
            basis.push(v / residual);
            kept.push(i);
        }
    }
    kept
}

/// `G⁻¹W` by Cholesky, falling back to an eigen-decomposition pseudo-inverse
/// when the factorization fails but no eigenvalue is below the cutoff.
fn solve_gram(gram: &DMatrix<f64>, w: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    if let Some(chol) = gram.clone().cholesky() {
        return Ok(chol.solve(w));
    }
    let eig = gram.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = tol * max.max(f64::MIN_POSITIVE);
    if min.is_nan() || min <= cutoff {
        let max_diag = gram.diagonal().amax();
        return Err(Error::Singular {
            min_pivot: min,
            max_diag,
            rows: gram.nrows(),
        });
    }
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l);
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    Ok(inv * w)
}

/// Dense orthogonal projector onto the null space of `w`'s rows.
pub fn nullspace_projector(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(NullspaceProjector::new(w, DEFAULT_RANK_TOLERANCE)?.to_dense())
}

/// Upper-left `d×d` block of a lifted projector.
pub fn extract_backbone_block(p_hat: &DMatrix<f64>, d: usize) -> Result<DMatrix<f64>> {
    if p_hat.nrows() != p_hat.ncols() {
        return Err(Error::Dimension {
            expected: p_hat.nrows(),
            actual: p_hat.ncols(),
            context: "lifted projector must be square",
        });
    }
    if d == 0 || d > p_hat.nrows() {
        return Err(Error::Dimension {
            expected: p_hat.nrows(),
            actual: d,
            context: "backbone block size",
        });
    }
    Ok(p_hat.view((0, 0), (d, d)).into_owned())
}

/// Projector onto the intersection of several projectors' ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeProjector {
    pub matrix: DMatrix<f64>,
    /// Dimension of the intersection.
    pub kept_dim: usize,
    /// True when the intersection is `{0}` and `P* = 0`.
    pub total_information_loss: bool,
}

/// Removed directions of a (near-)projector: eigenvectors whose eigenvalue
/// is below ½.
fn complement_rows(p: &DMatrix<f64>) -> Vec<DVector<f64>> {
    crate::linalg::low_eigenspace_rows(p, 0.5)
}

/// `P*`: stack every record's complement basis and project onto the null
/// space of the stack.
pub fn compose_projectors(records: &[ProjectorRecord]) -> Result<CompositeProjector> {
    let matrices: Vec<&DMatrix<f64>> = records.iter().map(|r| &r.matrix).collect();
    compose_matrices(&matrices)
}

pub fn compose_matrices(projectors: &[&DMatrix<f64>]) -> Result<CompositeProjector> {
    let first = projectors
        .first()
        .ok_or_else(|| Error::Config("compose_projectors needs at least one projector".into()))?;
    let d = first.nrows();
    let mut rows: Vec<DVector<f64>> = Vec::new();
    for p in projectors {
        if p.shape() != (d, d) {
            return Err(Error::Dimension {
                expected: d,
                actual: p.nrows(),
                context: "composed projectors must share d",
            });
        }
        rows.extend(complement_rows(p));
    }
    let stack = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let proj = NullspaceProjector::new(&stack, DEFAULT_RANK_TOLERANCE)?;
    let kept_dim = d - proj.rank_removed();
    let matrix = if kept_dim == 0 {
        DMatrix::zeros(d, d)
    } else {
        proj.to_dense()
    };
    Ok(CompositeProjector {
        matrix,
        kept_dim,
        total_information_loss: kept_dim == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{asymmetry, idempotence_defect, max_abs};

    fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
        max_abs(&(a - b)) <= tol
    }

    #[test]
    fn axis_aligned_null_space() {
        let w = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let p = nullspace_projector(&w).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0, 1.0]));
        assert!(close(&p, &expect, 1e-15));
    }

    #[test]
    fn diagonal_direction_in_two_dims() {
        let s = 1.0 / 2f64.sqrt();
        let w = DMatrix::from_row_slice(1, 2, &[s, s]);
        let p = nullspace_projector(&w).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]);
        assert!(close(&p, &expect, 1e-15));
    }

    #[test]
    fn full_rank_stack_leaves_nothing() {
        let p = nullspace_projector(&DMatrix::identity(4, 4)).unwrap();
        assert!(max_abs(&p) < 1e-15);
    }

    #[test]
    fn dependent_rows_are_dropped() {
        let w = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 1.0]);
        let proj = NullspaceProjector::new(&w, DEFAULT_RANK_TOLERANCE).unwrap();
        assert_eq!(proj.rank_removed(), 2);
        let p = proj.to_dense();
        assert!(idempotence_defect(&p) < 1e-12);
        assert!(max_abs(&(&w * &p)) < 1e-12);
    }

    #[test]
    fn empty_stack_is_identity() {
        let p = nullspace_projector(&DMatrix::zeros(0, 5)).unwrap();
        assert_eq!(p, DMatrix::identity(5, 5));
    }

    #[test]
    fn backbone_block_of_identity() {
        let block = extract_backbone_block(&DMatrix::identity(6, 6), 2).unwrap();
        assert_eq!(block, DMatrix::identity(2, 2));
        assert!(extract_backbone_block(&DMatrix::identity(6, 6), 7).is_err());
    }

    #[test]
    fn probe_inside_backbone_coordinates() {
        let w = DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]);
        let p_hat = nullspace_projector(&w).unwrap();
        let block = extract_backbone_block(&p_hat, 2).unwrap();
        let expect = DMatrix::from_diagonal(&DVector::from_vec(vec![0.0, 1.0]));
        assert!(close(&block, &expect, 1e-15));
        let factored = NullspaceProjector::new(&w, DEFAULT_RANK_TOLERANCE).unwrap();
        assert!(close(&factored.backbone_block(2).unwrap(), &expect, 1e-15));
    }

    #[test]
    fn apply_rows_matches_dense_product() {
        let w = DMatrix::from_fn(3, 7, |i, j| ((i * 7 + j) as f64 * 0.37).sin());
        let x = DMatrix::from_fn(5, 7, |i, j| ((i + 2 * j) as f64 * 0.11).cos());
        let proj = NullspaceProjector::new(&w, DEFAULT_RANK_TOLERANCE).unwrap();
        let dense = proj.to_dense();
        assert!(close(&proj.apply_rows(&x), &(&x * &dense), 1e-12));
        assert!(asymmetry(&dense) < 1e-14);
    }

    fn diag(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(v))
    }

    #[test]
    fn composite_of_one_is_itself() {
        let p = diag(&[0.0, 1.0, 1.0]);
        let c = compose_matrices(&[&p]).unwrap();
        assert!(close(&c.matrix, &p, 1e-14));
        assert_eq!(c.kept_dim, 2);
    }

    #[test]
    fn composite_of_axis_projectors() {
        let a = diag(&[0.0, 1.0, 1.0]);
        let b = diag(&[1.0, 1.0, 0.0]);
        let c = compose_matrices(&[&a, &b]).unwrap();
        assert!(close(&c.matrix, &diag(&[0.0, 1.0, 0.0]), 1e-14));
    }

    #[test]
    fn empty_intersection_is_flagged() {
        let a = diag(&[0.0, 1.0]);
        let b = diag(&[1.0, 0.0]);
        let c = compose_matrices(&[&a, &b]).unwrap();
        assert!(c.total_information_loss);
        assert_eq!(c.matrix, DMatrix::zeros(2, 2));
    }

    #[test]
    fn composite_needs_input() {
        assert!(compose_matrices(&[]).is_err());
    }
}
