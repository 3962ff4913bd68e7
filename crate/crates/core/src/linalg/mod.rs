//! Dense-matrix numerical kernel: SVD, numerical rank, orthonormal
//! left-null-space bases, and minimum-norm least squares.
//!
//! All operations are pure functions over immutable inputs and are safe
//! to call from many threads at once.

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{singular_values, svd, Svd};

use thiserror::Error;

/// Machine epsilon used in the numerical-rank threshold. Fixed to the
/// single-precision value even though arithmetic is double precision, so
/// rank reports match the reference threshold `max(rows, cols)·eps·σ₁`.
pub const RANK_EPS: f64 = 1.19209e-7;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix entries must be finite")]
    NonFinite,
    #[error("data length {len} does not match {rows}x{cols}")]
    BadShape { rows: usize, cols: usize, len: usize },
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("empty matrix")]
    Empty,
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    DimMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("SVD failed to converge after {iterations} QR iterations")]
    SvdNonConvergence { iterations: usize },
    #[error("CSV parse error: {0}")]
    Csv(String),
}

/// Singular values, rank threshold, numerical rank and left nullity of a
/// matrix.
#[derive(Debug, Clone)]
pub struct RankReport {
    /// Non-increasing, non-negative singular values (min(rows, cols) of them).
    pub singular_values: Vec<f64>,
    /// `max(rows, cols) · eps · σ₁`.
    pub threshold: f64,
    /// Count of singular values strictly above the threshold.
    pub numerical_rank: usize,
    /// `rows − numerical_rank`: dimension of the left null space.
    pub nullity: usize,
}

/// Numerical rank with threshold `max(rows, cols) · eps · σ₁`.
/// Pass [`RANK_EPS`] for the reference threshold.
pub fn numerical_rank(m: &Matrix, eps: f64) -> Result<RankReport, LinalgError> {
    let s = singular_values(m)?;
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let threshold = m.rows().max(m.cols()) as f64 * eps * sigma_max;
    let rank = s.iter().filter(|&&x| x > threshold).count();
    Ok(RankReport {
        threshold,
        numerical_rank: rank,
        nullity: m.rows() - rank,
        singular_values: s,
    })
}

/// Orthonormal basis of the left null space `{v | vᵀ·m = 0}`, one basis
/// vector per row. The row count equals the nullity from
/// [`numerical_rank`] at [`RANK_EPS`]; a full-row-rank input yields a
/// 0×rows matrix.
pub fn left_null_space_basis(m: &Matrix) -> Result<Matrix, LinalgError> {
    let (u, s, _) = svd::svd_parts(m, true, false)?;
    let u = u.expect("requested");
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let threshold = m.rows().max(m.cols()) as f64 * RANK_EPS * sigma_max;
    let rank = s.iter().filter(|&&x| x > threshold).count();

    // Trailing columns of the full U: those paired with sub-threshold
    // singular values plus the columns beyond min(rows, cols).
    let dim = m.rows() - rank;
    let mut basis = Matrix::zeros(dim, m.rows());
    for k in 0..dim {
        for i in 0..m.rows() {
            basis.set(k, i, u.get(i, rank + k));
        }
    }
    Ok(basis)
}

/// Minimum-norm least-squares solution of `a·x ≈ b` via the SVD
/// pseudoinverse, truncating singular values at the [`RANK_EPS`]
/// threshold. Deterministic for rank-deficient systems.
pub fn least_squares(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.rows() != b.rows() {
        return Err(LinalgError::DimMismatch {
            op: "least_squares",
            lhs: (a.rows(), a.cols()),
            rhs: (b.rows(), b.cols()),
        });
    }
    let Svd { u, s, vt } = svd(a)?;
    let sigma_max = s.first().copied().unwrap_or(0.0);
    let threshold = a.rows().max(a.cols()) as f64 * RANK_EPS * sigma_max;

    // x = V · Σ⁺ · Uᵀ · b
    let utb = u.transpose().matmul(b)?;
    let mut scaled = utb;
    for (i, &sv) in s.iter().enumerate() {
        let inv = if sv > threshold { 1.0 / sv } else { 0.0 };
        for c in 0..scaled.cols() {
            let x = scaled.get(i, c) * inv;
            scaled.set(i, c, x);
        }
    }
    vt.transpose().matmul(&scaled)
}
