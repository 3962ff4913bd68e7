#![allow(clippy::needless_range_loop)] // index loops mirror the reference algorithm

//! Golub–Kahan SVD: Householder bidiagonalization followed by
//! implicit-shift QR on the bidiagonal. Deterministic for identical
//! input bytes; no randomized pivoting anywhere.

use super::{LinalgError, Matrix};

const EPS: f64 = f64::EPSILON;

/// Thin SVD `m = U · diag(S) · Vt` with `U: rows×k`, `S: k`, `Vt: k×cols`,
/// `k = min(rows, cols)`. Singular values are non-negative and sorted
/// non-increasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub vt: Matrix,
}

pub fn svd(m: &Matrix) -> Result<Svd, LinalgError> {
    let k = m.rows().min(m.cols());
    let (u_full, s, v_full) = svd_parts(m, true, true)?;
    let u_full = u_full.expect("requested");
    let v_full = v_full.expect("requested");
    Ok(Svd {
        u: u_full.columns(0, k),
        s,
        vt: v_full.columns(0, k).transpose(),
    })
}

/// Singular values only — skips all U/V accumulation.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>, LinalgError> {
    let (_, s, _) = svd_parts(m, false, false)?;
    Ok(s)
}

/// Optional full `U` (rows×rows), singular values, optional full `V`
/// (cols×cols).
pub(crate) type SvdParts = (Option<Matrix>, Vec<f64>, Option<Matrix>);

/// Full-size factors with `m = U · Σ · Vᵀ` for the rectangular-diagonal
/// Σ. The full `U` is what left-null-space extraction needs: its
/// trailing columns span LN(m).
pub(crate) fn svd_parts(m: &Matrix, want_u: bool, want_v: bool) -> Result<SvdParts, LinalgError> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if m.rows() >= m.cols() {
        svd_tall(m, want_u, want_v)
    } else {
        // m = (mᵀ)ᵀ = (U' Σ V'ᵀ)ᵀ = V' Σ U'ᵀ: swap the factor roles.
        let (u_t, s, v_t) = svd_tall(&m.transpose(), want_v, want_u)?;
        Ok((v_t, s, u_t))
    }
}

fn svd_tall(a: &Matrix, want_u: bool, want_v: bool) -> Result<SvdParts, LinalgError> {
    let m = a.rows();
    let n = a.cols();
    debug_assert!(m >= n);

    let mut work = a.clone();
    let mut u = want_u.then(|| Matrix::identity(m));
    let mut v = want_v.then(|| Matrix::identity(n));
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];

    bidiagonalize(&mut work, &mut diag, &mut off, u.as_mut(), v.as_mut());
    bidiagonal_qr(&mut diag, &mut off, u.as_mut(), v.as_mut(), 40 * m.max(n))?;

    Ok((u, diag, v))
}

/// Reduces `a` (m×n, m ≥ n) to upper bidiagonal form with Householder
/// reflections, accumulating the left transform into `u` (m×m) and the
/// right transform into `v` (n×n) when present.
fn bidiagonalize(
    a: &mut Matrix,
    diag: &mut [f64],
    off: &mut [f64],
    mut u: Option<&mut Matrix>,
    mut v: Option<&mut Matrix>,
) {
    let m = a.rows();
    let n = a.cols();

    for k in 0..n {
        // Left reflection: zero a[k+1.., k].
        let mut norm_sq = 0.0;
        for i in k..m {
            let x = a.get(i, k);
            norm_sq += x * x;
        }
        if norm_sq > EPS * EPS {
            let norm = norm_sq.sqrt();
            let akk = a.get(k, k);
            let sigma = if akk < 0.0 { -norm } else { norm };
            let v0 = akk + sigma;
            a.set(k, k, v0);
            for i in (k + 1)..m {
                let x = a.get(i, k) / v0;
                a.set(i, k, x);
            }
            let tau = v0 / sigma;

            for j in (k + 1)..n {
                let mut dot = a.get(k, j);
                for i in (k + 1)..m {
                    dot += a.get(i, k) * a.get(i, j);
                }
                dot *= tau;
                let x = a.get(k, j) - dot;
                a.set(k, j, x);
                for i in (k + 1)..m {
                    let x = a.get(i, j) - dot * a.get(i, k);
                    a.set(i, j, x);
                }
            }

            if let Some(u) = u.as_deref_mut() {
                for row in 0..m {
                    let mut dot = u.get(row, k);
                    for i in (k + 1)..m {
                        dot += u.get(row, i) * a.get(i, k);
                    }
                    dot *= tau;
                    let x = u.get(row, k) - dot;
                    u.set(row, k, x);
                    for i in (k + 1)..m {
                        let x = u.get(row, i) - dot * a.get(i, k);
                        u.set(row, i, x);
                    }
                }
            }
            diag[k] = -sigma;
        } else {
            diag[k] = a.get(k, k);
        }

        // Right reflection: zero a[k, k+2..].
        if k + 2 < n {
            let mut norm_sq = 0.0;
            for j in (k + 1)..n {
                let x = a.get(k, j);
                norm_sq += x * x;
            }
            if norm_sq > EPS * EPS {
                let norm = norm_sq.sqrt();
                let ak1 = a.get(k, k + 1);
                let sigma = if ak1 < 0.0 { -norm } else { norm };
                let v0 = ak1 + sigma;
                a.set(k, k + 1, v0);
                for j in (k + 2)..n {
                    let x = a.get(k, j) / v0;
                    a.set(k, j, x);
                }
                let tau = v0 / sigma;

                for i in (k + 1)..m {
                    let mut dot = a.get(i, k + 1);
                    for j in (k + 2)..n {
                        dot += a.get(i, j) * a.get(k, j);
                    }
                    dot *= tau;
                    let x = a.get(i, k + 1) - dot;
                    a.set(i, k + 1, x);
                    for j in (k + 2)..n {
                        let x = a.get(i, j) - dot * a.get(k, j);
                        a.set(i, j, x);
                    }
                }

                if let Some(v) = v.as_deref_mut() {
                    for row in 0..n {
                        let mut dot = v.get(row, k + 1);
                        for j in (k + 2)..n {
                            dot += v.get(row, j) * a.get(k, j);
                        }
                        dot *= tau;
                        let x = v.get(row, k + 1) - dot;
                        v.set(row, k + 1, x);
                        for j in (k + 2)..n {
                            let x = v.get(row, j) - dot * a.get(k, j);
                            v.set(row, j, x);
                        }
                    }
                }
                off[k] = -sigma;
            } else {
                off[k] = a.get(k, k + 1);
            }
        } else if k + 1 < n {
            off[k] = a.get(k, k + 1);
        }
    }
}

fn givens(a: f64, b: f64) -> (f64, f64) {
    if b == 0.0 {
        (1.0, 0.0)
    } else if a == 0.0 {
        (0.0, 1.0)
    } else if b.abs() > a.abs() {
        let t = a / b;
        let s = 1.0 / (1.0 + t * t).sqrt();
        (s * t, s)
    } else {
        let t = b / a;
        let c = 1.0 / (1.0 + t * t).sqrt();
        (c, c * t)
    }
}

/// Implicit-shift QR on the bidiagonal (`diag`, `off`). On success `diag`
/// holds non-negative singular values sorted non-increasing and rotations
/// are accumulated into `u`/`v` when present.
fn bidiagonal_qr(
    diag: &mut [f64],
    off: &mut [f64],
    mut u: Option<&mut Matrix>,
    mut v: Option<&mut Matrix>,
    max_iter: usize,
) -> Result<(), LinalgError> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }

    // Scale reference for the zero-diagonal breakdown check.
    let anorm = diag
        .iter()
        .chain(off.iter())
        .fold(0.0_f64, |m, x| m.max(x.abs()));

    let mut iter = 0usize;
    let mut hi = n - 1;

    while hi > 0 {
        let thresh = EPS * (diag[hi - 1].abs() + diag[hi].abs());
        if off[hi - 1].abs() <= thresh {
            off[hi - 1] = 0.0;
            hi -= 1;
            continue;
        }

        let mut lo = hi - 1;
        while lo > 0 {
            let t = EPS * (diag[lo - 1].abs() + diag[lo].abs());
            if off[lo - 1].abs() <= t {
                off[lo - 1] = 0.0;
                break;
            }
            lo -= 1;
        }

        iter += 1;
        if iter > max_iter {
            return Err(LinalgError::SvdNonConvergence { iterations: iter });
        }

        // A negligible diagonal entry breaks the Wilkinson shift; chase its
        // off-diagonal off the bottom with left rotations to split the block.
        let mut restarted = false;
        for idx in lo..hi {
            if diag[idx].abs() <= EPS * anorm {
                diag[idx] = 0.0;
                let mut z = off[idx];
                off[idx] = 0.0;
                for j in (idx + 1)..=hi {
                    let (c, s) = givens(diag[j], z);
                    diag[j] = c * diag[j] + s * z;
                    if j < hi {
                        z = -s * off[j];
                        off[j] *= c;
                    }
                    if let Some(u) = u.as_deref_mut() {
                        rotate_cols(u, j, idx, c, s);
                    }
                }
                restarted = true;
                break;
            }
        }
        if restarted {
            continue;
        }

        // Wilkinson shift from the trailing 2x2 of BᵀB.
        let d_hi = diag[hi];
        let d_hi1 = diag[hi - 1];
        let e_hi1 = off[hi - 1];
        let e_hi2 = if hi >= 2 && hi - 2 >= lo { off[hi - 2] } else { 0.0 };

        let t11 = d_hi1 * d_hi1 + e_hi2 * e_hi2;
        let t12 = d_hi1 * e_hi1;
        let t22 = d_hi * d_hi + e_hi1 * e_hi1;

        let d = (t11 - t22) / 2.0;
        let sign_d = if d >= 0.0 { 1.0 } else { -1.0 };
        let mu = t22 - t12 * t12 / (d + sign_d * (d * d + t12 * t12).sqrt());

        let mut x = diag[lo] * diag[lo] - mu;
        let mut z = diag[lo] * off[lo];

        for k in lo..hi {
            let (c, s) = givens(x, z);
            if k > lo {
                off[k - 1] = c * x + s * z;
            }

            let dk = diag[k];
            let ek = off[k];
            let dk1 = diag[k + 1];

            diag[k] = c * dk + s * ek;
            off[k] = c * ek - s * dk;
            let bulge = s * dk1;
            diag[k + 1] = c * dk1;

            if let Some(v) = v.as_deref_mut() {
                rotate_cols(v, k, k + 1, c, s);
            }

            let (c2, s2) = givens(diag[k], bulge);
            diag[k] = c2 * diag[k] + s2 * bulge;
            let old_ek = off[k];
            let old_dk1 = diag[k + 1];
            off[k] = c2 * old_ek + s2 * old_dk1;
            diag[k + 1] = c2 * old_dk1 - s2 * old_ek;

            if k + 1 < hi {
                let old_ek1 = off[k + 1];
                x = off[k];
                z = s2 * old_ek1;
                off[k + 1] = c2 * old_ek1;
            }

            if let Some(u) = u.as_deref_mut() {
                rotate_cols(u, k, k + 1, c2, s2);
            }
        }
    }

    // Flip signs so every singular value is non-negative.
    for i in 0..n {
        if diag[i] < 0.0 {
            diag[i] = -diag[i];
            if let Some(u) = u.as_deref_mut() {
                for row in 0..u.rows() {
                    let x = -u.get(row, i);
                    u.set(row, i, x);
                }
            }
        }
    }

    // Selection sort descending, permuting U/V columns alongside.
    for i in 0..n {
        let mut best = i;
        for j in (i + 1)..n {
            if diag[j] > diag[best] {
                best = j;
            }
        }
        if best != i {
            diag.swap(i, best);
            if let Some(u) = u.as_deref_mut() {
                swap_cols(u, i, best);
            }
            if let Some(v) = v.as_deref_mut() {
                swap_cols(v, i, best);
            }
        }
    }

    Ok(())
}

/// Applies the rotation `[c s; -s c]` to columns (j, i): new_j = c·j + s·i,
/// new_i = c·i − s·j.
fn rotate_cols(m: &mut Matrix, j: usize, i: usize, c: f64, s: f64) {
    for row in 0..m.rows() {
        let xj = m.get(row, j);
        let xi = m.get(row, i);
        m.set(row, j, c * xj + s * xi);
        m.set(row, i, c * xi - s * xj);
    }
}

fn swap_cols(m: &mut Matrix, i: usize, j: usize) {
    for row in 0..m.rows() {
        let a = m.get(row, i);
        m.set(row, i, m.get(row, j));
        m.set(row, j, a);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    #[test]
    fn identity_3x3() {
        let s = singular_values(&Matrix::identity(3)).unwrap();
        assert_eq!(s.len(), 3);
        for x in s {
            assert_close(x, 1.0, 1e-12);
        }
    }

    #[test]
    fn zero_2x4() {
        let s = singular_values(&Matrix::zeros(2, 4)).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn diagonal_2x2() {
        let m = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        let s = singular_values(&m).unwrap();
        assert_close(s[0], 3.0, 1e-12);
        assert_close(s[1], 2.0, 1e-12);
    }

    #[test]
    fn known_symmetric_2x2() {
        // AᵀA eigenvalues are 25 and 1.
        let m = Matrix::new(2, 2, vec![3.0, 2.0, 2.0, 3.0]).unwrap();
        let s = singular_values(&m).unwrap();
        assert_close(s[0], 5.0, 1e-12);
        assert_close(s[1], 1.0, 1e-12);
    }

    #[test]
    fn reconstruction_and_orthogonality() {
        let m = Matrix::new(
            4,
            3,
            vec![
                1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 0.0, -1.0, 0.5, 2.0,
            ],
        )
        .unwrap();
        let Svd { u, s, vt } = svd(&m).unwrap();
        assert_eq!(u.rows(), 4);
        assert_eq!(u.cols(), 3);
        assert_eq!(vt.rows(), 3);
        assert_eq!(vt.cols(), 3);

        let mut sm = Matrix::zeros(3, 3);
        for i in 0..3 {
            sm.set(i, i, s[i]);
        }
        let rec = u.matmul(&sm).unwrap().matmul(&vt).unwrap();
        let err = rec.sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
        assert!(err < 1e-12, "reconstruction err {err}");

        let utu = u.transpose().matmul(&u).unwrap();
        let vvt = vt.matmul(&vt.transpose()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let gold = if i == j { 1.0 } else { 0.0 };
                assert_close(utu.get(i, j), gold, 1e-12);
                assert_close(vvt.get(i, j), gold, 1e-12);
            }
        }
    }

    #[test]
    fn wide_matrix_handled_by_transposition() {
        let m = Matrix::new(2, 5, (0..10).map(|x| (x as f64).sin()).collect()).unwrap();
        let Svd { u, s, vt } = svd(&m).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s[0] >= s[1]);
        let mut sm = Matrix::zeros(2, 2);
        sm.set(0, 0, s[0]);
        sm.set(1, 1, s[1]);
        let rec = u.matmul(&sm).unwrap().matmul(&vt).unwrap();
        assert!(rec.sub(&m).unwrap().frobenius_norm() < 1e-12);
    }

    #[test]
    fn full_u_spans_all_rows() {
        let m = Matrix::new(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
        let (u, s, _) = svd_parts(&m, true, false).unwrap();
        let u = u.unwrap();
        assert_eq!(u.rows(), 3);
        assert_eq!(u.cols(), 3);
        assert_eq!(s.len(), 1);
        assert_close(s[0], 1.0, 1e-14);
    }
}
