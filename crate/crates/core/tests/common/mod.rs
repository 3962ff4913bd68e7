#![allow(dead_code)] // shared by several integration-test targets

//! Shared test support: seeded matrix generators and an independent
//! singular-value oracle (cyclic Jacobi on the Gram matrix) that shares
//! no code with the library's Golub–Kahan path.

use idattn::linalg::Matrix;
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Matrix {
    let dist = Uniform::new(lo, hi);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(dist))
}

/// Eigenvalues of a symmetric matrix by the cyclic Jacobi rotation
/// method. Independent of the library SVD implementation.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(sym: &Matrix) -> Vec<f64> {
    let n = sym.rows();
    assert_eq!(n, sym.cols());
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| sym.row(i).to_vec()).collect();

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frob(&a)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }

    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.partial_cmp(x).unwrap());
    eig
}

fn frob(a: &[Vec<f64>]) -> f64 {
    a.iter()
        .flat_map(|r| r.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}

/// Singular values of `m` via Jacobi eigenvalues of the smaller Gram
/// matrix: sqrt(eig(M·Mᵀ)) or sqrt(eig(Mᵀ·M)).
pub fn oracle_singular_values(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows() <= m.cols() {
        m.matmul_nt(m).unwrap()
    } else {
        m.transpose().matmul(m).unwrap()
    };
    jacobi_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}
