//! Elementwise and rowwise kernels shared by the tape and by the pure
//! (inference/analysis) forward paths, with their hand-derived backward
//! counterparts.

use crate::linalg::Matrix;

use super::NetError;

/// Variance epsilon inside layer normalization.
pub const LN_VAR_EPS: f64 = 1e-5;

/// Rowwise softmax with max-subtraction for overflow safety. Every output
/// row is non-negative and sums to 1.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let orow = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &x) in orow.iter_mut().zip(row) {
            *o = (x - max).exp();
            sum += *o;
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    out
}

/// Gradient of rowwise softmax given the forward output `y` and the
/// upstream gradient `gy`: `dx = y ⊙ (gy − ⟨gy, y⟩_row)`.
pub fn softmax_rows_backward(y: &Matrix, gy: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let gr = gy.row(r);
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (o, (&yv, &gv)) in out.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
            *o = yv * (gv - dot);
        }
    }
    out
}

/// Per-row layer normalization over the feature dimension: each row is
/// standardized to mean 0 / variance 1 (variance epsilon [`LN_VAR_EPS`]),
/// then scaled by `gain` and shifted by `bias`.
pub fn layer_norm(m: &Matrix, gain: &[f64], bias: &[f64]) -> Result<Matrix, NetError> {
    if gain.len() != m.cols() || bias.len() != m.cols() {
        return Err(NetError::GainBiasLength {
            cols: m.cols(),
            gain: gain.len(),
            bias: bias.len(),
        });
    }
    let n = m.cols() as f64;
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_VAR_EPS).sqrt();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = gain[c] * ((row[c] - mean) * inv) + bias[c];
        }
    }
    Ok(out)
}

/// Gradients of [`layer_norm`]: returns (dx, dgain, dbias).
pub fn layer_norm_backward(
    x: &Matrix,
    gain: &[f64],
    gy: &Matrix,
) -> (Matrix, Vec<f64>, Vec<f64>) {
    let n = x.cols() as f64;
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    let mut dgain = vec![0.0; x.cols()];
    let mut dbias = vec![0.0; x.cols()];

    for r in 0..x.rows() {
        let row = x.row(r);
        let g = gy.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_VAR_EPS).sqrt();

        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
        for c in 0..x.cols() {
            dgain[c] += g[c] * xhat[c];
            dbias[c] += g[c];
        }

        let gh: Vec<f64> = (0..x.cols()).map(|c| g[c] * gain[c]).collect();
        let mean_gh = gh.iter().sum::<f64>() / n;
        let mean_gh_xhat = gh.iter().zip(&xhat).map(|(a, b)| a * b).sum::<f64>() / n;
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = inv * (gh[c] - mean_gh - xhat[c] * mean_gh_xhat);
        }
    }
    (dx, dgain, dbias)
}

pub fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(x: &Matrix, gy: &Matrix) -> Matrix {
    let mut out = gy.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *o = 0.0;
        }
    }
    out
}

/// Mean negative log-likelihood of `labels` under rowwise softmax of
/// `logits`, computed through log-sum-exp for stability.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<f64, NetError> {
    if labels.len() != logits.rows() {
        return Err(NetError::LabelCount {
            rows: logits.rows(),
            labels: labels.len(),
        });
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= logits.cols() {
            return Err(NetError::LabelOutOfRange {
                label,
                classes: logits.cols(),
            });
        }
        let row = logits.row(r);
        let max = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of [`cross_entropy`] with respect to the logits:
/// `(softmax(logits) − onehot(labels)) / batch`.
pub fn cross_entropy_backward(logits: &Matrix, labels: &[usize]) -> Matrix {
    let mut probs = softmax_rows(logits);
    let scale = 1.0 / labels.len() as f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = probs.row_mut(r);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v *= scale;
        }
    }
    probs
}
