use crate::nn::Matrix;
use crate::{Error, Result};

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient of [`relu`] given the pre-activation. The subgradient at exactly
/// zero is taken to be 0.
pub fn relu_backward(pre: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
    pre.same_shape(grad_out, "relu_backward")?;
    let data = pre
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Matrix::from_vec(pre.rows(), pre.cols(), data)
}

/// `log(1 + e^x)` without overflow for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The logistic function, i.e. the derivative of [`softplus`].
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Result<Matrix> {
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        out.row_mut(r).copy_from_slice(&softmax(logits.row(r)));
    }
    out.ensure_finite("softmax_rows")
}

/// Smallest probability fed to the logarithm in [`cross_entropy`].
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean of `-ln p[label]` over rows, with probabilities floored at [`PROB_FLOOR`].
pub fn cross_entropy(probs: &Matrix, labels: &[usize]) -> Result<f64> {
    if probs.rows() != labels.len() {
        return Err(Error::dims(
            "cross_entropy",
            format!("{} labels", probs.rows()),
            labels.len(),
        ));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("cross entropy over an empty batch".into()));
    }
    let classes = probs.cols();
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        total -= probs.get(r, label).max(PROB_FLOOR).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Gradient of mean cross-entropy with respect to the logits that produced
/// `probs` through softmax: `(p - onehot) / n`.
///
/// The floor in [`cross_entropy`] is ignored here; it only binds once a
/// probability has underflowed below 1e-12, where this expression is still the
/// useful descent direction.
pub fn softmax_cross_entropy_backward(probs: &Matrix, labels: &[usize]) -> Result<Matrix> {
    if probs.rows() != labels.len() {
        return Err(Error::dims(
            "softmax_cross_entropy_backward",
            format!("{} labels", probs.rows()),
            labels.len(),
        ));
    }
    let n = labels.len() as f64;
    let classes = probs.cols();
    let mut grad = probs.scale(1.0 / n);
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        grad.row_mut(r)[label] -= 1.0 / n;
    }
    Ok(grad)
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
