//! Central finite-difference gradient checking.

use crate::nn::LinearLayer;
use crate::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over checked entries of `|a - n| / max(1e-8, |a| + |n|)`.
    pub max_rel_error: f64,
    /// Flat index of the entry attaining `max_rel_error`.
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Entries skipped because the loss is visibly non-smooth within `±ε`
    /// (a relu kink crossed by the perturbation).
    pub skipped_kinks: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Skip entries where the loss is visibly non-smooth at the scale of the
    /// step, which happens when a relu pre-activation lies within the
    /// perturbation of zero.
    pub skip_kinks: bool,
    /// Try steps `1000ε, 100ε, 10ε, ε` and use the smaller step of the
    /// adjacent pair whose central differences agree best.
    ///
    /// A fixed step loses to roundoff on tiny gradients: with `ε = 1e-5` and
    /// a loss of order 1 the central difference carries an absolute error
    /// near 1e-11, which is a large relative error on a 1e-8 gradient.
    pub adaptive_step: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            epsilon: DEFAULT_EPSILON,
            skip_kinks: true,
            adaptive_step: false,
        }
    }
}

impl GradCheckOptions {
    pub fn adaptive() -> Self {
        GradCheckOptions {
            adaptive_step: true,
            ..GradCheckOptions::default()
        }
    }
}

fn agree(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-4 * (a.abs() + b.abs()) + 1e-9
}

/// Compares `analytic` against the central difference `(f(θ+ε) - f(θ-ε)) / 2ε`
/// for every entry of `params`, scoring each entry by
/// `|a - n| / max(1e-8, |a| + |n|)`.
///
/// `loss` is evaluated at perturbed copies of `params`; `params` itself is
/// left unchanged.
pub fn finite_diff_check<F>(
    params: &[f64],
    analytic: &[f64],
    options: GradCheckOptions,
    mut loss: F,
) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if params.len() != analytic.len() {
        return Err(Error::dims(
            "finite_diff_check",
            format!("{} analytic entries", params.len()),
            analytic.len(),
        ));
    }
    let eps = options.epsilon;
    let mut theta = params.to_vec();
    let mut eval = |theta: &[f64]| -> Result<f64> {
        let v = loss(theta)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFinite("finite_diff_check loss"))
        }
    };
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for i in 0..theta.len() {
        let original = theta[i];
        let mut central = |h: f64, theta: &mut Vec<f64>| -> Result<f64> {
            theta[i] = original + h;
            let plus = eval(theta)?;
            theta[i] = original - h;
            let minus = eval(theta)?;
            theta[i] = original;
            Ok((plus - minus) / (2.0 * h))
        };

        let numeric = if options.adaptive_step {
            let steps = [1000.0 * eps, 100.0 * eps, 10.0 * eps, eps];
            let mut diffs = [0.0; 4];
            for (d, &h) in diffs.iter_mut().zip(&steps) {
                *d = central(h, &mut theta)?;
            }
            let best = (0..3)
                .min_by(|&a, &b| {
                    let ea = (diffs[a] - diffs[a + 1]).abs();
                    let eb = (diffs[b] - diffs[b + 1]).abs();
                    ea.total_cmp(&eb)
                })
                .unwrap_or(0);
            if options.skip_kinks && !agree(diffs[best], diffs[best + 1]) {
                report.skipped_kinks += 1;
                continue;
            }
            diffs[best + 1]
        } else {
            let numeric = central(eps, &mut theta)?;
            if options.skip_kinks {
                // Away from kinks the two step sizes agree to O(ε²).
                let half = central(0.5 * eps, &mut theta)?;
                if !agree(numeric, half) {
                    report.skipped_kinks += 1;
                    continue;
                }
            }
            numeric
        };

        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_index.is_none() {
            report.max_rel_error = rel;
            report.worst_index = Some(i);
        }
    }
    Ok(report)
}

/// Weights then bias of each layer, in order.
pub fn flatten_params(layers: &[&LinearLayer]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(|l| l.param_count()).sum());
    for layer in layers {
        out.extend_from_slice(layer.weight.data());
        out.extend_from_slice(layer.bias.data());
    }
    out
}

/// Gradients laid out like [`flatten_params`].
pub fn flatten_grads(layers: &[&LinearLayer]) -> Vec<f64> {
    let mut out = Vec::with_capacity(layers.iter().map(|l| l.param_count()).sum());
    for layer in layers {
        out.extend_from_slice(layer.grad_weight.data());
        out.extend_from_slice(layer.grad_bias.data());
    }
    out
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params(layers: &mut [&mut LinearLayer], flat: &[f64]) -> Result<()> {
    let total: usize = layers.iter().map(|l| l.param_count()).sum();
    if total != flat.len() {
        return Err(Error::dims("unflatten_params", total, flat.len()));
    }
    let mut offset = 0;
    for layer in layers.iter_mut() {
        let w = layer.weight.len();
        layer.weight.data_mut().copy_from_slice(&flat[offset..offset + w]);
        offset += w;
        let b = layer.bias.len();
        layer.bias.data_mut().copy_from_slice(&flat[offset..offset + b]);
        offset += b;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{relu, relu_backward, Matrix, Rng};

    #[test]
    fn quadratic_is_exact() {
        let theta = [0.3, -1.2, 2.5, 0.0];
        let report = finite_diff_check(&theta, &theta, GradCheckOptions::default(), |t| {
            Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>())
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-9, "{report:?}");
        assert_eq!(report.checked, 4);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let theta = [1.0, 2.0];
        let wrong = [1.0, 3.0];
        let report = finite_diff_check(&theta, &wrong, GradCheckOptions::default(), |t| {
            Ok(0.5 * t.iter().map(|v| v * v).sum::<f64>())
        })
        .unwrap();
        assert!(report.max_rel_error > 0.1);
        assert_eq!(report.worst_index, Some(1));
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let r = finite_diff_check(&[1.0], &[0.0], GradCheckOptions::default(), |_| Ok(f64::NAN));
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn linear_relu_mean_loss() {
        let mut rng = Rng::new(5);
        let mut layer = LinearLayer::uniform(4, 4, &mut rng);
        let mut x = Matrix::zeros(6, 4);
        x.data_mut().iter_mut().for_each(|v| *v = rng.normal());

        let loss_of = |layer: &LinearLayer| -> Result<f64> { Ok(relu(&layer.forward(&x)?).mean()) };
        let pre = layer.forward(&x).unwrap();
        let n = pre.len() as f64;
        let upstream = Matrix::filled(pre.rows(), pre.cols(), 1.0 / n);
        let g = relu_backward(&pre, &upstream).unwrap();
        layer.backward(&x, &g).unwrap();

        let params = flatten_params(&[&layer]);
        let grads = flatten_grads(&[&layer]);
        let mut probe = layer.clone();
        let report = finite_diff_check(&params, &grads, GradCheckOptions::default(), |t| {
            unflatten_params(&mut [&mut probe], t)?;
            loss_of(&probe)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }
}
