//! Neural mutual-information estimation.
//!
//! A [`Discriminator`] scores pairs `(a_i, b_i)`. Joint pairs come from the
//! same row; product-of-marginals pairs re-pair each `b_i` with `a_{π(i)}` for
//! a derangement `π` drawn inside the batch ([`NegativePairing`]).
//!
//! Two lower-bound style estimators are provided:
//!
//! - [`jsd_mi`]: `mean(-sp(-T(a_i, b_i))) - mean(sp(T(a_π(i), b_i)))`, the
//!   Jensen-Shannon estimator used by every training loss in [`crate::model`].
//! - [`dv_mi`]: `mean(T(a_i, b_i)) - ln mean(exp T(a_π(i), b_i))`, the
//!   Donsker-Varadhan bound, kept as a reference estimator.
//!
//! The `*_backward` variants return the estimate together with its gradient
//! with respect to both arguments, and accumulate parameter gradients into
//! the discriminator, each multiplied by a caller-supplied `scale`.

use crate::nn::{logistic, relu, relu_backward, softplus, LinearLayer, Matrix, Rng};
use crate::{Error, Result};

/// Two-layer pair scorer: `T(a, b) = w₂ · relu(W₁ [a, b] + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
    dim_a: usize,
}

struct ScoreCache {
    input: Matrix,
    pre: Matrix,
    hidden: Matrix,
    scores: Vec<f64>,
}

impl Discriminator {
    /// Parameters drawn from `U[-0.1, 0.1]`: layer 1 first, then layer 2.
    pub fn new(dim_a: usize, dim_b: usize, hidden: usize, rng: &mut Rng) -> Self {
        let layer1 = LinearLayer::uniform(dim_a + dim_b, hidden, rng);
        let layer2 = LinearLayer::uniform(hidden, 1, rng);
        Discriminator {
            layer1,
            layer2,
            dim_a,
        }
    }

    /// The feature-pair shape used by the decomposition model: `2d → d → 1`.
    pub fn for_features(d: usize, rng: &mut Rng) -> Self {
        Discriminator::new(d, d, d, rng)
    }

    pub fn zeros(dim_a: usize, dim_b: usize, hidden: usize) -> Self {
        Discriminator {
            layer1: LinearLayer::zeros(dim_a + dim_b, hidden),
            layer2: LinearLayer::zeros(hidden, 1),
            dim_a,
        }
    }

    /// Reassembles a discriminator from its layers, `dim_a` being the width of
    /// the first argument.
    pub fn from_layers(layer1: LinearLayer, layer2: LinearLayer, dim_a: usize) -> Result<Self> {
        if layer2.in_dim() != layer1.out_dim() || layer2.out_dim() != 1 {
            return Err(Error::dims(
                "Discriminator::from_layers",
                format!("second layer {} -> 1", layer1.out_dim()),
                format!("{} -> {}", layer2.in_dim(), layer2.out_dim()),
            ));
        }
        if dim_a > layer1.in_dim() {
            return Err(Error::dims(
                "Discriminator::from_layers",
                format!("first argument width <= {}", layer1.in_dim()),
                dim_a,
            ));
        }
        Ok(Discriminator {
            layer1,
            layer2,
            dim_a,
        })
    }

    pub fn dim_a(&self) -> usize {
        self.dim_a
    }

    pub fn dim_b(&self) -> usize {
        self.layer1.in_dim() - self.dim_a
    }

    pub fn hidden(&self) -> usize {
        self.layer1.out_dim()
    }

    pub fn layers(&self) -> [&LinearLayer; 2] {
        [&self.layer1, &self.layer2]
    }

    pub fn layers_mut(&mut self) -> [&mut LinearLayer; 2] {
        [&mut self.layer1, &mut self.layer2]
    }

    pub fn zero_grads(&mut self) {
        self.layer1.zero_grads();
        self.layer2.zero_grads();
    }

    /// Score of every row pair `(a_i, b_i)`.
    pub fn score(&self, a: &Matrix, b: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(a, b)?.scores)
    }

    fn forward(&self, a: &Matrix, b: &Matrix) -> Result<ScoreCache> {
        if a.rows() != b.rows() {
            return Err(Error::dims(
                "Discriminator::score",
                format!("{} rows", a.rows()),
                format!("{} rows", b.rows()),
            ));
        }
        if a.cols() != self.dim_a || b.cols() != self.dim_b() {
            return Err(Error::dims(
                "Discriminator::score",
                format!("argument widths {} + {}", self.dim_a, self.dim_b()),
                format!("{} + {}", a.cols(), b.cols()),
            ));
        }
        let input = a.concat_cols(b)?;
        let pre = self.layer1.forward(&input)?;
        let hidden = relu(&pre);
        let scores = self.layer2.forward(&hidden)?.into_vec();
        Ok(ScoreCache {
            input,
            pre,
            hidden,
            scores,
        })
    }

    /// Accumulates parameter gradients for `∂L/∂score` and returns `(∂L/∂a, ∂L/∂b)`.
    fn backward(&mut self, cache: &ScoreCache, grad_scores: &[f64]) -> Result<(Matrix, Matrix)> {
        let g = Matrix::from_vec(grad_scores.len(), 1, grad_scores.to_vec())?;
        let grad_hidden = self.layer2.backward(&cache.hidden, &g)?;
        let grad_pre = relu_backward(&cache.pre, &grad_hidden)?;
        let grad_input = self.layer1.backward(&cache.input, &grad_pre)?;
        grad_input.split_cols(self.dim_a)
    }
}

/// In-batch negative pairing: row `i` is paired with row `permutation[i]`.
///
/// Always a derangement (no fixed points) of `0..n` with `n >= 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegativePairing {
    permutation: Vec<usize>,
}

impl NegativePairing {
    /// Validates a caller-supplied derangement.
    pub fn new(permutation: Vec<usize>) -> Result<Self> {
        let n = permutation.len();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut seen = vec![false; n];
        for (i, &p) in permutation.iter().enumerate() {
            if p >= n || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "negative pairing is not a permutation of 0..{n}"
                )));
            }
            if p == i {
                return Err(Error::InvalidArgument(format!(
                    "negative pairing has a fixed point at {i}"
                )));
            }
            seen[p] = true;
        }
        Ok(NegativePairing { permutation })
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.permutation
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// The same pairing expressed on rows reordered by `order`
    /// (new row `j` is old row `order[j]`).
    pub fn reindex(&self, order: &[usize]) -> Result<Self> {
        let n = self.len();
        if order.len() != n {
            return Err(Error::dims("NegativePairing::reindex", n, order.len()));
        }
        let mut position = vec![usize::MAX; n];
        for (j, &old) in order.iter().enumerate() {
            if old >= n || position[old] != usize::MAX {
                return Err(Error::InvalidArgument(
                    "reindex order is not a permutation".into(),
                ));
            }
            position[old] = j;
        }
        let permutation = order.iter().map(|&old| position[self.permutation[old]]).collect();
        NegativePairing::new(permutation)
    }
}

/// Draws a derangement of `0..n`: a uniform random permutation `p` followed by
/// a uniform cyclic offset `k ∈ 1..n`, mapping `p[i] ↦ p[(i + k) mod n]`.
pub fn sample_derangement(n: usize, rng: &mut Rng) -> Result<NegativePairing> {
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let order = rng.permutation(n);
    let offset = 1 + rng.below(n - 1);
    let mut permutation = vec![0; n];
    for i in 0..n {
        permutation[order[i]] = order[(i + offset) % n];
    }
    Ok(NegativePairing { permutation })
}

/// Estimate plus `scale`-weighted gradients with respect to both arguments.
#[derive(Debug, Clone)]
pub struct MiGrad {
    pub estimate: f64,
    pub grad_x: Matrix,
    pub grad_y: Matrix,
}

fn check_pairing(x: &Matrix, neg: &NegativePairing) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::BatchTooSmall(x.rows()));
    }
    if neg.len() != x.rows() {
        return Err(Error::dims(
            "negative pairing",
            format!("{} entries", x.rows()),
            neg.len(),
        ));
    }
    Ok(())
}

fn joint_and_negative(
    t: &Discriminator,
    x: &Matrix,
    y: &Matrix,
    neg: &NegativePairing,
) -> Result<(ScoreCache, ScoreCache)> {
    check_pairing(x, neg)?;
    let joint = t.forward(x, y)?;
    let shuffled = x.select_rows(neg.as_slice())?;
    let negative = t.forward(&shuffled, y)?;
    Ok((joint, negative))
}

fn jsd_value(joint: &[f64], negative: &[f64]) -> f64 {
    let n = joint.len() as f64;
    let e_joint: f64 = joint.iter().map(|&s| -softplus(-s)).sum::<f64>() / n;
    let e_marginal: f64 = negative.iter().map(|&s| softplus(s)).sum::<f64>() / n;
    e_joint - e_marginal
}

fn dv_value(joint: &[f64], negative: &[f64]) -> f64 {
    let n = joint.len() as f64;
    let mean_joint = joint.iter().sum::<f64>() / n;
    let max = negative.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean_exp = negative.iter().map(|&s| (s - max).exp()).sum::<f64>() / n;
    mean_joint - (max + mean_exp.ln())
}

/// Jensen-Shannon MI estimate between the rows of `x` and `y`.
pub fn jsd_mi(t: &Discriminator, x: &Matrix, y: &Matrix, neg: &NegativePairing) -> Result<f64> {
    let (joint, negative) = joint_and_negative(t, x, y, neg)?;
    Ok(jsd_value(&joint.scores, &negative.scores))
}

/// Donsker-Varadhan MI estimate with a max-shifted log-mean-exp.
pub fn dv_mi(t: &Discriminator, x: &Matrix, y: &Matrix, neg: &NegativePairing) -> Result<f64> {
    let (joint, negative) = joint_and_negative(t, x, y, neg)?;
    Ok(dv_value(&joint.scores, &negative.scores))
}

fn backward_through(
    t: &mut Discriminator,
    neg: &NegativePairing,
    joint: &ScoreCache,
    negative: &ScoreCache,
    grad_joint: &[f64],
    grad_negative: &[f64],
) -> Result<(Matrix, Matrix)> {
    let (mut grad_x, mut grad_y) = t.backward(joint, grad_joint)?;
    let (grad_x_shuffled, grad_y_neg) = t.backward(negative, grad_negative)?;
    grad_x.scatter_add_rows(neg.as_slice(), &grad_x_shuffled)?;
    grad_y.add_assign(&grad_y_neg)?;
    Ok((grad_x, grad_y))
}

/// [`jsd_mi`] with gradients of `scale · estimate`.
pub fn jsd_mi_backward(
    t: &mut Discriminator,
    x: &Matrix,
    y: &Matrix,
    neg: &NegativePairing,
    scale: f64,
) -> Result<MiGrad> {
    let (joint, negative) = joint_and_negative(t, x, y, neg)?;
    let estimate = jsd_value(&joint.scores, &negative.scores);
    let n = joint.scores.len() as f64;
    // d/ds [-sp(-s)] = σ(-s);  d/ds [-sp(s)] = -σ(s)
    let grad_joint: Vec<f64> = joint.scores.iter().map(|&s| scale * logistic(-s) / n).collect();
    let grad_negative: Vec<f64> = negative
        .scores
        .iter()
        .map(|&s| -scale * logistic(s) / n)
        .collect();
    let (grad_x, grad_y) = backward_through(t, neg, &joint, &negative, &grad_joint, &grad_negative)?;
    Ok(MiGrad {
        estimate,
        grad_x,
        grad_y,
    })
}

/// [`dv_mi`] with gradients of `scale · estimate`.
pub fn dv_mi_backward(
    t: &mut Discriminator,
    x: &Matrix,
    y: &Matrix,
    neg: &NegativePairing,
    scale: f64,
) -> Result<MiGrad> {
    let (joint, negative) = joint_and_negative(t, x, y, neg)?;
    let estimate = dv_value(&joint.scores, &negative.scores);
    let n = joint.scores.len() as f64;
    let grad_joint = vec![scale / n; joint.scores.len()];
    // d/ds_i [-ln mean exp s] = -softmax(s)_i
    let max = negative.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = negative.scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let grad_negative: Vec<f64> = exps.iter().map(|e| -scale * e / total).collect();
    let (grad_x, grad_y) = backward_through(t, neg, &joint, &negative, &grad_joint, &grad_negative)?;
    Ok(MiGrad {
        estimate,
        grad_x,
        grad_y,
    })
}

/// Which bound a discriminator is trained and evaluated with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    Jsd,
    Dv,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::Jsd => "jsd",
            Estimator::Dv => "dv",
        }
    }

    pub fn estimate(self, t: &Discriminator, x: &Matrix, y: &Matrix, neg: &NegativePairing) -> Result<f64> {
        match self {
            Estimator::Jsd => jsd_mi(t, x, y, neg),
            Estimator::Dv => dv_mi(t, x, y, neg),
        }
    }

    pub fn backward(
        self,
        t: &mut Discriminator,
        x: &Matrix,
        y: &Matrix,
        neg: &NegativePairing,
        scale: f64,
    ) -> Result<MiGrad> {
        match self {
            Estimator::Jsd => jsd_mi_backward(t, x, y, neg, scale),
            Estimator::Dv => dv_mi_backward(t, x, y, neg, scale),
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jsd" => Ok(Estimator::Jsd),
            "dv" => Ok(Estimator::Dv),
            _ => Err(Error::InvalidArgument(format!(
                "unknown estimator {s:?}; expected jsd or dv"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, flatten_grads, flatten_params, unflatten_params, GradCheckOptions};
    use std::f64::consts::LN_2;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        m.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        m
    }

    #[test]
    fn zero_discriminator_scores_zero() {
        let t = Discriminator::zeros(3, 3, 3);
        let mut rng = Rng::new(0);
        let a = random_matrix(5, 3, &mut rng);
        let b = random_matrix(5, 3, &mut rng);
        assert!(t.score(&a, &b).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hand_set_two_layer_score() {
        // d = 2 per argument (concat width 4), hidden 2.
        let w1 = Matrix::from_rows(&[[1.0, 0.0, -1.0, 0.0], [0.0, 1.0, 0.0, 1.0]]).unwrap();
        let l1 = LinearLayer::from_parts(w1, &[0.5, -3.0]).unwrap();
        let l2 = LinearLayer::from_parts(Matrix::from_rows(&[[2.0, -1.0]]).unwrap(), &[0.25]).unwrap();
        let t = Discriminator::from_layers(l1, l2, 2).unwrap();
        let a = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let b = Matrix::from_rows(&[[0.0, 0.5]]).unwrap();
        // hidden = relu([1 - 0 + 0.5, 2 + 0.5 - 3]) = [1.5, 0]; score = 3 + 0.25
        assert_eq!(t.score(&a, &b).unwrap(), vec![3.25]);
    }

    #[test]
    fn score_is_row_independent() {
        let mut rng = Rng::new(9);
        let t = Discriminator::for_features(4, &mut rng);
        let a = random_matrix(8, 4, &mut rng);
        let b = random_matrix(8, 4, &mut rng);
        let batch = t.score(&a, &b).unwrap();
        for i in 0..8 {
            let ai = a.select_rows(&[i]).unwrap();
            let bi = b.select_rows(&[i]).unwrap();
            assert_eq!(t.score(&ai, &bi).unwrap()[0].to_bits(), batch[i].to_bits());
        }
    }

    #[test]
    fn score_rejects_bad_widths() {
        let t = Discriminator::zeros(2, 2, 2);
        let a = Matrix::zeros(3, 2);
        assert!(t.score(&a, &Matrix::zeros(3, 3)).is_err());
        assert!(t.score(&a, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn zero_discriminator_baselines() {
        let mut rng = Rng::new(4);
        let t = Discriminator::zeros(3, 3, 3);
        let x = random_matrix(6, 3, &mut rng);
        let y = random_matrix(6, 3, &mut rng);
        let neg = sample_derangement(6, &mut rng).unwrap();
        assert!((jsd_mi(&t, &x, &y, &neg).unwrap() + 2.0 * LN_2).abs() < 1e-12);
        assert!(dv_mi(&t, &x, &y, &neg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_discriminator_dv_is_zero() {
        let mut t = Discriminator::zeros(1, 1, 1);
        t.layer2.bias.data_mut()[0] = 7.5;
        let mut rng = Rng::new(1);
        let x = random_matrix(4, 1, &mut rng);
        let y = random_matrix(4, 1, &mut rng);
        let neg = sample_derangement(4, &mut rng).unwrap();
        assert!(dv_mi(&t, &x, &y, &neg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn jsd_hand_computation() {
        // d = 1, hidden = 1: T(a, b) = relu(a + b).
        let l1 = LinearLayer::from_parts(Matrix::from_rows(&[[1.0, 1.0]]).unwrap(), &[0.0]).unwrap();
        let l2 = LinearLayer::from_parts(Matrix::from_rows(&[[1.0]]).unwrap(), &[0.0]).unwrap();
        let t = Discriminator::from_layers(l1, l2, 1).unwrap();
        let x = Matrix::from_rows(&[[1.0], [-2.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.5], [1.0]]).unwrap();
        let neg = NegativePairing::new(vec![1, 0]).unwrap();
        // joint: relu(1.5) = 1.5, relu(-1) = 0; negatives: relu(-2+0.5)=0, relu(1+1)=2
        let sp = |z: f64| (1.0 + z.exp()).ln();
        let expected = (-sp(-1.5) - sp(0.0)) / 2.0 - (sp(0.0) + sp(2.0)) / 2.0;
        assert!((jsd_mi(&t, &x, &y, &neg).unwrap() - expected).abs() < 1e-14);
        let dv_expected = 0.75 - ((1.0 + 2f64.exp()) / 2.0).ln();
        assert!((dv_mi(&t, &x, &y, &neg).unwrap() - dv_expected).abs() < 1e-14);
    }

    #[test]
    fn perfect_discriminator_approaches_zero_from_below() {
        // hidden = [relu(a + b), relu(-a - b)]; joint pairs have |a + b| = 2,
        // negatives a + b = 0, so T = s·(h₁ + h₂) - s scores +s / -s.
        let w1 = Matrix::from_rows(&[[1.0, 1.0], [-1.0, -1.0]]).unwrap();
        let l1 = LinearLayer::from_parts(w1, &[0.0, 0.0]).unwrap();
        let x = Matrix::from_rows(&[[1.0], [-1.0]]).unwrap();
        let neg = NegativePairing::new(vec![1, 0]).unwrap();
        let mut last = f64::NEG_INFINITY;
        for s in [1.0, 5.0, 20.0, 50.0] {
            let l2 = LinearLayer::from_parts(Matrix::from_rows(&[[s, s]]).unwrap(), &[-s]).unwrap();
            let t = Discriminator::from_layers(l1.clone(), l2, 1).unwrap();
            let est = jsd_mi(&t, &x, &x, &neg).unwrap();
            assert!(est < 0.0 && est > last, "s = {s}: {est}");
            assert!((est + 2.0 * softplus(-s)).abs() < 1e-15);
            last = est;
        }
        assert!(last > -1e-20);
    }

    #[test]
    fn derangement_properties() {
        assert_eq!(
            sample_derangement(2, &mut Rng::new(0)).unwrap().as_slice(),
            &[1, 0]
        );
        for seed in 0..200 {
            let p = sample_derangement(5, &mut Rng::new(seed)).unwrap();
            assert!(NegativePairing::new(p.as_slice().to_vec()).is_ok());
        }
        assert!(matches!(
            sample_derangement(1, &mut Rng::new(0)),
            Err(Error::BatchTooSmall(1))
        ));
        assert!(NegativePairing::new(vec![0, 1]).is_err());
        assert!(NegativePairing::new(vec![1, 1]).is_err());
    }

    #[test]
    fn estimators_reject_single_row() {
        let t = Discriminator::zeros(1, 1, 1);
        let x = Matrix::zeros(1, 1);
        let neg = NegativePairing::new(vec![1, 0]).unwrap();
        assert!(matches!(jsd_mi(&t, &x, &x, &neg), Err(Error::BatchTooSmall(1))));
    }

    fn check_estimator_gradients(estimator: Estimator) {
        let mut rng = Rng::new(21);
        let mut t = Discriminator::new(3, 2, 5, &mut rng);
        // Scale up so scores are not all near zero.
        for l in t.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w *= 8.0);
        }
        let x = random_matrix(6, 3, &mut rng);
        let y = random_matrix(6, 2, &mut rng);
        let neg = sample_derangement(6, &mut rng).unwrap();
        let scale = -0.7;
        let g = estimator.backward(&mut t, &x, &y, &neg, scale).unwrap();

        // Discriminator parameters.
        let params = flatten_params(&t.layers());
        let mut grads = flatten_grads(&t.layers());
        if estimator == Estimator::Dv {
            // DV is invariant to the output bias: its gradient is exactly zero
            // and the numeric one is pure roundoff, so compare it by value.
            let bias_grad = grads.pop().unwrap();
            assert!(bias_grad.abs() < 1e-14, "{bias_grad}");
        }
        let checked = grads.len();
        let mut probe = t.clone();
        let report = finite_diff_check(&params[..checked], &grads, GradCheckOptions::default(), |p| {
            let mut full = p.to_vec();
            full.extend_from_slice(&params[checked..]);
            unflatten_params(&mut probe.layers_mut(), &full)?;
            Ok(scale * estimator.estimate(&probe, &x, &y, &neg)?)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{estimator:?} params {report:?}");

        // Both arguments.
        let mut analytic = g.grad_x.data().to_vec();
        analytic.extend_from_slice(g.grad_y.data());
        let mut flat = x.data().to_vec();
        flat.extend_from_slice(y.data());
        let report = finite_diff_check(&flat, &analytic, GradCheckOptions::default(), |p| {
            let xs = Matrix::from_vec(6, 3, p[..18].to_vec())?;
            let ys = Matrix::from_vec(6, 2, p[18..].to_vec())?;
            Ok(scale * estimator.estimate(&t, &xs, &ys, &neg)?)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{estimator:?} inputs {report:?}");
    }

    #[test]
    fn jsd_gradients_match_finite_differences() {
        check_estimator_gradients(Estimator::Jsd);
    }

    #[test]
    fn dv_gradients_match_finite_differences() {
        check_estimator_gradients(Estimator::Dv);
    }

    #[test]
    fn dv_is_invariant_to_row_order() {
        let mut rng = Rng::new(33);
        let t = Discriminator::new(2, 2, 4, &mut rng);
        let x = random_matrix(7, 2, &mut rng);
        let y = random_matrix(7, 2, &mut rng);
        let neg = sample_derangement(7, &mut rng).unwrap();
        let order = rng.permutation(7);
        let xs = x.select_rows(&order).unwrap();
        let ys = y.select_rows(&order).unwrap();
        let neg2 = neg.reindex(&order).unwrap();
        let a = dv_mi(&t, &x, &y, &neg).unwrap();
        let b = dv_mi(&t, &xs, &ys, &neg2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
