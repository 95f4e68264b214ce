use crate::nn::{Matrix, Rng};
use crate::{Error, Result};

/// Half-width of the uniform initialisation interval.
pub const INIT_RANGE: f64 = 0.1;

/// Affine map `y = W x + b` with `W` stored as `(out_dim, in_dim)`.
///
/// Gradient buffers accumulate across calls to [`LinearLayer::backward`]
/// until [`LinearLayer::zero_grads`]; a layer applied twice in one step
/// (joint and negative pairs, say) simply receives both contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Matrix,
    pub grad_weight: Matrix,
    pub grad_bias: Matrix,
}

impl LinearLayer {
    /// All-zero parameters and gradients.
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearLayer {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: Matrix::zeros(1, out_dim),
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: Matrix::zeros(1, out_dim),
        }
    }

    pub fn uniform(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let mut layer = LinearLayer::zeros(in_dim, out_dim);
        layer.init_uniform(rng);
        layer
    }

    /// Builds a layer from explicit weights `(out, in)` and bias `out`.
    pub fn from_parts(weight: Matrix, bias: &[f64]) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::dims(
                "LinearLayer::from_parts",
                format!("bias of length {}", weight.rows()),
                bias.len(),
            ));
        }
        let (out_dim, in_dim) = weight.shape();
        Ok(LinearLayer {
            weight,
            bias: Matrix::row_vector(bias),
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: Matrix::zeros(1, out_dim),
        })
    }

    /// Redraws every weight and bias i.i.d. from `U[-0.1, 0.1]`, weights
    /// first in row-major order, then biases.
    pub fn init_uniform(&mut self, rng: &mut Rng) {
        for w in self.weight.data_mut() {
            *w = rng.uniform(-INIT_RANGE, INIT_RANGE);
        }
        for b in self.bias.data_mut() {
            *b = rng.uniform(-INIT_RANGE, INIT_RANGE);
        }
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn zero_grads(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// `input · Wᵀ + b` for an `n x in_dim` batch.
    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::dims(
                "LinearLayer::forward",
                format!("{} input columns", self.in_dim()),
                input.cols(),
            ));
        }
        let mut out = input.matmul_transposed(&self.weight)?;
        let bias = self.bias.data();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        out.ensure_finite("LinearLayer::forward")
    }

    /// Accumulates parameter gradients for `grad_out = ∂L/∂output` and
    /// returns `∂L/∂input`.
    pub fn backward(&mut self, input: &Matrix, grad_out: &Matrix) -> Result<Matrix> {
        if grad_out.cols() != self.out_dim() || grad_out.rows() != input.rows() {
            return Err(Error::dims(
                "LinearLayer::backward",
                format!("{}x{}", input.rows(), self.out_dim()),
                format!("{}x{}", grad_out.rows(), grad_out.cols()),
            ));
        }
        if input.cols() != self.in_dim() {
            return Err(Error::dims(
                "LinearLayer::backward",
                format!("{} input columns", self.in_dim()),
                input.cols(),
            ));
        }
        let in_dim = self.in_dim();
        for r in 0..input.rows() {
            let x = input.row(r);
            let g = grad_out.row(r);
            for (o, &go) in g.iter().enumerate() {
                if go == 0.0 {
                    continue;
                }
                self.grad_bias.data_mut()[o] += go;
                let gw = &mut self.grad_weight.data_mut()[o * in_dim..(o + 1) * in_dim];
                for (w, &xi) in gw.iter_mut().zip(x) {
                    *w += go * xi;
                }
            }
        }
        grad_out.matmul(&self.weight)
    }
}
