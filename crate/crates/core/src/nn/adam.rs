use crate::nn::{LinearLayer, Matrix};
use crate::{Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 1e-4;

/// Bias-corrected Adam.
///
/// Moment buffers are created on the first step and their shapes are checked
/// against the parameters on every later step.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<Matrix>,
    second_moment: Vec<Matrix>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(DEFAULT_LEARNING_RATE)
    }
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update of every `params[i]` from `grads[i]`. Gradients are not modified.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[&Matrix]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dims("Adam::step", params.len(), grads.len()));
        }
        for (p, g) in params.iter().zip(grads) {
            p.same_shape(g, "Adam::step")?;
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len() {
            return Err(Error::dims(
                "Adam::step",
                format!("{} parameter tensors", self.first_moment.len()),
                params.len(),
            ));
        } else {
            for (m, p) in self.first_moment.iter().zip(params.iter()) {
                m.same_shape(p, "Adam::step")?;
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let correction1 = 1.0 - self.beta1.powi(t);
        let correction2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.learning_rate);

        for ((param, grad), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut().zip(self.second_moment.iter_mut()))
        {
            let values = param.data_mut();
            for (i, &g) in grad.data().iter().enumerate() {
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (1.0 - b1) * g;
                let m_hat = *mi / correction1;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                let v_hat = *vi / correction2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Steps the weights and biases of `layers` in order.
    pub fn step_layers(&mut self, layers: &mut [&mut LinearLayer]) -> Result<()> {
        let mut params = Vec::with_capacity(layers.len() * 2);
        let mut grads = Vec::with_capacity(layers.len() * 2);
        for layer in layers.iter_mut() {
            let LinearLayer {
                weight,
                bias,
                grad_weight,
                grad_bias,
            } = &mut **layer;
            params.push(weight);
            params.push(bias);
            grads.push(&*grad_weight);
            grads.push(&*grad_bias);
        }
        self.step(&mut params, &grads)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(0.1);
        let mut p = Matrix::from_vec(1, 3, vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(1, 3);
        for _ in 0..10 {
            adam.step(&mut [&mut p], &[&g]).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(adam.step_count(), 10);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(0.01);
        let mut p = Matrix::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let g = Matrix::from_vec(1, 2, vec![3.0, -0.002]).unwrap();
        adam.step(&mut [&mut p], &[&g]).unwrap();
        assert!((p.get(0, 0) + 0.01).abs() < 1e-8);
        assert!((p.get(0, 1) - 0.01).abs() < 1e-5);
    }

    #[test]
    fn minimises_a_parabola() {
        // f(x) = x², gradient 2x.
        let mut adam = Adam::new(0.1);
        let mut x = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        for _ in 0..200 {
            let g = x.scale(2.0);
            adam.step(&mut [&mut x], &[&g]).unwrap();
        }
        assert!(x.get(0, 0).abs() < 0.01, "x = {}", x.get(0, 0));
    }

    #[test]
    fn shape_changes_are_rejected() {
        let mut adam = Adam::default();
        let mut p = Matrix::zeros(1, 2);
        adam.step(&mut [&mut p], &[&Matrix::zeros(1, 2)]).unwrap();
        let mut q = Matrix::zeros(2, 2);
        assert!(adam.step(&mut [&mut q], &[&Matrix::zeros(2, 2)]).is_err());
        assert!(adam.step(&mut [&mut p], &[&Matrix::zeros(2, 1)]).is_err());
    }
}
