//! Deterministic dense network engine with hand-written backpropagation.

mod activation;
mod adam;
mod gradcheck;
mod linear;
mod matrix;
mod rng;

pub use activation::{
    argmax, cross_entropy, logistic, relu, relu_backward, softmax, softmax_cross_entropy_backward,
    softmax_rows, softplus, PROB_FLOOR,
};
pub use adam::{Adam, DEFAULT_LEARNING_RATE};
pub use gradcheck::{
    finite_diff_check, flatten_grads, flatten_params, unflatten_params, GradCheck, GradCheckOptions,
    DEFAULT_EPSILON,
};
pub use linear::{LinearLayer, INIT_RANGE};
pub use matrix::{Checksum, Matrix};
pub use rng::Rng;
