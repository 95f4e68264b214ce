//! Task classifier trained on decomposed features.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::FrozenUfd;
use crate::nn::{
    argmax, cross_entropy, flatten_grads, flatten_params, softmax_cross_entropy_backward, softmax_rows,
    unflatten_params, Adam, Checksum, LinearLayer, Matrix, Rng,
};
use crate::{Error, Result};

/// Default minibatch size of the task stage.
pub const DEFAULT_TASK_BATCH: usize = 8;

/// Which features feed the classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum InputMode {
    /// `f_s` only, straight into the softmax layer.
    #[serde(rename = "invariant")]
    InvariantOnly,
    /// `[f_s, f_p]` through a `2d → d` combiner, then the softmax layer.
    #[default]
    #[serde(rename = "invariant-specific")]
    InvariantSpecific,
}

impl InputMode {
    pub fn name(self) -> &'static str {
        match self {
            InputMode::InvariantOnly => "invariant",
            InputMode::InvariantSpecific => "invariant-specific",
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "invariant" | "invariant-only" | "domain-invariant" => Ok(InputMode::InvariantOnly),
            "invariant-specific" => Ok(InputMode::InvariantSpecific),
            _ => Err(Error::InvalidArgument(format!(
                "unknown input mode {s:?}; expected invariant or invariant-specific"
            ))),
        }
    }
}

/// Softmax classifier over decomposed features.
///
/// The combiner is linear (no activation between it and the output layer).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskClassifier {
    combiner: Option<LinearLayer>,
    output: LinearLayer,
    optimizer: Adam,
}

struct HeadPass {
    input: Matrix,
    combined: Option<Matrix>,
    probs: Matrix,
}

impl TaskClassifier {
    pub fn new(d: usize, classes: usize, mode: InputMode, learning_rate: f64, rng: &mut Rng) -> Result<Self> {
        check_classes(classes)?;
        let combiner = match mode {
            InputMode::InvariantSpecific => Some(LinearLayer::uniform(2 * d, d, rng)),
            InputMode::InvariantOnly => None,
        };
        let output = LinearLayer::uniform(d, classes, rng);
        Ok(TaskClassifier {
            combiner,
            output,
            optimizer: Adam::new(learning_rate),
        })
    }

    pub fn zeros(d: usize, classes: usize, mode: InputMode) -> Result<Self> {
        check_classes(classes)?;
        Ok(TaskClassifier {
            combiner: matches!(mode, InputMode::InvariantSpecific).then(|| LinearLayer::zeros(2 * d, d)),
            output: LinearLayer::zeros(d, classes),
            optimizer: Adam::default(),
        })
    }

    pub fn from_layers(
        combiner: Option<LinearLayer>,
        output: LinearLayer,
        learning_rate: f64,
    ) -> Result<Self> {
        check_classes(output.out_dim())?;
        if let Some(c) = &combiner {
            if c.out_dim() != output.in_dim() || c.in_dim() != 2 * output.in_dim() {
                return Err(Error::dims(
                    "TaskClassifier::from_layers",
                    format!("combiner {} -> {}", 2 * output.in_dim(), output.in_dim()),
                    format!("{} -> {}", c.in_dim(), c.out_dim()),
                ));
            }
        }
        Ok(TaskClassifier {
            combiner,
            output,
            optimizer: Adam::new(learning_rate),
        })
    }

    pub fn mode(&self) -> InputMode {
        if self.combiner.is_some() {
            InputMode::InvariantSpecific
        } else {
            InputMode::InvariantOnly
        }
    }

    pub fn dim(&self) -> usize {
        self.output.in_dim()
    }

    pub fn classes(&self) -> usize {
        self.output.out_dim()
    }

    pub fn combiner(&self) -> Option<&LinearLayer> {
        self.combiner.as_ref()
    }

    pub fn output(&self) -> &LinearLayer {
        &self.output
    }

    pub fn layers(&self) -> Vec<&LinearLayer> {
        self.combiner.iter().chain(Some(&self.output)).collect()
    }

    pub fn layers_mut(&mut self) -> Vec<&mut LinearLayer> {
        self.combiner.iter_mut().chain(Some(&mut self.output)).collect()
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers_mut() {
            layer.zero_grads();
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        flatten_params(&self.layers())
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        flatten_grads(&self.layers())
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        unflatten_params(&mut self.layers_mut(), flat)
    }

    pub fn checksum(&self) -> u64 {
        let mut h = Checksum::new();
        for layer in self.layers() {
            h.write_matrix(&layer.weight);
            h.write_matrix(&layer.bias);
        }
        h.finish()
    }

    fn assemble_input(&self, f_s: &Matrix, f_p: Option<&Matrix>) -> Result<Matrix> {
        let d = self.dim();
        if f_s.cols() != d {
            return Err(Error::dims(
                "TaskClassifier::classify",
                format!("{d} invariant columns"),
                f_s.cols(),
            ));
        }
        match (self.mode(), f_p) {
            (InputMode::InvariantOnly, None) => Ok(f_s.clone()),
            (InputMode::InvariantSpecific, Some(f_p)) => {
                if f_p.cols() != d {
                    return Err(Error::dims(
                        "TaskClassifier::classify",
                        format!("{d} specific columns"),
                        f_p.cols(),
                    ));
                }
                f_s.concat_cols(f_p)
            }
            (InputMode::InvariantOnly, Some(_)) => Err(Error::InvalidArgument(
                "specific features supplied to an invariant-only classifier".into(),
            )),
            (InputMode::InvariantSpecific, None) => Err(Error::InvalidArgument(
                "an invariant-specific classifier needs specific features".into(),
            )),
        }
    }

    fn forward(&self, f_s: &Matrix, f_p: Option<&Matrix>) -> Result<HeadPass> {
        let input = self.assemble_input(f_s, f_p)?;
        let combined = match &self.combiner {
            Some(c) => Some(c.forward(&input)?),
            None => None,
        };
        let logits = self.output.forward(combined.as_ref().unwrap_or(&input))?;
        let probs = softmax_rows(&logits)?;
        Ok(HeadPass {
            input,
            combined,
            probs,
        })
    }

    /// Class probabilities, one row per example. `f_p` must be present
    /// exactly when the mode is [`InputMode::InvariantSpecific`].
    pub fn classify(&self, f_s: &Matrix, f_p: Option<&Matrix>) -> Result<Matrix> {
        Ok(self.forward(f_s, f_p)?.probs)
    }

    /// Argmax class per row, lower index on ties.
    pub fn predict(&self, f_s: &Matrix, f_p: Option<&Matrix>) -> Result<Vec<usize>> {
        let probs = self.classify(f_s, f_p)?;
        Ok(probs.iter_rows().map(argmax).collect())
    }

    /// Mean cross-entropy; parameter gradients are accumulated.
    pub fn loss_backward(&mut self, f_s: &Matrix, f_p: Option<&Matrix>, labels: &[usize]) -> Result<f64> {
        let pass = self.forward(f_s, f_p)?;
        let loss = cross_entropy(&pass.probs, labels)?;
        let grad_logits = softmax_cross_entropy_backward(&pass.probs, labels)?;
        match (&mut self.combiner, &pass.combined) {
            (Some(combiner), Some(combined)) => {
                let grad_combined = self.output.backward(combined, &grad_logits)?;
                combiner.backward(&pass.input, &grad_combined)?;
            }
            _ => {
                self.output.backward(&pass.input, &grad_logits)?;
            }
        }
        Ok(loss)
    }

    pub fn loss(&self, f_s: &Matrix, f_p: Option<&Matrix>, labels: &[usize]) -> Result<f64> {
        cross_entropy(&self.classify(f_s, f_p)?, labels)
    }

    /// One Adam step on precomputed features.
    pub fn train_step_on_features(
        &mut self,
        f_s: &Matrix,
        f_p: Option<&Matrix>,
        labels: &[usize],
    ) -> Result<f64> {
        self.zero_grads();
        let loss = self.loss_backward(f_s, f_p, labels)?;
        let mut layers = Vec::with_capacity(2);
        if let Some(c) = self.combiner.as_mut() {
            layers.push(c);
        }
        layers.push(&mut self.output);
        self.optimizer.step_layers(&mut layers)?;
        Ok(loss)
    }

    /// Features for this classifier's mode from a frozen decomposition model.
    pub fn features(&self, ufd: &FrozenUfd, h: &Matrix) -> Result<(Matrix, Option<Matrix>)> {
        let (f_s, f_p) = ufd.extract(h)?;
        Ok(match self.mode() {
            InputMode::InvariantOnly => (f_s, None),
            InputMode::InvariantSpecific => (f_s, Some(f_p)),
        })
    }

    /// One update of the classifier only, on raw embeddings passed through
    /// the frozen extractors.
    pub fn train_step(&mut self, ufd: &FrozenUfd, batch_h: &Matrix, labels: &[usize]) -> Result<f64> {
        let (f_s, f_p) = self.features(ufd, batch_h)?;
        self.train_step_on_features(&f_s, f_p.as_ref(), labels)
    }
}

fn check_classes(classes: usize) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "a classifier needs at least 2 classes, got {classes}"
        )));
    }
    Ok(())
}
