//! The decomposition model: a domain-invariant extractor, a domain-specific
//! extractor, and three pair discriminators that drive them.
//!
//! Loss terms, all built on [`jsd_mi`](crate::mi::jsd_mi):
//!
//! | term  | value                      | pulls                                    |
//! |-------|----------------------------|------------------------------------------|
//! | `L_s` | `-JSD(t_s; h, f_s)`        | invariant features towards the input     |
//! | `L_r` | `-JSD(t_r; v_s, f_s)`      | invariant output towards its first layer |
//! | `L_p` | `+JSD(t_p; f_s, f_p)`      | invariant and specific outputs apart     |
//! | `L_m` | `+JSD(t_p; v_s, v_p)`      | the two first-layer outputs apart        |
//!
//! The training objective is the weighted sum of the terms enabled by the
//! [`AblationMode`]. By default every parameter, discriminators included,
//! descends that single scalar. [`PrivateDiscriminator::Adversarial`] instead
//! lets `t_p` ascend its own estimate while the extractors descend it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::mi::{jsd_mi, jsd_mi_backward, sample_derangement, Discriminator, NegativePairing};
use crate::nn::{
    flatten_grads, flatten_params, relu, relu_backward, unflatten_params, Adam, Checksum, LinearLayer,
    Matrix, Rng,
};
use crate::{Error, Result};

/// Default minibatch size of the decomposition stage.
pub const DEFAULT_UFD_BATCH: usize = 16;

/// `v = relu(W₁h + b₁) + h`, `f = relu(W₂v + b₂) + v`.
///
/// With all-zero parameters both outputs equal the input.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantExtractor {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
}

/// `v = relu(W₃h + b₃)`, `f = relu(W₄v + b₄)`; no residual path.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecificExtractor {
    pub layer1: LinearLayer,
    pub layer2: LinearLayer,
}

/// Activations of one extractor pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct ExtractorPass {
    pub pre1: Matrix,
    /// First-layer output (after the residual add, for the invariant extractor).
    pub intermediate: Matrix,
    pub pre2: Matrix,
    pub output: Matrix,
}

fn check_width(h: &Matrix, d: usize, op: &'static str) -> Result<()> {
    if h.cols() != d {
        return Err(Error::dims(op, format!("{d} columns"), h.cols()));
    }
    Ok(())
}

impl InvariantExtractor {
    pub fn new(d: usize, rng: &mut Rng) -> Self {
        InvariantExtractor {
            layer1: LinearLayer::uniform(d, d, rng),
            layer2: LinearLayer::uniform(d, d, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        InvariantExtractor {
            layer1: LinearLayer::zeros(d, d),
            layer2: LinearLayer::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn forward(&self, h: &Matrix) -> Result<ExtractorPass> {
        check_width(h, self.dim(), "InvariantExtractor::forward")?;
        let pre1 = self.layer1.forward(h)?;
        let intermediate = relu(&pre1).add(h)?;
        let pre2 = self.layer2.forward(&intermediate)?;
        let output = relu(&pre2).add(&intermediate)?;
        Ok(ExtractorPass {
            pre1,
            intermediate,
            pre2,
            output,
        })
    }

    /// Accumulates parameter gradients given gradients arriving at the
    /// intermediate and final outputs.
    pub fn backward(
        &mut self,
        h: &Matrix,
        pass: &ExtractorPass,
        grad_intermediate: &Matrix,
        grad_output: &Matrix,
    ) -> Result<()> {
        let grad_pre2 = relu_backward(&pass.pre2, grad_output)?;
        let mut grad_v = self.layer2.backward(&pass.intermediate, &grad_pre2)?;
        grad_v.add_assign(grad_output)?;
        grad_v.add_assign(grad_intermediate)?;
        let grad_pre1 = relu_backward(&pass.pre1, &grad_v)?;
        self.layer1.backward(h, &grad_pre1)?;
        Ok(())
    }
}

impl SpecificExtractor {
    pub fn new(d: usize, rng: &mut Rng) -> Self {
        SpecificExtractor {
            layer1: LinearLayer::uniform(d, d, rng),
            layer2: LinearLayer::uniform(d, d, rng),
        }
    }

    pub fn zeros(d: usize) -> Self {
        SpecificExtractor {
            layer1: LinearLayer::zeros(d, d),
            layer2: LinearLayer::zeros(d, d),
        }
    }

    pub fn dim(&self) -> usize {
        self.layer1.in_dim()
    }

    pub fn forward(&self, h: &Matrix) -> Result<ExtractorPass> {
        check_width(h, self.dim(), "SpecificExtractor::forward")?;
        let pre1 = self.layer1.forward(h)?;
        let intermediate = relu(&pre1);
        let pre2 = self.layer2.forward(&intermediate)?;
        let output = relu(&pre2);
        Ok(ExtractorPass {
            pre1,
            intermediate,
            pre2,
            output,
        })
    }

    pub fn backward(
        &mut self,
        h: &Matrix,
        pass: &ExtractorPass,
        grad_intermediate: &Matrix,
        grad_output: &Matrix,
    ) -> Result<()> {
        let grad_pre2 = relu_backward(&pass.pre2, grad_output)?;
        let mut grad_v = self.layer2.backward(&pass.intermediate, &grad_pre2)?;
        grad_v.add_assign(grad_intermediate)?;
        let grad_pre1 = relu_backward(&pass.pre1, &grad_v)?;
        self.layer1.backward(h, &grad_pre1)?;
        Ok(())
    }
}

/// Coefficients of the loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Weight of `L_m`; `None` means "same as `gamma`".
    pub delta: Option<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 0.3,
            gamma: 1.0,
            delta: None,
        }
    }
}

impl LossWeights {
    pub fn delta(&self) -> f64 {
        self.delta.unwrap_or(self.gamma)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.gamma, self.delta()];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn weight(&self, term: LossTerm) -> f64 {
        match term {
            LossTerm::S => self.alpha,
            LossTerm::R => self.beta,
            LossTerm::P => self.gamma,
            LossTerm::M => self.delta(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LossTerm {
    /// Input / invariant-output MI maximisation.
    S,
    /// Intermediate / invariant-output MI maximisation.
    R,
    /// Invariant / specific output MI minimisation.
    P,
    /// Invariant / specific intermediate MI minimisation.
    M,
}

impl LossTerm {
    pub const ALL: [LossTerm; 4] = [LossTerm::S, LossTerm::R, LossTerm::P, LossTerm::M];
}

/// Which loss terms are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AblationMode {
    #[serde(rename = "max-mi")]
    MaxMI,
    #[serde(rename = "max-min-mi")]
    MaxMinMI,
    #[serde(rename = "2max-min-mi")]
    TwoMaxMinMI,
    #[serde(rename = "max-2min")]
    MaxTwoMin,
    #[serde(rename = "2max-2min")]
    TwoMaxTwoMin,
}

impl Default for AblationMode {
    fn default() -> Self {
        AblationMode::TwoMaxMinMI
    }
}

impl AblationMode {
    pub const ALL: [AblationMode; 5] = [
        AblationMode::MaxMI,
        AblationMode::MaxMinMI,
        AblationMode::TwoMaxMinMI,
        AblationMode::MaxTwoMin,
        AblationMode::TwoMaxTwoMin,
    ];

    pub fn terms(self) -> &'static [LossTerm] {
        use LossTerm::*;
        match self {
            AblationMode::MaxMI => &[S],
            AblationMode::MaxMinMI => &[S, P],
            AblationMode::TwoMaxMinMI => &[S, R, P],
            AblationMode::MaxTwoMin => &[S, P, M],
            AblationMode::TwoMaxTwoMin => &[S, R, P, M],
        }
    }

    pub fn is_active(self, term: LossTerm) -> bool {
        self.terms().contains(&term)
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::MaxMI => "max-mi",
            AblationMode::MaxMinMI => "max-min-mi",
            AblationMode::TwoMaxMinMI => "2max-min-mi",
            AblationMode::MaxTwoMin => "max-2min",
            AblationMode::TwoMaxTwoMin => "2max-2min",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        AblationMode::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown ablation mode {s:?}; expected one of max-mi, max-min-mi, \
                     2max-min-mi, max-2min, 2max-2min"
                ))
            })
    }
}

/// Unweighted values of the active terms and the weighted total.
/// Inactive terms are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_s: Option<f64>,
    pub loss_r: Option<f64>,
    pub loss_p: Option<f64>,
    pub loss_m: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn get(&self, term: LossTerm) -> Option<f64> {
        match term {
            LossTerm::S => self.loss_s,
            LossTerm::R => self.loss_r,
            LossTerm::P => self.loss_p,
            LossTerm::M => self.loss_m,
        }
    }

    fn set(&mut self, term: LossTerm, value: f64) {
        let slot = match term {
            LossTerm::S => &mut self.loss_s,
            LossTerm::R => &mut self.loss_r,
            LossTerm::P => &mut self.loss_p,
            LossTerm::M => &mut self.loss_m,
        };
        *slot = Some(value);
    }

    pub fn active_terms(&self) -> Vec<LossTerm> {
        LossTerm::ALL
            .into_iter()
            .filter(|&t| self.get(t).is_some())
            .collect()
    }
}

/// One negative pairing per loss term.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TermNegatives {
    pub s: Option<NegativePairing>,
    pub r: Option<NegativePairing>,
    pub p: Option<NegativePairing>,
    pub m: Option<NegativePairing>,
}

impl TermNegatives {
    /// Independent derangements for each term active in `mode`, drawn in
    /// `S, R, P, M` order.
    pub fn sample(mode: AblationMode, n: usize, rng: &mut Rng) -> Result<Self> {
        let mut out = TermNegatives::default();
        for &term in mode.terms() {
            let neg = sample_derangement(n, rng)?;
            *out.slot(term) = Some(neg);
        }
        Ok(out)
    }

    /// The same pairing for every term.
    pub fn shared(neg: NegativePairing) -> Self {
        TermNegatives {
            s: Some(neg.clone()),
            r: Some(neg.clone()),
            p: Some(neg.clone()),
            m: Some(neg),
        }
    }

    fn slot(&mut self, term: LossTerm) -> &mut Option<NegativePairing> {
        match term {
            LossTerm::S => &mut self.s,
            LossTerm::R => &mut self.r,
            LossTerm::P => &mut self.p,
            LossTerm::M => &mut self.m,
        }
    }

    pub fn get(&self, term: LossTerm) -> Result<&NegativePairing> {
        let slot = match term {
            LossTerm::S => &self.s,
            LossTerm::R => &self.r,
            LossTerm::P => &self.p,
            LossTerm::M => &self.m,
        };
        slot.as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("no negative pairing supplied for term {term:?}")))
    }
}

/// How `t_p`, the discriminator shared by `L_p` and `L_m`, is updated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrivateDiscriminator {
    /// Descends the total loss like every other parameter.
    #[default]
    Joint,
    /// Ascends its estimate: the sign of its gradient is flipped.
    Adversarial,
}

impl PrivateDiscriminator {
    pub fn name(self) -> &'static str {
        match self {
            PrivateDiscriminator::Joint => "joint",
            PrivateDiscriminator::Adversarial => "adversarial",
        }
    }
}

impl FromStr for PrivateDiscriminator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PrivateDiscriminator::Joint, PrivateDiscriminator::Adversarial]
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown t_p update {s:?}")))
    }
}

/// Extractors, discriminators, and one Adam state per component.
#[derive(Debug, Clone, PartialEq)]
pub struct UfdModel {
    pub f_s: InvariantExtractor,
    pub f_p: SpecificExtractor,
    pub t_s: Discriminator,
    pub t_r: Discriminator,
    pub t_p: Discriminator,
    pub t_p_update: PrivateDiscriminator,
    optimizers: [Adam; 5],
}

/// Activations of both extractors for one batch.
#[derive(Debug, Clone)]
pub struct Features {
    pub invariant: ExtractorPass,
    pub specific: ExtractorPass,
}

impl UfdModel {
    /// Draws `f_s`, `f_p`, `t_s`, `t_r`, `t_p` in that order from `rng`.
    pub fn new(d: usize, learning_rate: f64, rng: &mut Rng) -> Self {
        let f_s = InvariantExtractor::new(d, rng);
        let f_p = SpecificExtractor::new(d, rng);
        let t_s = Discriminator::for_features(d, rng);
        let t_r = Discriminator::for_features(d, rng);
        let t_p = Discriminator::for_features(d, rng);
        UfdModel::from_parts(f_s, f_p, t_s, t_r, t_p, learning_rate)
    }

    pub fn zeros(d: usize, learning_rate: f64) -> Self {
        UfdModel::from_parts(
            InvariantExtractor::zeros(d),
            SpecificExtractor::zeros(d),
            Discriminator::zeros(d, d, d),
            Discriminator::zeros(d, d, d),
            Discriminator::zeros(d, d, d),
            learning_rate,
        )
    }

    pub fn from_parts(
        f_s: InvariantExtractor,
        f_p: SpecificExtractor,
        t_s: Discriminator,
        t_r: Discriminator,
        t_p: Discriminator,
        learning_rate: f64,
    ) -> Self {
        UfdModel {
            f_s,
            f_p,
            t_s,
            t_r,
            t_p,
            t_p_update: PrivateDiscriminator::Joint,
            optimizers: std::array::from_fn(|_| Adam::new(learning_rate)),
        }
    }

    pub fn dim(&self) -> usize {
        self.f_s.dim()
    }

    pub fn optimizer_steps(&self) -> u64 {
        self.optimizers[0].step_count()
    }

    /// Layers in checkpoint / flattening order:
    /// `f_s.1, f_s.2, f_p.1, f_p.2, t_s.1, t_s.2, t_r.1, t_r.2, t_p.1, t_p.2`.
    pub fn layers(&self) -> [&LinearLayer; 10] {
        [
            &self.f_s.layer1,
            &self.f_s.layer2,
            &self.f_p.layer1,
            &self.f_p.layer2,
            &self.t_s.layer1,
            &self.t_s.layer2,
            &self.t_r.layer1,
            &self.t_r.layer2,
            &self.t_p.layer1,
            &self.t_p.layer2,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut LinearLayer; 10] {
        [
            &mut self.f_s.layer1,
            &mut self.f_s.layer2,
            &mut self.f_p.layer1,
            &mut self.f_p.layer2,
            &mut self.t_s.layer1,
            &mut self.t_s.layer2,
            &mut self.t_r.layer1,
            &mut self.t_r.layer2,
            &mut self.t_p.layer1,
            &mut self.t_p.layer2,
        ]
    }

    pub const LAYER_NAMES: [&'static str; 10] = [
        "f_s.layer1",
        "f_s.layer2",
        "f_p.layer1",
        "f_p.layer2",
        "t_s.layer1",
        "t_s.layer2",
        "t_r.layer1",
        "t_r.layer2",
        "t_p.layer1",
        "t_p.layer2",
    ];

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

    /// Fingerprint of every parameter tensor (gradients and optimizer state excluded).
    pub fn checksum(&self) -> u64 {
        let mut h = Checksum::new();
        for layer in self.layers() {
            h.write_matrix(&layer.weight);
            h.write_matrix(&layer.bias);
        }
        h.finish()
    }

    pub fn fs_forward(&self, h: &Matrix) -> Result<ExtractorPass> {
        self.f_s.forward(h)
    }

    pub fn fp_forward(&self, h: &Matrix) -> Result<ExtractorPass> {
        self.f_p.forward(h)
    }

    pub fn features(&self, h: &Matrix) -> Result<Features> {
        Ok(Features {
            invariant: self.f_s.forward(h)?,
            specific: self.f_p.forward(h)?,
        })
    }

    /// Unweighted value of a single term.
    pub fn term_loss(&self, term: LossTerm, h: &Matrix, neg: &NegativePairing) -> Result<f64> {
        let feats = self.features(h)?;
        self.term_loss_with(term, h, &feats, neg)
    }

    fn term_loss_with(
        &self,
        term: LossTerm,
        h: &Matrix,
        feats: &Features,
        neg: &NegativePairing,
    ) -> Result<f64> {
        let (s, p) = (&feats.invariant, &feats.specific);
        match term {
            LossTerm::S => Ok(-jsd_mi(&self.t_s, h, &s.output, neg)?),
            LossTerm::R => Ok(-jsd_mi(&self.t_r, &s.intermediate, &s.output, neg)?),
            LossTerm::P => jsd_mi(&self.t_p, &s.output, &p.output, neg),
            LossTerm::M => jsd_mi(&self.t_p, &s.intermediate, &p.intermediate, neg),
        }
    }

    pub fn loss_s(&self, h: &Matrix, neg: &NegativePairing) -> Result<f64> {
        self.term_loss(LossTerm::S, h, neg)
    }

    pub fn loss_r(&self, h: &Matrix, neg: &NegativePairing) -> Result<f64> {
        self.term_loss(LossTerm::R, h, neg)
    }

    pub fn loss_p(&self, h: &Matrix, neg: &NegativePairing) -> Result<f64> {
        self.term_loss(LossTerm::P, h, neg)
    }

    pub fn loss_m(&self, h: &Matrix, neg: &NegativePairing) -> Result<f64> {
        self.term_loss(LossTerm::M, h, neg)
    }

    /// Weighted objective over the mode's active terms, without gradients.
    pub fn ufd_loss(
        &self,
        h: &Matrix,
        weights: &LossWeights,
        mode: AblationMode,
        negatives: &TermNegatives,
    ) -> Result<LossBreakdown> {
        weights.validate()?;
        let feats = self.features(h)?;
        let mut out = LossBreakdown::default();
        for &term in mode.terms() {
            let value = self.term_loss_with(term, h, &feats, negatives.get(term)?)?;
            out.set(term, value);
            out.total += weights.weight(term) * value;
        }
        Ok(out)
    }

    /// As [`UfdModel::ufd_loss`], also accumulating `∂total/∂θ` into every
    /// layer's gradient buffers. Buffers are not cleared first.
    pub fn ufd_loss_backward(
        &mut self,
        h: &Matrix,
        weights: &LossWeights,
        mode: AblationMode,
        negatives: &TermNegatives,
    ) -> Result<LossBreakdown> {
        weights.validate()?;
        let feats = self.features(h)?;
        let (n, d) = (h.rows(), self.dim());
        let mut grad_vs = Matrix::zeros(n, d);
        let mut grad_fs = Matrix::zeros(n, d);
        let mut grad_vp = Matrix::zeros(n, d);
        let mut grad_fp = Matrix::zeros(n, d);
        let (s, p) = (&feats.invariant, &feats.specific);

        let mut out = LossBreakdown::default();
        for &term in mode.terms() {
            let w = weights.weight(term);
            let neg = negatives.get(term)?;
            let value = match term {
                LossTerm::S => {
                    let g = jsd_mi_backward(&mut self.t_s, h, &s.output, neg, -w)?;
                    grad_fs.add_assign(&g.grad_y)?;
                    -g.estimate
                }
                LossTerm::R => {
                    let g = jsd_mi_backward(&mut self.t_r, &s.intermediate, &s.output, neg, -w)?;
                    grad_vs.add_assign(&g.grad_x)?;
                    grad_fs.add_assign(&g.grad_y)?;
                    -g.estimate
                }
                LossTerm::P => {
                    let g = jsd_mi_backward(&mut self.t_p, &s.output, &p.output, neg, w)?;
                    grad_fs.add_assign(&g.grad_x)?;
                    grad_fp.add_assign(&g.grad_y)?;
                    g.estimate
                }
                LossTerm::M => {
                    let g = jsd_mi_backward(&mut self.t_p, &s.intermediate, &p.intermediate, neg, w)?;
                    grad_vs.add_assign(&g.grad_x)?;
                    grad_vp.add_assign(&g.grad_y)?;
                    g.estimate
                }
            };
            out.set(term, value);
            out.total += w * value;
        }

        self.f_s.backward(h, s, &grad_vs, &grad_fs)?;
        self.f_p.backward(h, p, &grad_vp, &grad_fp)?;
        if !out.total.is_finite() {
            return Err(Error::NonFinite("ufd_loss"));
        }
        Ok(out)
    }

    /// One joint Adam update of every parameter on `batch`, with fresh
    /// negatives for each active term.
    pub fn train_step(
        &mut self,
        batch: &Matrix,
        weights: &LossWeights,
        mode: AblationMode,
        rng: &mut Rng,
    ) -> Result<LossBreakdown> {
        if batch.rows() < 2 {
            return Err(Error::BatchTooSmall(batch.rows()));
        }
        let negatives = TermNegatives::sample(mode, batch.rows(), rng)?;
        self.train_step_with(batch, weights, mode, &negatives)
    }

    /// [`UfdModel::train_step`] with caller-supplied negatives.
    pub fn train_step_with(
        &mut self,
        batch: &Matrix,
        weights: &LossWeights,
        mode: AblationMode,
        negatives: &TermNegatives,
    ) -> Result<LossBreakdown> {
        self.zero_grads();
        let breakdown = self.ufd_loss_backward(batch, weights, mode, negatives)?;
        let [fs, fp, ts, tr, tp] = &mut self.optimizers;
        fs.step_layers(&mut [&mut self.f_s.layer1, &mut self.f_s.layer2])?;
        fp.step_layers(&mut [&mut self.f_p.layer1, &mut self.f_p.layer2])?;
        ts.step_layers(&mut self.t_s.layers_mut())?;
        tr.step_layers(&mut self.t_r.layers_mut())?;
        if self.t_p_update == PrivateDiscriminator::Adversarial {
            for layer in self.t_p.layers_mut() {
                layer.grad_weight = layer.grad_weight.scale(-1.0);
                layer.grad_bias = layer.grad_bias.scale(-1.0);
            }
        }
        tp.step_layers(&mut self.t_p.layers_mut())?;
        Ok(breakdown)
    }

    /// Ends training. The frozen model only exposes feature extraction.
    pub fn freeze(self) -> FrozenUfd {
        FrozenUfd { model: self }
    }
}

/// A trained model whose parameters can no longer change.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenUfd {
    model: UfdModel,
}

impl FrozenUfd {
    pub fn model(&self) -> &UfdModel {
        &self.model
    }

    pub fn dim(&self) -> usize {
        self.model.dim()
    }

    pub fn checksum(&self) -> u64 {
        self.model.checksum()
    }

    /// `(f_s, f_p)` for every row of `h`.
    pub fn extract(&self, h: &Matrix) -> Result<(Matrix, Matrix)> {
        let feats = self.model.features(h)?;
        Ok((feats.invariant.output, feats.specific.output))
    }
}

/// Exposed for tests and the gradient-check harness: the total objective at
/// the given flat parameters.
pub fn objective_at(
    model: &UfdModel,
    flat: &[f64],
    h: &Matrix,
    weights: &LossWeights,
    mode: AblationMode,
    negatives: &TermNegatives,
) -> Result<f64> {
    let mut probe = model.clone();
    probe.set_flat_params(flat)?;
    Ok(probe.ufd_loss(h, weights, mode, negatives)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, GradCheckOptions};
    use std::f64::consts::LN_2;

    fn random_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        m.data_mut().iter_mut().for_each(|v| *v = rng.normal());
        m
    }

    /// Random model with weights scaled up so relu units are mixed and scores
    /// are away from zero.
    fn lively_model(d: usize, seed: u64) -> UfdModel {
        let mut rng = Rng::new(seed);
        let mut model = UfdModel::new(d, 1e-3, &mut rng);
        for layer in model.layers_mut() {
            layer.weight.data_mut().iter_mut().for_each(|w| *w *= 3.0);
        }
        model
    }

    #[test]
    fn zero_invariant_extractor_is_identity() {
        let mut rng = Rng::new(0);
        let h = random_matrix(5, 4, &mut rng);
        let pass = InvariantExtractor::zeros(4).forward(&h).unwrap();
        assert_eq!(pass.intermediate, h);
        assert_eq!(pass.output, h);
    }

    #[test]
    fn invariant_extractor_hand_arithmetic() {
        let l1 = LinearLayer::from_parts(
            Matrix::from_rows(&[[1.0, 0.0], [0.0, -1.0]]).unwrap(),
            &[0.0, 0.5],
        )
        .unwrap();
        let l2 = LinearLayer::from_parts(
            Matrix::from_rows(&[[0.0, 1.0], [1.0, 1.0]]).unwrap(),
            &[-1.0, 0.0],
        )
        .unwrap();
        let f = InvariantExtractor {
            layer1: l1,
            layer2: l2,
        };
        let h = Matrix::from_rows(&[[2.0, 1.0]]).unwrap();
        // pre1 = [2, -0.5] → relu [2, 0] → v = [4, 1]
        // pre2 = [1 - 1, 4 + 1] = [0, 5] → relu [0, 5] → f = [4, 6]
        let pass = f.forward(&h).unwrap();
        assert_eq!(pass.intermediate.data(), &[4.0, 1.0]);
        assert_eq!(pass.output.data(), &[4.0, 6.0]);
    }

    #[test]
    fn specific_extractor_cases() {
        let mut rng = Rng::new(1);
        let h = random_matrix(4, 3, &mut rng);
        let zero = SpecificExtractor::zeros(3).forward(&h).unwrap();
        assert!(zero.output.data().iter().all(|&v| v == 0.0));

        let mut neg = SpecificExtractor::zeros(3);
        neg.layer1.bias.fill(-1.0);
        neg.layer1.weight = Matrix::identity(3);
        let positive = h.map(|v| v.abs() + 1.0).scale(-1.0);
        let out = neg.forward(&positive).unwrap();
        assert!(out.output.data().iter().all(|&v| v == 0.0));

        // Composition oracle: two sequential layer calls.
        let f = SpecificExtractor::new(3, &mut rng);
        let pass = f.forward(&h).unwrap();
        let manual = relu(&f.layer2.forward(&relu(&f.layer1.forward(&h).unwrap())).unwrap());
        assert_eq!(pass.output, manual);
        assert!(pass.output.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn extractors_reject_wrong_width() {
        let model = UfdModel::zeros(4, 1e-4);
        assert!(model.fs_forward(&Matrix::zeros(2, 3)).is_err());
        assert!(model.fp_forward(&Matrix::zeros(2, 5)).is_err());
    }

    #[test]
    fn zero_discriminator_term_values() {
        let model = UfdModel::zeros(3, 1e-4);
        let mut rng = Rng::new(2);
        let h = random_matrix(4, 3, &mut rng);
        let neg = sample_derangement(4, &mut rng).unwrap();
        let two_ln2 = 2.0 * LN_2;
        assert!((model.loss_s(&h, &neg).unwrap() - two_ln2).abs() < 1e-12);
        assert!((model.loss_r(&h, &neg).unwrap() - two_ln2).abs() < 1e-12);
        assert!((model.loss_p(&h, &neg).unwrap() + two_ln2).abs() < 1e-12);
        assert!((model.loss_m(&h, &neg).unwrap() + two_ln2).abs() < 1e-12);

        let b = model
            .ufd_loss(
                &h,
                &LossWeights::default(),
                AblationMode::TwoMaxMinMI,
                &TermNegatives::shared(neg),
            )
            .unwrap();
        assert!((b.total - 0.3 * two_ln2).abs() < 1e-12);
        assert!((b.total - 0.415_888_308_335_967_2).abs() < 1e-12);
    }

    #[test]
    fn mode_term_sets() {
        use LossTerm::*;
        let expected: [(AblationMode, &[LossTerm]); 5] = [
            (AblationMode::MaxMI, &[S]),
            (AblationMode::MaxMinMI, &[S, P]),
            (AblationMode::TwoMaxMinMI, &[S, R, P]),
            (AblationMode::MaxTwoMin, &[S, P, M]),
            (AblationMode::TwoMaxTwoMin, &[S, R, P, M]),
        ];
        let model = lively_model(3, 3);
        let mut rng = Rng::new(3);
        let h = random_matrix(5, 3, &mut rng);
        let negs = TermNegatives::shared(sample_derangement(5, &mut rng).unwrap());
        for (mode, terms) in expected {
            assert_eq!(mode.terms(), terms);
            let b = model.ufd_loss(&h, &LossWeights::default(), mode, &negs).unwrap();
            assert_eq!(b.active_terms(), terms, "{mode}");
            assert_eq!(mode.name().parse::<AblationMode>().unwrap(), mode);
        }
        assert!("max-max".parse::<AblationMode>().is_err());
        assert_eq!(
            "2Max-Min-MI".parse::<AblationMode>().unwrap(),
            AblationMode::TwoMaxMinMI
        );
    }

    #[test]
    fn delta_defaults_to_gamma() {
        let w = LossWeights {
            gamma: 0.7,
            ..LossWeights::default()
        };
        assert_eq!(w.delta(), 0.7);
        let bad = LossWeights {
            beta: -0.1,
            ..LossWeights::default()
        };
        assert!(bad.validate().is_err());
    }

    fn check_full_gradient(mode: AblationMode, model: &mut UfdModel, n: usize, seed: u64) {
        let mut rng = Rng::new(seed);
        let h = random_matrix(n, model.dim(), &mut rng);
        let negs = TermNegatives::sample(mode, n, &mut rng).unwrap();
        let weights = LossWeights::default();
        model.zero_grads();
        model.ufd_loss_backward(&h, &weights, mode, &negs).unwrap();
        let params = model.flat_params();
        let grads = model.flat_grads();
        // At the default initialisation some gradients are ~1e-8, below what
        // a fixed 1e-5 step resolves in f64.
        let options = GradCheckOptions::adaptive();
        let report = finite_diff_check(&params, &grads, options, |p| {
            objective_at(model, p, &h, &weights, mode, &negs)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{mode}: {report:?}");
        assert!(report.skipped_kinks * 10 < report.checked, "{report:?}");
    }

    #[test]
    fn full_objective_gradients_every_mode() {
        for (i, mode) in AblationMode::ALL.into_iter().enumerate() {
            let seed = 40 + i as u64;
            let mut model = UfdModel::new(8, 1e-3, &mut Rng::new(seed));
            check_full_gradient(mode, &mut model, 4, seed + 100);
            let mut lively = lively_model(4, seed);
            check_full_gradient(mode, &mut lively, 6, seed + 200);
        }
    }

    #[test]
    fn backward_value_matches_forward_value() {
        let mut model = lively_model(4, 8);
        let mut rng = Rng::new(8);
        let h = random_matrix(6, 4, &mut rng);
        let negs = TermNegatives::sample(AblationMode::TwoMaxTwoMin, 6, &mut rng).unwrap();
        let w = LossWeights::default();
        let a = model.ufd_loss(&h, &w, AblationMode::TwoMaxTwoMin, &negs).unwrap();
        let b = model
            .ufd_loss_backward(&h, &w, AblationMode::TwoMaxTwoMin, &negs)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn inactive_discriminators_are_untouched() {
        let mut model = UfdModel::new(4, 1e-3, &mut Rng::new(5));
        let before = model.clone();
        let h = random_matrix(8, 4, &mut Rng::new(6));
        let mut rng = Rng::new(7);
        model
            .train_step(&h, &LossWeights::default(), AblationMode::MaxMI, &mut rng)
            .unwrap();
        assert_ne!(model.t_s, before.t_s);
        assert_ne!(model.f_s, before.f_s);
        for (a, b) in model.t_r.layers().iter().zip(before.t_r.layers()) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
        }
        for (a, b) in model.t_p.layers().iter().zip(before.t_p.layers()) {
            assert_eq!(a.weight, b.weight);
            assert_eq!(a.bias, b.bias);
        }
    }

    #[test]
    fn train_step_is_deterministic() {
        let base = UfdModel::new(5, 1e-3, &mut Rng::new(10));
        let h = random_matrix(16, 5, &mut Rng::new(11));
        let run = |mut m: UfdModel| {
            let mut rng = Rng::new(12);
            for _ in 0..5 {
                m.train_step(&h, &LossWeights::default(), AblationMode::TwoMaxTwoMin, &mut rng)
                    .unwrap();
            }
            m
        };
        let a = run(base.clone());
        let b = run(base);
        assert_eq!(a.checksum(), b.checksum());
        assert_eq!(a.flat_params(), b.flat_params());
        assert_eq!(a.optimizer_steps(), 5);
    }

    #[test]
    fn train_step_rejects_single_row() {
        let mut m = UfdModel::zeros(2, 1e-3);
        let r = m.train_step(
            &Matrix::zeros(1, 2),
            &LossWeights::default(),
            AblationMode::MaxMI,
            &mut Rng::new(0),
        );
        assert!(matches!(r, Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn adversarial_update_mirrors_only_t_p() {
        let base = lively_model(4, 21);
        let h = random_matrix(8, 4, &mut Rng::new(22));
        let negatives = TermNegatives::sample(AblationMode::TwoMaxTwoMin, 8, &mut Rng::new(23)).unwrap();
        let step = |update: PrivateDiscriminator| {
            let mut m = base.clone();
            m.t_p_update = update;
            m.train_step_with(
                &h,
                &LossWeights::default(),
                AblationMode::TwoMaxTwoMin,
                &negatives,
            )
            .unwrap();
            m
        };
        let joint = step(PrivateDiscriminator::Joint);
        let adv = step(PrivateDiscriminator::Adversarial);
        for (name, ((b, j), a)) in UfdModel::LAYER_NAMES
            .iter()
            .zip(base.layers().iter().zip(joint.layers()).zip(adv.layers()))
        {
            for ((b, j), a) in b.weight.data().iter().zip(j.weight.data()).zip(a.weight.data()) {
                if name.starts_with("t_p") {
                    assert_eq!(a - b, -(j - b), "{name}");
                } else {
                    assert_eq!(a, j, "{name}");
                }
            }
        }
        assert_eq!(
            "Adversarial".parse::<PrivateDiscriminator>().unwrap(),
            PrivateDiscriminator::Adversarial
        );
    }
}
