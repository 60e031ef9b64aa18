//! λ-conditioned differentiable models.
//!
//! A model is an [`ArchitectureSpec`] plus one flat parameter vector `xi`.
//! Hidden layers are dense; with FiLM conditioning every hidden pre-activation
//! `z` is replaced by `γ(λ) ⊙ z + β(λ)` where `γ` and `β` are affine in λ.
//! Gradients with respect to `xi` are computed by an explicit reverse pass
//! over this fixed graph.
//!
//! Parameter layout, in declaration order, for each hidden layer
//! (`in → out`):
//!
//! 1. weights, `out × in`, row-major
//! 2. bias, `out`
//! 3. FiLM only: γ intercept, γ slope, β intercept, β slope (`out` each)
//!
//! followed by the scalar head: weights (`last`), bias (`1`).

mod checkpoint;
mod gradcheck;
mod network;

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::risk::{LossKind, RiskLevel};
use crate::rng::{self, Purpose};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{check_gradient, GradientCheck};
pub use network::film_modulate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputKind {
    ScalarRegression,
    Logit,
}

impl OutputKind {
    pub fn default_loss(self) -> LossKind {
        match self {
            OutputKind::ScalarRegression => LossKind::SquaredError,
            OutputKind::Logit => LossKind::BinaryCrossEntropy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    None,
    FilmAffine,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub activation: Activation,
    pub output: OutputKind,
    pub conditioning: Conditioning,
}

impl ArchitectureSpec {
    /// `w·x + b`, no conditioning.
    pub fn linear(input_dim: usize) -> Self {
        ArchitectureSpec {
            input_dim,
            hidden_layers: Vec::new(),
            activation: Activation::Identity,
            output: OutputKind::ScalarRegression,
            conditioning: Conditioning::None,
        }
    }

    pub fn mlp(input_dim: usize, hidden_layers: Vec<usize>, activation: Activation) -> Self {
        ArchitectureSpec {
            input_dim,
            hidden_layers,
            activation,
            output: OutputKind::ScalarRegression,
            conditioning: Conditioning::None,
        }
    }

    pub fn with_film(mut self) -> Self {
        self.conditioning = Conditioning::FilmAffine;
        self
    }

    pub fn with_output(mut self, output: OutputKind) -> Self {
        self.output = output;
        self
    }

    /// Same spec with conditioning stripped.
    pub fn precise(&self) -> Self {
        ArchitectureSpec {
            conditioning: Conditioning::None,
            ..self.clone()
        }
    }

    pub fn is_conditioned(&self) -> bool {
        self.conditioning == Conditioning::FilmAffine
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_layers.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.is_conditioned() && self.hidden_layers.is_empty() {
            return Err(Error::Config(
                "FiLM conditioning needs at least one hidden layer to modulate".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn layout(&self) -> Layout {
        let mut offset = 0;
        let mut take = |len: usize| {
            let r = offset..offset + len;
            offset += len;
            r
        };
        let mut layers = Vec::with_capacity(self.hidden_layers.len());
        let mut fan_in = self.input_dim;
        for &width in &self.hidden_layers {
            let weights = take(width * fan_in);
            let bias = take(width);
            let film = self.is_conditioned().then(|| FilmLayout {
                gamma0: take(width),
                gamma1: take(width),
                beta0: take(width),
                beta1: take(width),
            });
            layers.push(LayerLayout { fan_in, width, weights, bias, film });
            fan_in = width;
        }
        let head_weights = take(fan_in);
        let head_bias = take(1);
        Layout {
            layers,
            head_fan_in: fan_in,
            head_weights,
            head_bias,
            total: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

#[derive(Debug, Clone)]
pub(crate) struct FilmLayout {
    pub gamma0: Range<usize>,
    pub gamma1: Range<usize>,
    pub beta0: Range<usize>,
    pub beta1: Range<usize>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerLayout {
    pub fan_in: usize,
    pub width: usize,
    pub weights: Range<usize>,
    pub bias: Range<usize>,
    pub film: Option<FilmLayout>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub layers: Vec<LayerLayout>,
    pub head_fan_in: usize,
    pub head_weights: Range<usize>,
    pub head_bias: Range<usize>,
    pub total: usize,
}

/// Gradient of a scalar with respect to a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(len: usize) -> Self {
        GradientVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, scale: f64, other: &GradientVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.0.iter_mut().for_each(|v| *v *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Anything the training loops can optimise: a flat parameter vector with a
/// per-domain mean loss and its gradient, conditioned on λ.
pub trait Hypothesis: Sync {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn mean_loss(&self, domain: &DomainDataset, lambda: RiskLevel, loss: LossKind) -> Result<f64>;

    fn loss_gradient(
        &self,
        domain: &DomainDataset,
        lambda: RiskLevel,
        loss: LossKind,
    ) -> Result<(f64, GradientVector)>;

    /// Whether outputs depend on the risk level.
    fn is_conditioned(&self) -> bool;

    fn num_params(&self) -> usize {
        self.params().len()
    }
}

/// Mutable `(γ0, γ1, β0, β1)` slices of one FiLM layer.
pub type FilmCoefficients<'a> = (&'a mut [f64], &'a mut [f64], &'a mut [f64], &'a mut [f64]);

/// An architecture together with its parameter vector ξ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedParams {
    spec: ArchitectureSpec,
    xi: Vec<f64>,
}

impl AugmentedParams {
    pub fn from_parts(spec: ArchitectureSpec, xi: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        let expected = spec.param_count();
        if xi.len() != expected {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, architecture needs {expected}",
                xi.len()
            )));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("parameter vector contains non-finite values".into()));
        }
        Ok(AugmentedParams { spec, xi })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn into_parts(self) -> (ArchitectureSpec, Vec<f64>) {
        (self.spec, self.xi)
    }

    /// Copy with FiLM parameters removed; only meaningful when the
    /// modulation is the identity.
    pub fn strip_conditioning(&self) -> AugmentedParams {
        let layout = self.spec.layout();
        let precise = self.spec.precise();
        let mut xi = Vec::with_capacity(precise.param_count());
        for layer in &layout.layers {
            xi.extend_from_slice(&self.xi[layer.weights.clone()]);
            xi.extend_from_slice(&self.xi[layer.bias.clone()]);
        }
        xi.extend_from_slice(&self.xi[layout.head_weights.clone()]);
        xi.extend_from_slice(&self.xi[layout.head_bias.clone()]);
        AugmentedParams { spec: precise, xi }
    }

    /// Returns a mutable view of the FiLM coefficients of hidden layer
    /// `layer` as `(γ0, γ1, β0, β1)`.
    pub fn film_coefficients_mut(
        &mut self,
        layer: usize,
    ) -> Option<FilmCoefficients<'_>> {
        let layout = self.spec.layout();
        let film = layout.layers.get(layer)?.film.clone()?;
        // ranges are contiguous and ordered γ0, γ1, β0, β1
        let block = &mut self.xi[film.gamma0.start..film.beta1.end];
        let w = film.gamma0.len();
        let (g0, rest) = block.split_at_mut(w);
        let (g1, rest) = rest.split_at_mut(w);
        let (b0, b1) = rest.split_at_mut(w);
        Some((g0, g1, b0, b1))
    }

    pub fn forward(&self, x: &[f64], lambda: RiskLevel) -> Result<f64> {
        network::forward_one(self, x, lambda)
    }

    /// Outputs for every row of `features`.
    pub fn predict(&self, features: &ndarray::Array2<f64>, lambda: RiskLevel) -> Result<Vec<f64>> {
        network::predict(self, features.view(), lambda)
    }

    /// Smallest |post-FiLM pre-activation| over all hidden units and rows;
    /// `None` for linear models. Useful to keep finite-difference checks away
    /// from ReLU kinks.
    pub fn min_abs_preactivation(&self, domain: &DomainDataset, lambda: RiskLevel) -> Result<Option<f64>> {
        network::min_abs_preactivation(self, domain, lambda)
    }
}

impl Hypothesis for AugmentedParams {
    fn params(&self) -> &[f64] {
        &self.xi
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.xi
    }

    fn is_conditioned(&self) -> bool {
        self.spec.is_conditioned()
    }

    fn mean_loss(&self, domain: &DomainDataset, lambda: RiskLevel, loss: LossKind) -> Result<f64> {
        network::mean_loss(self, domain, lambda, loss)
    }

    fn loss_gradient(
        &self,
        domain: &DomainDataset,
        lambda: RiskLevel,
        loss: LossKind,
    ) -> Result<(f64, GradientVector)> {
        network::loss_gradient(self, domain, lambda, loss)
    }
}

/// Uniform `±1/√fan_in` weights and biases; FiLM maps start at the identity
/// modulation (γ ≡ 1, β ≡ 0 for every λ).
pub fn init_params(spec: &ArchitectureSpec, seed: u64) -> Result<AugmentedParams> {
    spec.validate()?;
    let layout = spec.layout();
    let mut rng = rng::stream(seed, Purpose::Init, 0);
    let mut xi = vec![0.0; layout.total];
    let mut fill = |range: Range<usize>, fan_in: usize, rng: &mut rng::StreamRng| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for v in &mut xi[range] {
            *v = rng.random_range(-bound..bound);
        }
    };
    for layer in &layout.layers {
        fill(layer.weights.clone(), layer.fan_in, &mut rng);
        fill(layer.bias.clone(), layer.fan_in, &mut rng);
    }
    fill(layout.head_weights.clone(), layout.head_fan_in, &mut rng);
    fill(layout.head_bias.clone(), layout.head_fan_in, &mut rng);
    for layer in &layout.layers {
        if let Some(film) = &layer.film {
            xi[film.gamma0.clone()].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    Ok(AugmentedParams { spec: spec.clone(), xi })
}
