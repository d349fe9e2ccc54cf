//! Small feed-forward scorer with analytic forward and backward passes.
//!
//! Weights are stored row-major with shape `out x in`, batches as `n x d`
//! matrices. Hidden layers apply the configured activation; the final layer
//! is affine and emits raw logits (or embeddings, for encoders).

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::SplitMix64;
use crate::{Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    /// ReLU uses derivative 0 at exactly 0.
    #[inline]
    fn derivative<T: Scalar>(self, pre: T, post: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - post * post,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Spec(format!("unknown activation {other:?}"))),
        }
    }
}

/// Layer widths (input first) plus the hidden activation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layer_dims: Vec<usize>,
    pub activation: Activation,
}

impl ModelSpec {
    /// A scorer: the final width must be 1.
    pub fn new(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self::encoder(layer_dims, activation)?;
        if spec.output_dim() != 1 {
            return Err(Error::Spec(format!(
                "scorer must end in a single output, got {:?}",
                spec.layer_dims
            )));
        }
        Ok(spec)
    }

    /// An encoder: any positive output width.
    pub fn encoder(layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::Spec(format!(
                "need an input width and at least one layer, got {layer_dims:?}"
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::Spec(format!("zero-width layer in {layer_dims:?}")));
        }
        Ok(Self {
            layer_dims,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    /// `out x in`
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut SplitMix64) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            T::lit(rng.uniform(-limit, limit))
        });
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of a feed-forward network. Gradients use the same type.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub activation: Activation,
    pub layers: Vec<Layer<T>>,
}

/// Per-layer inputs and pre-activations cached by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<T> {
    /// `inputs[l]` is the `n x in_l` matrix fed to layer `l`.
    pub inputs: Vec<Array2<T>>,
    /// `pre[l]` is the `n x out_l` affine output of layer `l`.
    pub pre: Vec<Array2<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn batch_size(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

/// Glorot-initialized scorer. Fails unless the spec ends in one output.
pub fn init_params<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<ModelParams<T>> {
    if spec.output_dim() != 1 {
        return Err(Error::Spec(format!(
            "scorer must end in a single output, got {:?}",
            spec.layer_dims
        )));
    }
    Ok(init_encoder(spec, seed))
}

/// Glorot-initialized network of any output width.
pub fn init_encoder<T: Scalar>(spec: &ModelSpec, seed: u64) -> ModelParams<T> {
    let mut rng = SplitMix64::new(seed);
    let layers = spec
        .layer_dims
        .windows(2)
        .map(|w| Layer::glorot(w[0], w[1], &mut rng))
        .collect();
    ModelParams {
        activation: spec.activation,
        layers,
    }
}

/// Logistic function, stable for large `|z|`.
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    let e = (-z.abs()).exp();
    if z >= T::zero() {
        T::one() / (T::one() + e)
    } else {
        e / (T::one() + e)
    }
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        Self {
            activation: spec.activation,
            layers: spec
                .layer_dims
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            activation: self.activation,
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.in_dim(), l.out_dim()))
                .collect(),
        }
    }

    pub fn spec(&self) -> ModelSpec {
        let mut dims = Vec::with_capacity(self.layers.len() + 1);
        dims.push(self.input_dim());
        dims.extend(self.layers.iter().map(Layer::out_dim));
        ModelSpec {
            layer_dims: dims,
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.len() == b.bias.len())
    }

    pub(crate) fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.spec().layer_dims,
                other.spec().layer_dims
            )))
        }
    }

    /// Applies `f(self_elem, other_elem)` to every aligned pair of entries.
    pub fn zip_apply(&mut self, other: &Self, mut f: impl FnMut(&mut T, T)) -> Result<()> {
        self.check_same_shape(other, "parameter update")?;
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            Zip::from(&mut dst.weight)
                .and(&src.weight)
                .for_each(|d, &s| f(d, s));
            Zip::from(&mut dst.bias).and(&src.bias).for_each(|d, &s| f(d, s));
        }
        Ok(())
    }

    /// All entries, layer by layer, weights (row-major) before biases.
    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other, "difference")?;
        Ok(self
            .iter()
            .zip(other.iter())
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Full forward pass returning the `n x out` output matrix.
    pub fn forward_outputs(&self, batch: &Array2<T>) -> Result<(Array2<T>, ForwardTrace<T>)> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "batch has {} features, model expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = batch.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = x.dot(&layer.weight.t()) + &layer.bias;
            let next = if l == last {
                z.clone()
            } else {
                let act = self.activation;
                z.mapv(|v| act.apply(v))
            };
            inputs.push(x);
            pre.push(z);
            x = next;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("forward pass produced a non-finite output".into()));
        }
        Ok((x, ForwardTrace { inputs, pre }))
    }

    /// Raw logits of a single-output scorer.
    pub fn forward(&self, batch: &Array2<T>) -> Result<(Array1<T>, ForwardTrace<T>)> {
        if self.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "forward expects a single-output scorer, model has {} outputs",
                self.output_dim()
            )));
        }
        let (out, trace) = self.forward_outputs(batch)?;
        Ok((out.index_axis_move(Axis(1), 0), trace))
    }

    pub fn predict_logits(&self, batch: &Array2<T>) -> Result<Array1<T>> {
        self.forward(batch).map(|(z, _)| z)
    }

    pub fn predict_proba(&self, batch: &Array2<T>) -> Result<Array1<T>> {
        Ok(self.predict_logits(batch)?.mapv(sigmoid))
    }

    /// Gradients of `sum_i dloss_dlogit[i] * logit_i`.
    pub fn backward(&self, trace: &ForwardTrace<T>, dloss_dlogit: ArrayView1<T>) -> Result<Self> {
        let n = dloss_dlogit.len();
        let d = dloss_dlogit.to_owned().into_shape_with_order((n, 1)).unwrap();
        self.backward_outputs(trace, &d)
    }

    /// Gradients of `sum_ij d_out[i, j] * out[i, j]`.
    pub fn backward_outputs(&self, trace: &ForwardTrace<T>, d_out: &Array2<T>) -> Result<Self> {
        if trace.inputs.len() != self.layers.len() || trace.pre.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "trace has {} layers, model has {}",
                trace.inputs.len(),
                self.layers.len()
            )));
        }
        for (layer, (x, z)) in self.layers.iter().zip(trace.inputs.iter().zip(&trace.pre)) {
            if x.ncols() != layer.in_dim() || z.ncols() != layer.out_dim() {
                return Err(Error::Shape("trace does not match model layer widths".into()));
            }
        }
        if d_out.dim() != (trace.batch_size(), self.output_dim()) {
            return Err(Error::Shape(format!(
                "output gradient is {:?}, expected ({}, {})",
                d_out.dim(),
                trace.batch_size(),
                self.output_dim()
            )));
        }

        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let weight = delta.t().dot(&trace.inputs[l]);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&layer.weight);
                let act = self.activation;
                Zip::from(&mut upstream)
                    .and(&trace.pre[l - 1])
                    .and(&trace.inputs[l])
                    .for_each(|g, &pre, &post| *g = *g * act.derivative(pre, post));
                delta = upstream;
            }
            grads.push(Layer { weight, bias });
        }
        grads.reverse();
        Ok(ModelParams {
            activation: self.activation,
            layers: grads,
        })
    }
}
