//! Dense feed-forward networks with exact reverse-mode gradients and Adam.
//!
//! Batches are row-major matrices (`batch × features`). A layer stores its
//! weights as `inputs × outputs`, so a forward pass is `act(X·W + b)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights);
        let act = self.activation;
        Zip::from(z.rows_mut()).for_each(|mut row| {
            Zip::from(&mut row).and(&self.bias).for_each(|v, &b| *v = act.apply(*v + b));
        });
        z
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetworkRepr", into = "NetworkRepr")]
pub struct Network {
    layers: Vec<Dense>,
}

/// Per-layer intermediate values of one batched forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Array2<f64>>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace has an input")
    }
}

/// Parameter-shaped container, used for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: net.layers.iter().map(|l| Array1::zeros(l.bias.len())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.biases.iter_mut().for_each(|b| *b *= factor);
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Network {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(NnError::Shape("network has no layers".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(NnError::Shape(format!("layer {i}: bias length {} != outputs {}", l.bias.len(), l.outputs())));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(NnError::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.inputs(),
                    i - 1,
                    layers[i - 1].outputs()
                )));
            }
            if !l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()) {
                return Err(NnError::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-uniform weights, zero biases. `sizes` has one more entry than
    /// `activations`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if sizes.len() != activations.len() + 1 || activations.is_empty() {
            return Err(NnError::Shape(format!("{} sizes for {} activations", sizes.len(), activations.len())));
        }
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..=limit)),
                    bias: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(NnError::Dimension { expected: self.input_dim(), got: width });
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut h = self.layers[0].forward(x);
        for l in &self.layers[1..] {
            h = l.forward(h.view());
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: Array2<f64>) -> Result<Trace> {
        self.check_input(x.ncols())?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x);
        for l in &self.layers {
            let next = l.forward(activations.last().unwrap().view());
            activations.push(next);
        }
        Ok(Trace { activations })
    }

    /// Reverse pass for a batch. `upstream` is the gradient of a scalar with
    /// respect to the network output; returns parameter gradients and the
    /// gradient with respect to the input batch.
    pub fn backward(&self, trace: &Trace, upstream: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>)> {
        let out = trace.output();
        if upstream.dim() != out.dim() {
            return Err(NnError::Shape(format!("upstream {:?} vs output {:?}", upstream.dim(), out.dim())));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut g = upstream.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let y = &trace.activations[l + 1];
            let act = layer.activation;
            if act != Activation::Identity {
                Zip::from(&mut g).and(y).for_each(|gv, &yv| *gv *= act.derivative_from_output(yv));
            }
            weights.push(trace.activations[l].t().dot(&g));
            biases.push(g.sum_axis(Axis(0)));
            g = g.dot(&layer.weights.t());
        }
        weights.reverse();
        biases.reverse();
        Ok((Gradients { weights, biases }, g))
    }

    /// Single-sample convenience wrapper around [`Network::backward`].
    pub fn backward_single(&self, input: &[f64], upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        self.check_input(input.len())?;
        if upstream.len() != self.output_dim() {
            return Err(NnError::Dimension { expected: self.output_dim(), got: upstream.len() });
        }
        let trace = self.forward_trace(Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap())?;
        let up = ArrayView2::from_shape((1, upstream.len()), upstream).unwrap();
        let (grads, gx) = self.backward(&trace, up)?;
        Ok((grads, gx.into_raw_vec_and_offset().0))
    }

    /// All parameters, layer by layer: weights (row-major) then bias.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(NnError::Dimension { expected: self.param_count(), got: params.len() });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = *it.next().unwrap());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self { config, first_moment: Gradients::zeros_like(net), second_moment: Gradients::zeros_like(net), step: 0 }
    }
}

/// One bias-corrected Adam update. Non-finite gradients are rejected before
/// anything is modified.
pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    if !grads.is_finite() {
        return Err(NnError::NonFinite("gradients".into()));
    }
    if grads.weights.len() != net.layers.len()
        || grads.weights.iter().zip(&net.layers).any(|(g, l)| g.dim() != l.weights.dim())
    {
        return Err(NnError::Shape("gradient shapes do not match the network".into()));
    }
    let AdamConfig { learning_rate, beta1, beta2, epsilon } = state.config;
    state.step += 1;
    let c1 = 1.0 - beta1.powi(state.step as i32);
    let c2 = 1.0 - beta2.powi(state.step as i32);
    let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
    };
    for (l, layer) in net.layers.iter_mut().enumerate() {
        Zip::from(&mut layer.weights)
            .and(&grads.weights[l])
            .and(&mut state.first_moment.weights[l])
            .and(&mut state.second_moment.weights[l])
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&grads.biases[l])
            .and(&mut state.first_moment.biases[l])
            .and(&mut state.second_moment.biases[l])
            .for_each(update);
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerRepr {
    inputs: usize,
    outputs: usize,
    activation: Activation,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkRepr {
    layers: Vec<LayerRepr>,
}

impl From<Network> for NetworkRepr {
    fn from(net: Network) -> Self {
        NetworkRepr {
            layers: net
                .layers
                .into_iter()
                .map(|l| LayerRepr {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<NetworkRepr> for Network {
    type Error = NnError;
    fn try_from(repr: NetworkRepr) -> Result<Self> {
        let layers = repr
            .layers
            .into_iter()
            .map(|l| {
                let weights = Array2::from_shape_vec((l.inputs, l.outputs), l.weights)
                    .map_err(|e| NnError::Shape(format!("weights: {e}")))?;
                Ok(Dense { weights, bias: Array1::from(l.bias), activation: l.activation })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }
}
