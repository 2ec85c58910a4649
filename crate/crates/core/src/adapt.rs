//! Few-label fast adaptation: find the two latent dims that carry a
//! correlated factor pair and overwrite them with supervised predictions of
//! the two factors.
//!
//! Identification and fitting both consume the same labeled set; nothing in
//! this module can draw more labels.

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{tree_importance, GbtParams, MetricError};
use crate::nnkit::{adam_step, Activation, AdamConfig, Network, NnError, OptimizerState};

/// Ridge penalty of the linear substitution.
pub const RIDGE_LAMBDA: f64 = 1e-3;
pub const MLP_HIDDEN: usize = 100;
pub const MLP_STEPS: usize = 1000;
pub const MLP_LEARNING_RATE: f64 = 1e-2;
pub const MIN_LABELS: usize = 10;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("need at least {MIN_LABELS} labeled samples, got {0}")]
    TooFewLabels(usize),
    #[error("label {value} out of range for a factor with {cardinality} values")]
    LabelRange { value: usize, cardinality: usize },
    #[error("non-finite loss while fitting the substitution")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, AdaptError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubstitutionKind {
    Linear,
    Mlp,
}

impl std::str::FromStr for SubstitutionKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "linear" => Ok(Self::Linear),
            "mlp" => Ok(Self::Mlp),
            _ => Err(format!("unknown substitution kind {s:?} (expected linear or mlp)")),
        }
    }
}

fn argmax_two(row: &[f64]) -> (usize, usize, f64) {
    // Returns (best, second best, gap); ties resolve to the lower index.
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    (order[0], order[1], row[order[0]] - row[order[1]])
}

/// Picks one latent dim per correlated factor from tree importance fitted on
/// the labeled subset. When both factors prefer the same dim, the factor with
/// the smaller lead over its runner-up (the second factor on equal leads)
/// falls back to its second choice.
pub fn identify_entangled_dims(latents: ArrayView2<f64>, pair_labels: ArrayView2<usize>, params: &GbtParams) -> Result<(usize, usize)> {
    if pair_labels.ncols() != 2 {
        return Err(AdaptError::Shape(format!("expected 2 label columns, got {}", pair_labels.ncols())));
    }
    if latents.ncols() < 2 {
        return Err(AdaptError::Shape(format!("need at least 2 latent dims, got {}", latents.ncols())));
    }
    let importance = tree_importance(latents, pair_labels, params)?;
    let row = |i: usize| importance.weights.row(i).to_vec();
    let (a_best, a_second, a_gap) = argmax_two(&row(0));
    let (b_best, b_second, b_gap) = argmax_two(&row(1));
    if a_best != b_best {
        return Ok((a_best, b_best));
    }
    if a_gap < b_gap {
        Ok((a_second, b_best))
    } else {
        Ok((a_best, b_second))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubstitutionModel {
    /// `value_f = weights[f] · (z_i, z_j) + offsets[f]`, rounded to the grid.
    Linear { weights: [[f64; 2]; 2], offsets: [f64; 2], ridge_lambda: f64 },
    /// Inputs are standardized, then one hidden tanh layer produces the
    /// concatenated class logits of both factors.
    Mlp { network: Network, input_mean: [f64; 2], input_scale: [f64; 2] },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubstitutionFn {
    pub input_dims: (usize, usize),
    pub cardinalities: (usize, usize),
    pub model: SubstitutionModel,
}

impl SubstitutionFn {
    pub fn kind(&self) -> SubstitutionKind {
        match self.model {
            SubstitutionModel::Linear { .. } => SubstitutionKind::Linear,
            SubstitutionModel::Mlp { .. } => SubstitutionKind::Mlp,
        }
    }

    /// Predicted factor values for one `(z_i, z_j)` input.
    pub fn predict(&self, z: [f64; 2]) -> (usize, usize) {
        let (ca, cb) = self.cardinalities;
        match &self.model {
            SubstitutionModel::Linear { weights, offsets, .. } => {
                let grid = |f: usize, card: usize| {
                    let v = weights[f][0] * z[0] + weights[f][1] * z[1] + offsets[f];
                    if v.is_nan() {
                        0
                    } else {
                        v.round().clamp(0.0, (card - 1) as f64) as usize
                    }
                };
                (grid(0, ca), grid(1, cb))
            }
            SubstitutionModel::Mlp { network, input_mean, input_scale } => {
                let x = [(z[0] - input_mean[0]) / input_scale[0], (z[1] - input_mean[1]) / input_scale[1]];
                let logits = network.forward(&x).expect("network input width is 2");
                let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0))).map_or(0, |(i, _)| i);
                (argmax(&logits[..ca]), argmax(&logits[ca..ca + cb]))
            }
        }
    }

    pub fn predict_all(&self, latents_2d: ArrayView2<f64>) -> Vec<(usize, usize)> {
        latents_2d.rows().into_iter().map(|r| self.predict([r[0], r[1]])).collect()
    }
}

fn check_labels(latents_2d: &ArrayView2<f64>, labels: &ArrayView2<usize>, cards: (usize, usize)) -> Result<()> {
    if latents_2d.ncols() != 2 || labels.ncols() != 2 {
        return Err(AdaptError::Shape("substitution maps 2 latent dims to 2 factors".into()));
    }
    if latents_2d.nrows() != labels.nrows() {
        return Err(AdaptError::Shape(format!("{} latent rows vs {} label rows", latents_2d.nrows(), labels.nrows())));
    }
    if labels.nrows() < MIN_LABELS {
        return Err(AdaptError::TooFewLabels(labels.nrows()));
    }
    for (c, card) in [(0, cards.0), (1, cards.1)] {
        if let Some(&value) = labels.column(c).iter().find(|&&v| v >= card) {
            return Err(AdaptError::LabelRange { value, cardinality: card });
        }
    }
    if latents_2d.iter().any(|v| !v.is_finite()) {
        return Err(AdaptError::NonFinite);
    }
    Ok(())
}

fn fit_linear(x: ArrayView2<f64>, labels: ArrayView2<usize>) -> SubstitutionModel {
    let n = x.nrows() as f64;
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let xc = &x - &mean;
    let mut g = xc.t().dot(&xc);
    g[[0, 0]] += RIDGE_LAMBDA;
    g[[1, 1]] += RIDGE_LAMBDA;
    let det = g[[0, 0]] * g[[1, 1]] - g[[0, 1]] * g[[1, 0]];
    let mut weights = [[0.0; 2]; 2];
    let mut offsets = [0.0; 2];
    for f in 0..2 {
        let y = labels.column(f).mapv(|v| v as f64);
        let y_mean = y.sum() / n;
        let r = xc.t().dot(&(&y - y_mean));
        let w = [(g[[1, 1]] * r[0] - g[[0, 1]] * r[1]) / det, (g[[0, 0]] * r[1] - g[[1, 0]] * r[0]) / det];
        weights[f] = w;
        offsets[f] = y_mean - w[0] * mean[0] - w[1] * mean[1];
    }
    SubstitutionModel::Linear { weights, offsets, ridge_lambda: RIDGE_LAMBDA }
}

/// Full-batch softmax cross-entropy for both factors; returns the mean loss
/// and the gradient with respect to the logits.
fn softmax_loss(logits: &Array2<f64>, labels: ArrayView2<usize>, cards: (usize, usize)) -> (f64, Array2<f64>) {
    let n = logits.nrows();
    let mut grad = Array2::zeros(logits.dim());
    let mut loss = 0.0;
    for (f, (start, card)) in [(0, cards.0), (cards.0, cards.1)].into_iter().enumerate() {
        for i in 0..n {
            let row = logits.slice(s![i, start..start + card]);
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let target = labels[[i, f]];
            loss += z.ln() + max - row[target];
            for k in 0..card {
                let p = (row[k] - max).exp() / z;
                grad[[i, start + k]] = (p - if k == target { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }
    (loss / n as f64, grad)
}

fn fit_mlp<R: Rng + ?Sized>(x: ArrayView2<f64>, labels: ArrayView2<usize>, cards: (usize, usize), rng: &mut R) -> Result<SubstitutionModel> {
    let mean = x.mean_axis(Axis(0)).expect("non-empty");
    let std = x.std_axis(Axis(0), 0.0);
    let scale = [if std[0] > 1e-12 { std[0] } else { 1.0 }, if std[1] > 1e-12 { std[1] } else { 1.0 }];
    let mut xs = &x - &mean;
    xs.column_mut(0).mapv_inplace(|v| v / scale[0]);
    xs.column_mut(1).mapv_inplace(|v| v / scale[1]);

    let mut network = Network::init(&[2, MLP_HIDDEN, cards.0 + cards.1], &[Activation::Tanh, Activation::Identity], rng)?;
    let mut opt = OptimizerState::new(&network, AdamConfig::with_learning_rate(MLP_LEARNING_RATE));
    for _ in 0..MLP_STEPS {
        let trace = network.forward_trace(xs.clone())?;
        let (loss, grad) = softmax_loss(trace.output(), labels, cards);
        if !loss.is_finite() {
            return Err(AdaptError::NonFinite);
        }
        let (grads, _) = network.backward(&trace, grad.view())?;
        adam_step(&mut network, &grads, &mut opt).map_err(|_| AdaptError::NonFinite)?;
    }
    Ok(SubstitutionModel::Mlp { network, input_mean: [mean[0], mean[1]], input_scale: scale })
}

/// Fits the map from the two selected latent columns (`latents_2d`, M × 2) to
/// the two correlated factor values (`labels`, M × 2). `rng` only seeds the
/// MLP initialization.
pub fn fit_substitution<R: Rng + ?Sized>(
    latents_2d: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    input_dims: (usize, usize),
    cardinalities: (usize, usize),
    kind: SubstitutionKind,
    rng: &mut R,
) -> Result<SubstitutionFn> {
    check_labels(&latents_2d, &labels, cardinalities)?;
    let model = match kind {
        SubstitutionKind::Linear => fit_linear(latents_2d, labels),
        SubstitutionKind::Mlp => fit_mlp(latents_2d, labels, cardinalities, rng)?,
    };
    Ok(SubstitutionFn { input_dims, cardinalities, model })
}

fn normalized(value: usize, cardinality: usize) -> f64 {
    if cardinality > 1 {
        value as f64 / (cardinality - 1) as f64
    } else {
        0.0
    }
}

/// Replaces the two selected columns with the normalized predicted factor
/// values; every other column is copied unchanged.
pub fn apply_substitution(latents: ArrayView2<f64>, sub: &SubstitutionFn) -> Result<Array2<f64>> {
    let (i, j) = sub.input_dims;
    if i.max(j) >= latents.ncols() || i == j {
        return Err(AdaptError::Shape(format!("dims ({i}, {j}) invalid for {} latent columns", latents.ncols())));
    }
    let mut out = latents.to_owned();
    for (r, row) in latents.rows().into_iter().enumerate() {
        let (a, b) = sub.predict([row[i], row[j]]);
        out[[r, i]] = normalized(a, sub.cardinalities.0);
        out[[r, j]] = normalized(b, sub.cardinalities.1);
    }
    Ok(out)
}

/// Identification plus fitting on one labeled set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FastAdaptation {
    pub labels_used: usize,
    pub substitution: SubstitutionFn,
}

pub fn fast_adapt<R: Rng + ?Sized>(
    labeled_latents: ArrayView2<f64>,
    pair_labels: ArrayView2<usize>,
    cardinalities: (usize, usize),
    kind: SubstitutionKind,
    params: &GbtParams,
    rng: &mut R,
) -> Result<FastAdaptation> {
    if labeled_latents.nrows() != pair_labels.nrows() {
        return Err(AdaptError::Shape(format!("{} latent rows vs {} label rows", labeled_latents.nrows(), pair_labels.nrows())));
    }
    if pair_labels.nrows() < MIN_LABELS {
        return Err(AdaptError::TooFewLabels(pair_labels.nrows()));
    }
    let dims = identify_entangled_dims(labeled_latents, pair_labels, params)?;
    let mut x = Array2::zeros((labeled_latents.nrows(), 2));
    x.column_mut(0).assign(&labeled_latents.column(dims.0));
    x.column_mut(1).assign(&labeled_latents.column(dims.1));
    let substitution = fit_substitution(x.view(), pair_labels, dims, cardinalities, kind, rng)?;
    Ok(FastAdaptation { labels_used: pair_labels.nrows(), substitution })
}
