//! β-VAE and Ada-GVAE objectives on dense encoder/decoder networks.
//!
//! The encoder maps an image to `2·L` numbers, the posterior means followed
//! by the log-variances of a diagonal Gaussian `q(z|x)`. The decoder maps a
//! latent vector to per-pixel Bernoulli logits. Both losses are *minimized*;
//! they are the negated (β-weighted) evidence lower bounds averaged over the
//! batch.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{
    render, weak::sample_weak_pair_with, CorrelationSpec, FactorConfig, FactorError, FactorSpace, Observation,
    PairSampler, Regime, RenderConfig,
};
use crate::nnkit::{adam_step, sigmoid, softplus, Activation, AdamConfig, Gradients, Network, NnError, OptimizerState};
use crate::rng::{Purpose, SeedStream};

/// Log-variances are clamped to `[-LOG_VAR_LIMIT, LOG_VAR_LIMIT]`.
pub const LOG_VAR_LIMIT: f64 = 10.0;

#[derive(Debug, Error)]
pub enum VaeError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, VaeError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl GaussianPosterior {
    /// Builds a posterior, clamping the log-variances.
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Self {
        assert_eq!(mean.len(), log_variance.len());
        let log_variance = log_variance.into_iter().map(clamp_log_var).collect();
        Self { mean, log_variance }
    }

    pub fn latent_dim(&self) -> usize {
        self.mean.len()
    }
}

fn clamp_log_var(v: f64) -> f64 {
    v.clamp(-LOG_VAR_LIMIT, LOG_VAR_LIMIT)
}

/// `z = μ + exp(log σ² / 2) ⊙ noise`.
pub fn reparameterize(posterior: &GaussianPosterior, noise: &[f64]) -> Vec<f64> {
    assert_eq!(noise.len(), posterior.latent_dim(), "noise length must equal the latent dimension");
    posterior
        .mean
        .iter()
        .zip(&posterior.log_variance)
        .zip(noise)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct KlDivergence {
    pub per_dim: Vec<f64>,
    pub total: f64,
}

#[inline]
fn kl_prior_term(mean: f64, log_var: f64) -> f64 {
    0.5 * (mean * mean + log_var.exp() - 1.0 - log_var)
}

/// KL divergence of each posterior coordinate from the standard normal prior.
pub fn kl_to_prior(posterior: &GaussianPosterior) -> KlDivergence {
    let per_dim: Vec<f64> =
        posterior.mean.iter().zip(&posterior.log_variance).map(|(&m, &lv)| kl_prior_term(m, lv)).collect();
    let total = per_dim.iter().sum();
    KlDivergence { per_dim, total }
}

#[inline]
fn kl_between_term(m1: f64, lv1: f64, m2: f64, lv2: f64) -> f64 {
    let d = m1 - m2;
    0.5 * (lv2 - lv1) + (lv1.exp() + d * d) / (2.0 * lv2.exp()) - 0.5
}

/// Coordinate-wise `KL(q1_i ‖ q2_i)` between two diagonal Gaussians.
pub fn per_dim_kl_between(q1: &GaussianPosterior, q2: &GaussianPosterior) -> Vec<f64> {
    assert_eq!(q1.latent_dim(), q2.latent_dim());
    (0..q1.latent_dim())
        .map(|i| kl_between_term(q1.mean[i], q1.log_variance[i], q2.mean[i], q2.log_variance[i]))
        .collect()
}

/// Indices of the `k` largest divergences, ties broken toward lower indices,
/// returned in ascending order.
pub fn infer_changed_dims(divergences: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..divergences.len()).collect();
    order.sort_by(|&a, &b| divergences[b].total_cmp(&divergences[a]).then(a.cmp(&b)));
    let mut picked: Vec<usize> = order.into_iter().take(k).collect();
    picked.sort_unstable();
    picked
}

/// Ada-GVAE posterior substitution for one pair: dimensions outside
/// `changed` are replaced in both posteriors by the average Gaussian
/// (arithmetic mean of means and of variances).
pub fn substitute_posteriors(
    q1: &GaussianPosterior,
    q2: &GaussianPosterior,
    k: usize,
) -> (GaussianPosterior, GaussianPosterior, Vec<usize>) {
    let changed = infer_changed_dims(&per_dim_kl_between(q1, q2), k);
    let (mut a, mut b) = (q1.clone(), q2.clone());
    for j in 0..q1.latent_dim() {
        if changed.contains(&j) {
            continue;
        }
        let mean = 0.5 * (q1.mean[j] + q2.mean[j]);
        let lv = (0.5 * (q1.log_variance[j].exp() + q2.log_variance[j].exp())).ln();
        a.mean[j] = mean;
        b.mean[j] = mean;
        a.log_variance[j] = lv;
        b.log_variance[j] = lv;
    }
    (a, b, changed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    BetaVae,
    AdaGvae,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Objective::BetaVae => "beta_vae",
            Objective::AdaGvae => "ada_gvae",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub objective: Objective,
    /// Number of latent dimensions inferred to change within a pair.
    pub k_changed: usize,
    pub hidden: usize,
    pub latent_dim: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            steps: 10_000,
            batch_size: 64,
            learning_rate: 1e-3,
            objective: Objective::BetaVae,
            k_changed: 1,
            hidden: 128,
            latent_dim: 10,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(VaeError::Config(m));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if self.steps == 0 || self.batch_size == 0 || self.log_every == 0 {
            return bad("steps, batch_size and log_every must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.hidden == 0 || self.latent_dim == 0 {
            return bad("hidden and latent_dim must be >= 1".into());
        }
        if self.objective == Objective::AdaGvae && self.k_changed != 1 {
            return bad(format!("k_changed must be 1 for ada_gvae, got {}", self.k_changed));
        }
        Ok(())
    }
}

/// Encoder/decoder parameter pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder: Network,
    pub decoder: Network,
}

impl VaeModel {
    pub fn new(encoder: Network, decoder: Network) -> Result<Self> {
        if !encoder.output_dim().is_multiple_of(2) || encoder.output_dim() / 2 != decoder.input_dim() {
            return Err(VaeError::Config(format!(
                "encoder emits {} values but decoder takes {} latents",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if encoder.input_dim() != decoder.output_dim() {
            return Err(VaeError::Dimension { expected: encoder.input_dim(), got: decoder.output_dim() });
        }
        Ok(Self { encoder, decoder })
    }

    /// `input → hidden (tanh) → 2·latent` and the mirrored decoder.
    pub fn init<R: Rng + ?Sized>(input_dim: usize, hidden: usize, latent_dim: usize, rng: &mut R) -> Result<Self> {
        let encoder = Network::init(&[input_dim, hidden, 2 * latent_dim], &[Activation::Tanh, Activation::Identity], rng)?;
        let decoder = Network::init(&[latent_dim, hidden, input_dim], &[Activation::Tanh, Activation::Identity], rng)?;
        Self::new(encoder, decoder)
    }

    pub fn init_from_seeds(input_dim: usize, cfg: &TrainConfig, seeds: SeedStream) -> Result<Self> {
        Self::init(input_dim, cfg.hidden, cfg.latent_dim, &mut seeds.stream(Purpose::Init, 0))
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Posterior means and clamped log-variances for a batch.
    pub fn encode_batch(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let out = self.encoder.forward_batch(x)?;
        let l = self.latent_dim();
        let mean = out.slice(s![.., ..l]).to_owned();
        let log_var = out.slice(s![.., l..]).mapv(clamp_log_var);
        Ok((mean, log_var))
    }

    /// Bernoulli means for a batch of latent vectors.
    pub fn decode_batch(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.decoder.forward_batch(z)?.mapv(sigmoid))
    }
}

pub fn encode(model: &VaeModel, observation: &Observation) -> Result<GaussianPosterior> {
    if observation.pixels.len() != model.input_dim() {
        return Err(VaeError::Dimension { expected: model.input_dim(), got: observation.pixels.len() });
    }
    let x = ArrayView2::from_shape((1, observation.pixels.len()), &observation.pixels).unwrap();
    let (mean, log_var) = model.encode_batch(x)?;
    Ok(GaussianPosterior { mean: mean.row(0).to_vec(), log_variance: log_var.row(0).to_vec() })
}

pub fn decode(model: &VaeModel, z: &[f64], height: usize, width: usize) -> Result<Observation> {
    if z.len() != model.latent_dim() {
        return Err(VaeError::Dimension { expected: model.latent_dim(), got: z.len() });
    }
    let pixels = model.decode_batch(ArrayView2::from_shape((1, z.len()), z).unwrap())?.row(0).to_vec();
    if pixels.len() != height * width {
        return Err(VaeError::Dimension { expected: height * width, got: pixels.len() });
    }
    Ok(Observation { height, width, pixels })
}

/// Batch-mean loss split into its two terms (`loss = recon + β·kl`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub encoder_grads: Gradients,
    pub decoder_grads: Gradients,
}

#[derive(Clone, Debug)]
pub struct AdaLossOutput {
    pub output: LossOutput,
    /// Inferred changing dimensions, one list per pair.
    pub changed_dims: Vec<Vec<usize>>,
}

fn check_batch(model: &VaeModel, x: &ArrayView2<f64>, noise: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != model.input_dim() {
        return Err(VaeError::Dimension { expected: model.input_dim(), got: x.ncols() });
    }
    if noise.dim() != (x.nrows(), model.latent_dim()) {
        return Err(VaeError::Dimension { expected: x.nrows() * model.latent_dim(), got: noise.len() });
    }
    Ok(())
}

/// Decoder pass shared by both objectives. Per-row posterior parameters
/// (already substituted, for Ada-GVAE) are sampled with `noise`, decoded and
/// scored against `targets`. Every row is weighted by `1 / scale`.
///
/// Returns the loss terms summed over rows (before scaling), the decoder
/// gradients, and the gradients with respect to the posterior parameters.
struct DecodePass {
    recon: f64,
    kl: f64,
    decoder_grads: Gradients,
    grad_mean: Array2<f64>,
    grad_log_var: Array2<f64>,
}

fn decode_pass(
    model: &VaeModel,
    targets: ArrayView2<f64>,
    mean: &Array2<f64>,
    log_var: &Array2<f64>,
    noise: ArrayView2<f64>,
    beta: f64,
    scale: f64,
) -> Result<DecodePass> {
    let std = log_var.mapv(|lv| (0.5 * lv).exp());
    let z = mean + &(&std * &noise);
    let trace = model.decoder.forward_trace(z)?;
    let logits = trace.output();

    let mut recon = 0.0;
    let mut grad_logits = Array2::zeros(logits.raw_dim());
    ndarray::Zip::from(&mut grad_logits).and(logits).and(targets).for_each(|g, &l, &x| {
        recon += softplus(l) - x * l;
        *g = (sigmoid(l) - x) / scale;
    });
    let kl: f64 = ndarray::Zip::from(mean).and(log_var).fold(0.0, |acc, &m, &lv| acc + kl_prior_term(m, lv));

    let (decoder_grads, grad_z) = model.decoder.backward(&trace, grad_logits.view())?;
    let grad_mean = &grad_z + &(mean * (beta / scale));
    let mut grad_log_var = Array2::zeros(log_var.raw_dim());
    ndarray::Zip::from(&mut grad_log_var).and(&grad_z).and(&noise).and(&std).and(log_var).for_each(
        |g, &gz, &e, &sd, &lv| *g = 0.5 * gz * e * sd + beta * 0.5 * (lv.exp() - 1.0) / scale,
    );
    Ok(DecodePass { recon, kl, decoder_grads, grad_mean, grad_log_var })
}

/// Encoder trace, mean, log-variance and the clamp mask of the log-variance.
type Encoded = (crate::nnkit::Trace, Array2<f64>, Array2<f64>, Array2<f64>);

/// Encoder forward pass plus the clamp mask for its log-variance half.
fn encode_traced(model: &VaeModel, x: Array2<f64>) -> Result<Encoded> {
    let trace = model.encoder.forward_trace(x)?;
    let l = model.latent_dim();
    let out = trace.output();
    let mean = out.slice(s![.., ..l]).to_owned();
    let raw = out.slice(s![.., l..]);
    let log_var = raw.mapv(clamp_log_var);
    let mask = raw.mapv(|v| if (-LOG_VAR_LIMIT..=LOG_VAR_LIMIT).contains(&v) { 1.0 } else { 0.0 });
    Ok((trace, mean, log_var, mask))
}

fn finite_or_diverged(b: &LossBreakdown) -> Result<()> {
    if b.loss.is_finite() {
        Ok(())
    } else {
        Err(VaeError::Diverged { step: 0, detail: format!("non-finite loss {b:?}") })
    }
}

/// β-VAE loss with explicit reparameterization noise (`batch × latent`).
pub fn beta_vae_loss_with_noise(
    model: &VaeModel,
    batch: ArrayView2<f64>,
    beta: f64,
    noise: ArrayView2<f64>,
) -> Result<LossOutput> {
    check_batch(model, &batch, &noise)?;
    let n = batch.nrows() as f64;
    let (trace, mean, log_var, mask) = encode_traced(model, batch.to_owned())?;
    let pass = decode_pass(model, batch, &mean, &log_var, noise, beta, n)?;
    let upstream = concatenate![Axis(1), pass.grad_mean, pass.grad_log_var * &mask];
    let (encoder_grads, _) = model.encoder.backward(&trace, upstream.view())?;
    let breakdown = LossBreakdown { loss: (pass.recon + beta * pass.kl) / n, recon: pass.recon / n, kl: pass.kl / n };
    finite_or_diverged(&breakdown)?;
    Ok(LossOutput { breakdown, encoder_grads, decoder_grads: pass.decoder_grads })
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn beta_vae_loss<R: Rng + ?Sized>(
    batch: ArrayView2<f64>,
    model: &VaeModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossOutput> {
    let noise = standard_normal(batch.nrows(), model.latent_dim(), rng);
    beta_vae_loss_with_noise(model, batch, cfg.beta, noise.view())
}

/// Ada-GVAE loss with explicit noise for each pair member. The loss is the
/// mean over pairs of the summed per-member β-VAE terms evaluated at the
/// substituted posteriors.
pub fn adagvae_loss_with_noise(
    model: &VaeModel,
    first: ArrayView2<f64>,
    second: ArrayView2<f64>,
    beta: f64,
    k_changed: usize,
    noise_first: ArrayView2<f64>,
    noise_second: ArrayView2<f64>,
) -> Result<AdaLossOutput> {
    check_batch(model, &first, &noise_first)?;
    check_batch(model, &second, &noise_second)?;
    if first.nrows() != second.nrows() {
        return Err(VaeError::Dimension { expected: first.nrows(), got: second.nrows() });
    }
    let pairs = first.nrows();
    let l = model.latent_dim();
    let stacked = concatenate![Axis(0), first, second];
    let (trace, mean, log_var, mask) = encode_traced(model, stacked.clone())?;

    let mut sub_mean = mean.clone();
    let mut sub_log_var = log_var.clone();
    let mut changed_dims = Vec::with_capacity(pairs);
    // d lv_avg / d lv_member, for shared dimensions; zero for changed ones.
    let mut avg_weight = Array2::<f64>::zeros((2 * pairs, l));
    for p in 0..pairs {
        let q = p + pairs;
        let kl: Vec<f64> = (0..l)
            .map(|j| kl_between_term(mean[[p, j]], log_var[[p, j]], mean[[q, j]], log_var[[q, j]]))
            .collect();
        let changed = infer_changed_dims(&kl, k_changed);
        for j in 0..l {
            if changed.contains(&j) {
                continue;
            }
            let (v1, v2) = (log_var[[p, j]].exp(), log_var[[q, j]].exp());
            let avg_var = 0.5 * (v1 + v2);
            let m = 0.5 * (mean[[p, j]] + mean[[q, j]]);
            let lv = avg_var.ln();
            for r in [p, q] {
                sub_mean[[r, j]] = m;
                sub_log_var[[r, j]] = lv;
            }
            avg_weight[[p, j]] = v1 / (2.0 * avg_var);
            avg_weight[[q, j]] = v2 / (2.0 * avg_var);
        }
        changed_dims.push(changed);
    }

    let noise = concatenate![Axis(0), noise_first, noise_second];
    let n = pairs as f64;
    let pass = decode_pass(model, stacked.view(), &sub_mean, &sub_log_var, noise.view(), beta, n)?;

    // Chain rule through the substitution.
    let mut grad_mean = pass.grad_mean.clone();
    let mut grad_log_var = pass.grad_log_var.clone();
    for p in 0..pairs {
        let q = p + pairs;
        for j in 0..l {
            if changed_dims[p].contains(&j) {
                continue;
            }
            let gm = 0.5 * (pass.grad_mean[[p, j]] + pass.grad_mean[[q, j]]);
            grad_mean[[p, j]] = gm;
            grad_mean[[q, j]] = gm;
            let glv = pass.grad_log_var[[p, j]] + pass.grad_log_var[[q, j]];
            grad_log_var[[p, j]] = glv * avg_weight[[p, j]];
            grad_log_var[[q, j]] = glv * avg_weight[[q, j]];
        }
    }
    let upstream = concatenate![Axis(1), grad_mean, grad_log_var * &mask];
    let (encoder_grads, _) = model.encoder.backward(&trace, upstream.view())?;
    let breakdown = LossBreakdown { loss: (pass.recon + beta * pass.kl) / n, recon: pass.recon / n, kl: pass.kl / n };
    finite_or_diverged(&breakdown)?;
    Ok(AdaLossOutput {
        output: LossOutput { breakdown, encoder_grads, decoder_grads: pass.decoder_grads },
        changed_dims,
    })
}

pub fn adagvae_loss<R: Rng + ?Sized>(
    first: ArrayView2<f64>,
    second: ArrayView2<f64>,
    model: &VaeModel,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<AdaLossOutput> {
    let n1 = standard_normal(first.nrows(), model.latent_dim(), rng);
    let n2 = standard_normal(second.nrows(), model.latent_dim(), rng);
    adagvae_loss_with_noise(model, first, second, cfg.beta, cfg.k_changed, n1.view(), n2.view())
}

/// One training batch: single observations or observation pairs, one per row.
#[derive(Clone, Debug)]
pub enum Batch {
    Single(Array2<f64>),
    Pairs(Array2<f64>, Array2<f64>),
}

/// Anything that can feed training batches.
pub trait DataSource {
    fn input_dim(&self) -> usize;
    fn next_batch(&mut self, size: usize, rng: &mut dyn rand::RngCore) -> Result<Batch>;
}

fn rows_to_matrix(rows: Vec<Vec<f64>>, width: usize) -> Array2<f64> {
    let n = rows.len();
    Array2::from_shape_vec((n, width), rows.into_iter().flatten().collect()).expect("rows share a width")
}

/// Endless stream of rendered observations from the correlated distribution.
pub struct CorrelatedImages {
    space: FactorSpace,
    corr: CorrelationSpec,
    render: RenderConfig,
    sampler: PairSampler,
}

impl CorrelatedImages {
    pub fn new(space: FactorSpace, corr: CorrelationSpec, render: RenderConfig) -> Result<Self> {
        render.validate(&space)?;
        let sampler = PairSampler::for_spec(&space, &corr)?;
        Ok(Self { space, corr, render, sampler })
    }
}

impl DataSource for CorrelatedImages {
    fn input_dim(&self) -> usize {
        self.render.pixel_count()
    }

    fn next_batch(&mut self, size: usize, rng: &mut dyn rand::RngCore) -> Result<Batch> {
        let rows = (0..size)
            .map(|_| {
                let c = self.sampler.sample(&self.space, &self.corr, rng);
                Ok(render(&self.space, &c, &self.render)?.pixels)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch::Single(rows_to_matrix(rows, self.input_dim())))
    }
}

/// Endless stream of weakly supervised observation pairs.
pub struct WeakPairImages {
    space: FactorSpace,
    corr: CorrelationSpec,
    render: RenderConfig,
    sampler: PairSampler,
    regime: Regime,
}

impl WeakPairImages {
    pub fn new(space: FactorSpace, corr: CorrelationSpec, render: RenderConfig, regime: Regime) -> Result<Self> {
        render.validate(&space)?;
        let sampler = PairSampler::for_spec(&space, &corr)?;
        Ok(Self { space, corr, render, sampler, regime })
    }
}

impl DataSource for WeakPairImages {
    fn input_dim(&self) -> usize {
        self.render.pixel_count()
    }

    fn next_batch(&mut self, size: usize, rng: &mut dyn rand::RngCore) -> Result<Batch> {
        let mut a = Vec::with_capacity(size);
        let mut b = Vec::with_capacity(size);
        for _ in 0..size {
            let pair = sample_weak_pair_with(&self.space, &self.corr, &self.sampler, self.regime, rng)?;
            a.push(render(&self.space, &pair.first, &self.render)?.pixels);
            b.push(render(&self.space, &pair.second, &self.render)?.pixels);
        }
        let w = self.input_dim();
        Ok(Batch::Pairs(rows_to_matrix(a, w), rows_to_matrix(b, w)))
    }
}

/// A fixed matrix of observations sampled with replacement.
pub struct FixedImages(pub Array2<f64>);

impl DataSource for FixedImages {
    fn input_dim(&self) -> usize {
        self.0.ncols()
    }

    fn next_batch(&mut self, size: usize, rng: &mut dyn rand::RngCore) -> Result<Batch> {
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.0.nrows())).collect();
        Ok(Batch::Single(self.0.select(Axis(0), &idx)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub model: VaeModel,
    pub train_config: TrainConfig,
    pub seed: SeedStream,
    /// Window means of the loss terms, one point per `log_every` steps.
    pub trace: Vec<TracePoint>,
}

impl TrainedModel {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss,recon,kl\n");
        for p in &self.trace {
            out.push_str(&format!("{},{},{},{}\n", p.step, p.loss, p.recon, p.kl));
        }
        out
    }
}

/// Runs `cfg.steps` Adam updates from the seeded initialization. Data,
/// initialization and reparameterization noise come from separate streams of
/// `seed`.
pub fn train(source: &mut dyn DataSource, cfg: &TrainConfig, seed: SeedStream) -> Result<TrainedModel> {
    let model = VaeModel::init_from_seeds(source.input_dim(), cfg, seed)?;
    train_from(model, source, cfg, seed)
}

pub fn train_from(
    mut model: VaeModel,
    source: &mut dyn DataSource,
    cfg: &TrainConfig,
    seed: SeedStream,
) -> Result<TrainedModel> {
    cfg.validate()?;
    if source.input_dim() != model.input_dim() {
        return Err(VaeError::Dimension { expected: model.input_dim(), got: source.input_dim() });
    }
    let adam = AdamConfig::with_learning_rate(cfg.learning_rate);
    let mut enc_state = OptimizerState::new(&model.encoder, adam);
    let mut dec_state = OptimizerState::new(&model.decoder, adam);
    let mut data_rng = seed.stream(Purpose::Sampling, 0);
    let mut noise_rng = seed.stream(Purpose::Noise, 0);
    let mut trace = Vec::with_capacity(cfg.steps / cfg.log_every);
    let mut window = (0.0, 0.0, 0.0);

    for step in 1..=cfg.steps {
        let out = match (cfg.objective, source.next_batch(cfg.batch_size, &mut data_rng)?) {
            (Objective::BetaVae, Batch::Single(x)) => beta_vae_loss(x.view(), &model, cfg, &mut noise_rng),
            (Objective::AdaGvae, Batch::Pairs(a, b)) => {
                adagvae_loss(a.view(), b.view(), &model, cfg, &mut noise_rng).map(|o| o.output)
            }
            (objective, _) => {
                return Err(VaeError::Config(format!("data source batches do not match objective {objective}")))
            }
        }
        .map_err(|e| match e {
            VaeError::Diverged { detail, .. } => VaeError::Diverged { step, detail },
            other => other,
        })?;
        let b = out.breakdown;
        window = (window.0 + b.loss, window.1 + b.recon, window.2 + b.kl);
        let diverged = |e: NnError| VaeError::Diverged { step, detail: e.to_string() };
        adam_step(&mut model.encoder, &out.encoder_grads, &mut enc_state).map_err(diverged)?;
        adam_step(&mut model.decoder, &out.decoder_grads, &mut dec_state).map_err(diverged)?;
        if step % cfg.log_every == 0 {
            let k = cfg.log_every as f64;
            trace.push(TracePoint { step, loss: window.0 / k, recon: window.1 / k, kl: window.2 / k });
            log::debug!("step {step}: loss {:.3} recon {:.3} kl {:.3}", window.0 / k, window.1 / k, window.2 / k);
            window = (0.0, 0.0, 0.0);
        }
    }
    Ok(TrainedModel { model, train_config: cfg.clone(), seed, trace })
}

pub fn render_matrix(space: &FactorSpace, configs: &[FactorConfig], cfg: &RenderConfig) -> Result<Array2<f64>> {
    let rows = configs.iter().map(|c| Ok(render(space, c, cfg)?.pixels)).collect::<Result<Vec<_>>>()?;
    Ok(rows_to_matrix(rows, cfg.pixel_count()))
}

/// Posterior means of every configuration, one row per configuration.
pub fn encode_dataset(
    model: &VaeModel,
    space: &FactorSpace,
    render_cfg: &RenderConfig,
    configs: &[FactorConfig],
) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((configs.len(), model.latent_dim()));
    for (chunk_idx, chunk) in configs.chunks(1024).enumerate() {
        let x = render_matrix(space, chunk, render_cfg)?;
        let (mean, _) = model.encode_batch(x.view())?;
        out.slice_mut(s![chunk_idx * 1024..chunk_idx * 1024 + chunk.len(), ..]).assign(&mean);
    }
    Ok(out)
}

/// Encodes `base`, sets latent coordinate `dim` to each of `values` and
/// decodes the resulting means.
pub fn latent_traversal(
    model: &VaeModel,
    space: &FactorSpace,
    render_cfg: &RenderConfig,
    base: &FactorConfig,
    dim: usize,
    values: &[f64],
) -> Result<Vec<Observation>> {
    if dim >= model.latent_dim() {
        return Err(VaeError::Dimension { expected: model.latent_dim(), got: dim });
    }
    let posterior = encode(model, &render(space, base, render_cfg)?)?;
    values
        .iter()
        .map(|&v| {
            let mut z = posterior.mean.clone();
            z[dim] = v;
            decode(model, &z, render_cfg.height, render_cfg.width)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn post(mean: &[f64], lv: &[f64]) -> GaussianPosterior {
        GaussianPosterior::new(mean.to_vec(), lv.to_vec())
    }

    #[test]
    fn reparameterize_examples() {
        let q = post(&[1.0, -2.0], &[0.3, -0.4]);
        assert_eq!(reparameterize(&q, &[0.0, 0.0]), q.mean);
        assert_eq!(reparameterize(&post(&[0.0], &[0.0]), &[0.7]), vec![0.7]);
        let z = reparameterize(&post(&[1.0], &[4f64.ln()]), &[0.5]);
        assert!((z[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kl_to_prior_examples() {
        assert_eq!(kl_to_prior(&post(&[0.0], &[0.0])).total, 0.0);
        assert_eq!(kl_to_prior(&post(&[1.0], &[0.0])).total, 0.5);
        let k = kl_to_prior(&post(&[0.0], &[4f64.ln()])).total;
        assert!((k - 0.5 * (3.0 - 4f64.ln())).abs() < 1e-15);
        assert!((k - 0.806_85).abs() < 1e-5);
        let two = kl_to_prior(&post(&[1.0, 0.0], &[0.0, 4f64.ln()]));
        assert_eq!(two.per_dim.len(), 2);
        assert!((two.total - 0.5 - k).abs() < 1e-15);
    }

    #[test]
    fn per_dim_kl_examples() {
        let q = post(&[0.3, -1.0], &[0.2, 1.5]);
        assert!(per_dim_kl_between(&q, &q).iter().all(|&v| v.abs() < 1e-15));
        let kl = per_dim_kl_between(&post(&[0.0, 0.0], &[0.0, 0.0]), &post(&[1.0, 1.0], &[0.0, 0.0]));
        assert_eq!(kl, vec![0.5, 0.5]);
        let kl = per_dim_kl_between(&post(&[0.0], &[0.0]), &post(&[0.0], &[4f64.ln()]));
        assert!((kl[0] - (0.5 * 4f64.ln() + 0.125 - 0.5)).abs() < 1e-15);
        assert!((kl[0] - 0.318_15).abs() < 1e-5);
    }

    #[test]
    fn log_variance_is_clamped() {
        let q = post(&[0.0, 0.0], &[50.0, -50.0]);
        assert_eq!(q.log_variance, vec![10.0, -10.0]);
    }

    #[test]
    fn changed_dim_inference() {
        let mut kl = vec![0.1; 10];
        kl[3] = 2.0;
        assert_eq!(infer_changed_dims(&kl, 1), vec![3]);
        assert_eq!(infer_changed_dims(&kl, 0), Vec::<usize>::new());
        // Ties resolve toward the lower index.
        assert_eq!(infer_changed_dims(&[1.0, 1.0, 0.0], 1), vec![0]);
    }

    #[test]
    fn substitution_of_identical_posteriors_is_identity() {
        let q = post(&[0.4, -0.2, 1.1], &[0.1, -0.3, 0.0]);
        let (a, b, changed) = substitute_posteriors(&q, &q, 0);
        assert!(changed.is_empty());
        for (x, y) in a.mean.iter().zip(&q.mean).chain(b.mean.iter().zip(&q.mean)) {
            assert_eq!(x, y);
        }
        for (x, y) in a.log_variance.iter().zip(&q.log_variance) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn substitution_averages_shared_dims() {
        let q1 = post(&[0.0, 0.0], &[0.0, 0.0]);
        let q2 = post(&[3.0, 0.2], &[0.0, 2f64.ln() * 2.0]);
        let (a, b, changed) = substitute_posteriors(&q1, &q2, 1);
        assert_eq!(changed, vec![0]);
        assert_eq!((a.mean[0], b.mean[0]), (0.0, 3.0));
        assert_eq!(a.mean[1], 0.1);
        assert_eq!(a.mean[1], b.mean[1]);
        // Variances 1 and 4 average to 2.5.
        assert!((a.log_variance[1] - 2.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { steps: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { objective: Objective::AdaGvae, k_changed: 2, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn model_shape_checks() {
        let mut rng = SeedStream::new(0).stream(Purpose::Init, 0);
        let m = VaeModel::init(6, 5, 2, &mut rng).unwrap();
        assert_eq!((m.input_dim(), m.latent_dim()), (6, 2));
        let bad = VaeModel::new(m.encoder.clone(), VaeModel::init(6, 5, 3, &mut rng).unwrap().decoder);
        assert!(bad.is_err());
        let obs = Observation { height: 1, width: 5, pixels: vec![0.0; 5] };
        assert!(matches!(encode(&m, &obs), Err(VaeError::Dimension { .. })));
        let noise = array![[0.0, 0.0]];
        assert!(beta_vae_loss_with_noise(&m, array![[0.0; 5]].view(), 1.0, noise.view()).is_err());
    }
}
