//! Central finite differences against the hand-written backward passes.
//! Each check returns the worst relative error it saw.

use fovlab::nnkit::{Activation, Gradients, Network};
use fovlab::rng::{Purpose, SeedStream};
use fovlab::vae::{adagvae_loss_with_noise, beta_vae_loss_with_noise, standard_normal, VaeModel};
use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::rel_err;

const H: f64 = 1e-5;


fn rng(counter: u64) -> ChaCha8Rng {
    SeedStream::new(2024).stream(Purpose::Init, counter)
}

fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, r: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(lo..hi))
}

/// Checks `analytic[i]` against a central difference of `f` for each index in
/// `which`, perturbing a copy of `params`.
fn check(params: &[f64], analytic: &[f64], which: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let mut p = params.to_vec();
    for &i in which {
        let orig = p[i];
        p[i] = orig + H;
        let up = f(&p);
        p[i] = orig - H;
        let down = f(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn subset(n: usize, k: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    if n <= k {
        (0..n).collect()
    } else {
        sample(r, n, k).into_vec()
    }
}

pub fn network_backward() -> f64 {
    let mut worst: f64 = 0.0;
    let shapes: [(&[usize], &[Activation]); 4] = [
        (&[3, 4, 2], &[Activation::Tanh, Activation::Identity]),
        (&[5, 6, 6, 3], &[Activation::Relu, Activation::Sigmoid, Activation::Identity]),
        (&[4, 3], &[Activation::Sigmoid]),
        (&[16, 12, 8], &[Activation::Tanh, Activation::Identity]),
    ];
    for (case, (sizes, acts)) in shapes.iter().enumerate() {
        let mut r = rng(case as u64);
        let net = Network::init(sizes, acts, &mut r).unwrap();
        let x = uniform(3, sizes[0], -1.0, 1.0, &mut r);
        let upstream = uniform(3, *sizes.last().unwrap(), -1.0, 1.0, &mut r);
        let scalar = |n: &Network, x: ArrayView2<f64>| (n.forward_batch(x).unwrap() * &upstream).sum();

        let trace = net.forward_trace(x.clone()).unwrap();
        let (grads, gx) = net.backward(&trace, upstream.view()).unwrap();
        let which = subset(net.param_count(), 100, &mut r);
        worst = worst.max(check(&net.params_flat(), &grads.flat(), &which, |p| {
            let mut n = net.clone();
            n.set_params_flat(p).unwrap();
            scalar(&n, x.view())
        }));
        let xs: Vec<f64> = x.iter().copied().collect();
        let gxs: Vec<f64> = gx.iter().copied().collect();
        worst = worst.max(check(&xs, &gxs, &(0..xs.len()).collect::<Vec<_>>(), |p| {
            let xp = ArrayView2::from_shape(x.raw_dim(), p).unwrap();
            scalar(&net, xp)
        }));
    }
    worst
}

fn mini_model(r: &mut ChaCha8Rng) -> VaeModel {
    VaeModel::init(8, 6, 3, r).unwrap()
}

fn split(model: &VaeModel, p: &[f64]) -> VaeModel {
    let mut m = model.clone();
    let ne = m.encoder.param_count();
    m.encoder.set_params_flat(&p[..ne]).unwrap();
    m.decoder.set_params_flat(&p[ne..]).unwrap();
    m
}

fn all_params(model: &VaeModel) -> Vec<f64> {
    let mut p = model.encoder.params_flat();
    p.extend(model.decoder.params_flat());
    p
}

fn all_grads(enc: &Gradients, dec: &Gradients) -> Vec<f64> {
    let mut g = enc.flat();
    g.extend(dec.flat());
    g
}

pub fn beta_vae_loss() -> f64 {
    let mut worst: f64 = 0.0;
    for (case, beta) in [0.0, 1.0, 4.0].into_iter().enumerate() {
        let mut r = rng(10 + case as u64);
        let model = mini_model(&mut r);
        let batch = uniform(5, 8, 0.0, 1.0, &mut r);
        let noise = standard_normal(5, 3, &mut r);
        let out = beta_vae_loss_with_noise(&model, batch.view(), beta, noise.view()).unwrap();
        let params = all_params(&model);
        let analytic = all_grads(&out.encoder_grads, &out.decoder_grads);
        worst = worst.max(check(&params, &analytic, &(0..params.len()).collect::<Vec<_>>(), |p| {
            beta_vae_loss_with_noise(&split(&model, p), batch.view(), beta, noise.view()).unwrap().breakdown.loss
        }));
    }
    worst
}

pub fn ada_gvae_loss() -> f64 {
    let mut worst: f64 = 0.0;
    for (case, beta) in [1.0, 4.0].into_iter().enumerate() {
        let mut r = rng(20 + case as u64);
        let model = mini_model(&mut r);
        let first = uniform(4, 8, 0.0, 1.0, &mut r);
        let mut second = first.clone();
        // Change a couple of pixels so the pair differs but shares most content.
        for row in 0..4 {
            second[[row, row]] = 1.0 - second[[row, row]];
        }
        let n1 = standard_normal(4, 3, &mut r);
        let n2 = standard_normal(4, 3, &mut r);
        let loss = |m: &VaeModel| adagvae_loss_with_noise(m, first.view(), second.view(), beta, 1, n1.view(), n2.view()).unwrap();
        let out = loss(&model);
        let params = all_params(&model);
        let analytic = all_grads(&out.output.encoder_grads, &out.output.decoder_grads);
        worst = worst.max(check(&params, &analytic, &(0..params.len()).collect::<Vec<_>>(), |p| {
            let o = loss(&split(&model, p));
            // The inferred changed dims are piecewise constant in the
            // parameters; the difference quotient is only valid while they hold.
            assert_eq!(o.changed_dims, out.changed_dims);
            o.output.breakdown.loss
        }));
    }
    worst
}
