//! Disentangled representation learning under correlated factors of variation.
//!
//! The crate is a small laboratory: it generates correlated procedural
//! datasets ([`factors`]), trains β-VAE and Ada-GVAE models on a dense network
//! engine ([`nnkit`], [`vae`]), scores the learned codes ([`metrics`]),
//! repairs entangled pairs with a few labels ([`adapt`]), demonstrates the
//! likelihood gap of disentangled maps on a Gaussian world ([`theory`]), and
//! runs seeded sweeps over all of the above ([`runner`]).

pub mod factors;
pub mod rng;
pub mod nnkit;
pub mod vae;
pub mod metrics;
pub mod adapt;
pub mod theory;
pub mod runner;
