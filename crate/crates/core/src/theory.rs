//! Likelihood gap of disentangled maps on a correlated Gaussian world.
//!
//! The true factors are `c ~ N(0, Σ*)` with `Σ* = [[1, ρ], [ρ, 1]]` and the
//! model prior is `z ~ N(0, I)`. A linear encoder `z = A c` implies the model
//! factor density `N(0, (AᵀA)⁻¹)`, and because the map is invertible the
//! KL divergence between data and model densities equals the KL divergence
//! between the two factor densities. Diagonal `A` (disentangled maps) cannot
//! reach zero when `ρ ≠ 0`; the whitening map `Σ*^{-1/2}` (entangled) can.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Mat2 = [[f64; 2]; 2];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("correlation must lie in (-1, 1), got {0}")]
    Rho(f64),
    #[error("map is singular (det = {0})")]
    Singular(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianWorld {
    rho: f64,
}

impl GaussianWorld {
    pub fn new(rho: f64) -> Result<Self, TheoryError> {
        if !(rho.abs() < 1.0) {
            return Err(TheoryError::Rho(rho));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn covariance(&self) -> Mat2 {
        [[1.0, self.rho], [self.rho, 1.0]]
    }

    /// `Σ*^{-1/2}`: eigenvalues `1 ± ρ` with eigenvectors `(1, ±1)/√2`.
    pub fn whitening_map(&self) -> Mat2 {
        let p = 1.0 / (1.0 + self.rho).sqrt();
        let m = 1.0 / (1.0 - self.rho).sqrt();
        [[0.5 * (p + m), 0.5 * (p - m)], [0.5 * (p - m), 0.5 * (p + m)]]
    }

    /// The smallest KL any diagonal map can reach, `-½ ln(1 - ρ²)`.
    pub fn analytic_gap(&self) -> f64 {
        -0.5 * (1.0 - self.rho * self.rho).ln()
    }
}

fn det(a: &Mat2) -> f64 {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

/// `KL(N(0, Σ*) ‖ N(0, (AᵀA)⁻¹))`.
pub fn pullback_prior_kl(world: &GaussianWorld, a: &Mat2) -> Result<f64, TheoryError> {
    let d = det(a);
    if d.abs() < 1e-300 || !d.is_finite() {
        return Err(TheoryError::Singular(d));
    }
    // AᵀA
    let g = [
        [a[0][0] * a[0][0] + a[1][0] * a[1][0], a[0][0] * a[0][1] + a[1][0] * a[1][1]],
        [a[0][1] * a[0][0] + a[1][1] * a[1][0], a[0][1] * a[0][1] + a[1][1] * a[1][1]],
    ];
    let s = world.covariance();
    let trace = g[0][0] * s[0][0] + g[0][1] * s[1][0] + g[1][0] * s[0][1] + g[1][1] * s[1][1];
    // ln det Σθ = -ln det(AᵀA) = -2 ln|det A|
    let ln_det_model = -2.0 * d.abs().ln();
    let ln_det_true = (1.0 - world.rho * world.rho).ln();
    Ok(0.5 * (trace - 2.0 + ln_det_model - ln_det_true))
}

/// Golden-section minimization of `f` on `[lo, hi]`.
fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalOptimum {
    pub kl: f64,
    pub map: Mat2,
}

/// Numerically minimizes the pullback KL over diagonal maps and over
/// anti-diagonal maps (diagonal up to a permutation), on log-scales by grid
/// search followed by coordinate-wise golden-section refinement.
pub fn min_kl_over_diagonal(world: &GaussianWorld) -> DiagonalOptimum {
    let kl_of = |swap: bool, la: f64, lb: f64| {
        let (a, b) = (la.exp(), lb.exp());
        let m = if swap { [[0.0, a], [b, 0.0]] } else { [[a, 0.0], [0.0, b]] };
        (pullback_prior_kl(world, &m).expect("non-singular"), m)
    };
    let mut best: Option<DiagonalOptimum> = None;
    for swap in [false, true] {
        // Coarse grid over log-scales in [-3, 3].
        let grid: Vec<f64> = (0..=60).map(|i| -3.0 + 0.1 * i as f64).collect();
        let (mut la, mut lb, mut v) = (0.0, 0.0, f64::INFINITY);
        for &x in &grid {
            for &y in &grid {
                let k = kl_of(swap, x, y).0;
                if k < v {
                    (la, lb, v) = (x, y, k);
                }
            }
        }
        for _ in 0..4 {
            la = golden_section(|x| kl_of(swap, x, lb).0, la - 0.2, la + 0.2, 1e-10);
            lb = golden_section(|y| kl_of(swap, la, y).0, lb - 0.2, lb + 0.2, 1e-10);
        }
        let (kl, map) = kl_of(swap, la, lb);
        if best.is_none_or(|b| kl < b.kl) {
            best = Some(DiagonalOptimum { kl, map });
        }
    }
    best.expect("two candidates evaluated")
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapRow {
    pub rho: f64,
    pub min_diagonal_kl: f64,
    pub analytic: f64,
    pub whitening_kl: f64,
}

pub fn gap_row(world: &GaussianWorld) -> GapRow {
    GapRow {
        rho: world.rho(),
        min_diagonal_kl: min_kl_over_diagonal(world).kl,
        analytic: world.analytic_gap(),
        whitening_kl: pullback_prior_kl(world, &world.whitening_map()).expect("whitening map is invertible"),
    }
}

/// CSV table of the diagonal-map gap for each correlation.
pub fn gap_table_csv(rhos: &[f64]) -> Result<String, TheoryError> {
    let mut out = String::from("rho,min_diagonal_kl,analytic_gap,whitening_kl\n");
    for &rho in rhos {
        let r = gap_row(&GaussianWorld::new(rho)?);
        out.push_str(&format!("{},{:.10},{:.10},{:.3e}\n", r.rho, r.min_diagonal_kl, r.analytic, r.whitening_kl));
    }
    Ok(out)
}
