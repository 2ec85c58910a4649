#![allow(dead_code)]

pub mod grad;

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Upper-tail p-value of Pearson's goodness-of-fit statistic. Cells with an
/// expected count below 5 are merged into one bin.
pub fn chi_square_gof(observed: &[u64], expected_probs: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected_probs.len());
    let n: u64 = observed.iter().sum();
    let (mut stat, mut df) = (0.0, 0usize);
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected_probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled_o += o as f64;
            pooled_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            df += 1;
        }
    }
    if pooled_e >= 5.0 {
        stat += (pooled_o - pooled_e).powi(2) / pooled_e;
        df += 1;
    } else {
        assert!(pooled_o <= 5.0 + 5.0 * pooled_e, "{pooled_o} draws landed in cells expecting {pooled_e}");
    }
    upper_tail(stat, df.saturating_sub(1))
}

/// p-value of the two-sample chi-square homogeneity test.
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let (mut stat, mut df) = (0.0, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
        df += 1;
    }
    upper_tail(stat, df.saturating_sub(1))
}

fn upper_tail(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    1.0 - ChiSquared::new(df as f64).unwrap().cdf(stat)
}

/// Relative error used by the gradient checks, with a floor so that
/// vanishing gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Pairwise entanglement by brute force: for every distinct positive weight
/// `t`, keep the edges of weight ≥ t and flood-fill the bipartite graph.
pub fn brute_force_pairwise(w: &ndarray::Array2<f64>) -> ndarray::Array2<f64> {
    let (f, l) = w.dim();
    let mut thresholds: Vec<f64> = w.iter().copied().filter(|&v| v > 0.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let mut out = ndarray::Array2::zeros((f, f));
    for &t in &thresholds {
        for a in 0..f {
            // Nodes 0..f are factors, f..f+l latents.
            let mut seen = vec![false; f + l];
            let mut stack = vec![a];
            seen[a] = true;
            while let Some(n) = stack.pop() {
                let next: Vec<usize> = if n < f {
                    (0..l).filter(|&j| w[[n, j]] >= t).map(|j| f + j).collect()
                } else {
                    (0..f).filter(|&i| w[[i, n - f]] >= t).collect()
                };
                for m in next {
                    if !seen[m] {
                        seen[m] = true;
                        stack.push(m);
                    }
                }
            }
            for b in 0..f {
                if b != a && seen[b] && out[[a, b]] < t {
                    out[[a, b]] = t;
                }
            }
        }
    }
    out
}

/// Random non-negative matrix; about half the draws are quantized to a
/// coarse grid so ties between edge weights are common.
pub fn random_importance<R: rand::Rng>(rows: usize, cols: usize, rng: &mut R) -> ndarray::Array2<f64> {
    let quantize = rng.random_bool(0.5);
    ndarray::Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = rng.random();
        if quantize {
            (v * 8.0).floor() / 8.0
        } else if rng.random_bool(0.2) {
            0.0
        } else {
            v
        }
    })
}
