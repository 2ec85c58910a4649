//! Plug-in mutual information between discrete labels and quantile-binned
//! latents.

use ndarray::{Array2, ArrayView1, ArrayView2};

use super::{ImportanceMatrix, ImportanceSource, MetricError, Result};

/// Equal-frequency binning by rank. Equal values always share a bin, so any
/// strictly increasing transform of the column yields identical bins.
pub fn quantile_bins(column: ArrayView1<f64>, bins: usize) -> Vec<usize> {
    let n = column.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| column[a].total_cmp(&column[b]));
    let mut out = vec![0; n];
    let mut first_rank = 0;
    for (rank, &i) in order.iter().enumerate() {
        if rank > 0 && column[i] != column[order[rank - 1]] {
            first_rank = rank;
        }
        out[i] = first_rank * bins / n;
    }
    out
}

fn counts(values: &[usize]) -> Vec<f64> {
    let k = values.iter().max().map_or(0, |m| m + 1);
    let mut c = vec![0.0; k];
    for &v in values {
        c[v] += 1.0;
    }
    c
}

/// Shannon entropy in nats of the empirical distribution of `values`.
pub fn entropy(values: &[usize]) -> f64 {
    let n = values.len() as f64;
    counts(values).iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).ln()).sum()
}

/// Plug-in mutual information in nats.
pub fn mutual_information(x: &[usize], y: &[usize]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (cx, cy) = (counts(x), counts(y));
    let ky = cy.len();
    let mut joint = vec![0.0; cx.len() * ky];
    for (&a, &b) in x.iter().zip(y) {
        joint[a * ky + b] += 1.0;
    }
    let mut mi = 0.0;
    for (idx, &c) in joint.iter().enumerate() {
        if c > 0.0 {
            let (a, b) = (idx / ky, idx % ky);
            mi += (c / n) * (c * n / (cx[a] * cy[b])).ln();
        }
    }
    mi.max(0.0)
}

/// `I(c_i; bin(z_j)) / H(c_i)` for every factor `i` and latent `j`.
pub fn mi_importance(latents: ArrayView2<f64>, labels: ArrayView2<usize>, bins: usize) -> Result<ImportanceMatrix> {
    if latents.nrows() != labels.nrows() {
        return Err(MetricError::Shape(format!("{} latent rows vs {} label rows", latents.nrows(), labels.nrows())));
    }
    if bins < 2 {
        return Err(MetricError::Domain(format!("need at least 2 bins, got {bins}")));
    }
    if latents.nrows() == 0 {
        return Err(MetricError::Shape("no samples".into()));
    }
    let binned: Vec<Vec<usize>> = latents.columns().into_iter().map(|c| quantile_bins(c, bins)).collect();
    let mut weights = Array2::zeros((labels.ncols(), latents.ncols()));
    for (i, factor) in labels.columns().into_iter().enumerate() {
        let factor = factor.to_vec();
        let h = entropy(&factor);
        if h <= 0.0 {
            continue;
        }
        for (j, b) in binned.iter().enumerate() {
            weights[[i, j]] = (mutual_information(&factor, b) / h).clamp(0.0, 1.0);
        }
    }
    ImportanceMatrix::new(weights, ImportanceSource::MutualInformation)
}
