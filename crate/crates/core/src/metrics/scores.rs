use ndarray::{ArrayView1, ArrayView2};

use super::{ImportanceMatrix, ImportanceSource, MetricError, Result};

/// Mutual information gap: mean over factors of the difference between the
/// two largest entropy-normalized MI entries.
pub fn mig(mi: &ImportanceMatrix) -> Result<f64> {
    if mi.source != ImportanceSource::MutualInformation {
        return Err(MetricError::Domain("MIG needs a mutual-information matrix".into()));
    }
    if mi.latent_count() < 2 {
        return Err(MetricError::Domain(format!("MIG needs at least 2 latents, got {}", mi.latent_count())));
    }
    let gaps: Vec<f64> = mi.weights.rows().into_iter().map(|r| top_two_gap(r.iter().copied())).collect();
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

fn top_two_gap(values: impl Iterator<Item = f64>) -> f64 {
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in values {
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    first - second
}

/// DCI disentanglement: importance-weighted mean over latents of one minus
/// the normalized entropy of each latent's distribution over factors.
pub fn dci_disentanglement(importance: &ImportanceMatrix) -> Result<f64> {
    let w = &importance.weights;
    let total: f64 = w.sum();
    if total <= 0.0 {
        return Err(MetricError::Degenerate("importance matrix is all zero".into()));
    }
    let n_factors = w.nrows();
    let mut score = 0.0;
    for col in w.columns() {
        let mass: f64 = col.sum();
        if mass <= 0.0 {
            continue;
        }
        let d = if n_factors == 1 {
            1.0
        } else {
            let h: f64 = col.iter().filter(|&&v| v > 0.0).map(|&v| -(v / mass) * (v / mass).ln()).sum();
            1.0 - h / (n_factors as f64).ln()
        };
        score += (mass / total) * d;
    }
    Ok(score.clamp(0.0, 1.0))
}

/// Threshold splitting a discrete factor into the two most balanced classes;
/// `None` when every sample has the same value.
fn median_split(factor: ArrayView1<usize>) -> Option<Vec<bool>> {
    let mut values: Vec<usize> = factor.to_vec();
    values.sort_unstable();
    values.dedup();
    if values.len() < 2 {
        return None;
    }
    let n = factor.len();
    let best = values[..values.len() - 1]
        .iter()
        .min_by_key(|&&t| {
            let above = factor.iter().filter(|&&v| v > t).count();
            (2 * above).abs_diff(n)
        })
        .copied()?;
    Some(factor.iter().map(|&v| v > best).collect())
}

/// Best balanced accuracy of a single threshold on `latent` (either polarity).
pub fn best_threshold_balanced_accuracy(latent: ArrayView1<f64>, target: &[bool]) -> f64 {
    let n = latent.len();
    let pos_total = target.iter().filter(|&&t| t).count() as f64;
    let neg_total = n as f64 - pos_total;
    if pos_total == 0.0 || neg_total == 0.0 {
        return 0.5;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]));
    let mut best: f64 = 0.5;
    let (mut pos_below, mut neg_below) = (0.0, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if target[i] {
            pos_below += 1.0;
        } else {
            neg_below += 1.0;
        }
        let boundary = rank + 1 == n || latent[order[rank + 1]] > latent[i];
        if boundary {
            // Predict "positive" above the threshold.
            let acc = 0.5 * ((pos_total - pos_below) / pos_total + neg_below / neg_total);
            best = best.max(acc).max(1.0 - acc);
        }
    }
    best
}

/// SAP score matrix: `S[i][j]` is the balanced accuracy of the best single
/// threshold on latent `j` for the median-split factor `i`. Factors that
/// cannot be split are `None`.
pub fn sap_matrix(latents: ArrayView2<f64>, labels: ArrayView2<usize>) -> Result<Vec<Option<Vec<f64>>>> {
    if latents.nrows() != labels.nrows() {
        return Err(MetricError::Shape(format!("{} latent rows vs {} label rows", latents.nrows(), labels.nrows())));
    }
    Ok(labels
        .columns()
        .into_iter()
        .map(|factor| {
            median_split(factor).map(|target| {
                latents.columns().into_iter().map(|z| best_threshold_balanced_accuracy(z, &target)).collect()
            })
        })
        .collect())
}

/// Separated attribute predictability: mean over factors of the gap between
/// the two most predictive single latents.
pub fn sap(latents: ArrayView2<f64>, labels: ArrayView2<usize>) -> Result<f64> {
    if latents.ncols() < 2 {
        return Err(MetricError::Domain("SAP needs at least 2 latents".into()));
    }
    let matrix = sap_matrix(latents, labels)?;
    let mut gaps = Vec::new();
    for (i, row) in matrix.iter().enumerate() {
        match row {
            Some(r) => gaps.push(top_two_gap(r.iter().copied())),
            None => log::warn!("SAP: factor {i} has a single value in the sample; skipped"),
        }
    }
    if gaps.is_empty() {
        return Ok(0.0);
    }
    Ok((gaps.iter().sum::<f64>() / gaps.len() as f64).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn mi(w: Array2<f64>) -> ImportanceMatrix {
        ImportanceMatrix::new(w, ImportanceSource::MutualInformation).unwrap()
    }

    #[test]
    fn mig_examples() {
        assert_eq!(mig(&mi(array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])).unwrap(), 1.0);
        assert_eq!(mig(&mi(array![[0.5, 0.5], [0.3, 0.3]])).unwrap(), 0.0);
        let v = mig(&mi(array![[0.8, 0.2], [0.6, 0.1]])).unwrap();
        assert!((v - 0.55).abs() < 1e-15);
        assert!(mig(&mi(array![[1.0], [0.5]])).is_err());
        let tree = ImportanceMatrix::new(array![[1.0, 0.0]], ImportanceSource::TreeClassifier).unwrap();
        assert!(mig(&tree).is_err());
    }

    #[test]
    fn dci_examples() {
        let perm = mi(array![[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        assert_eq!(dci_disentanglement(&perm).unwrap(), 1.0);
        assert!(dci_disentanglement(&mi(Array2::from_elem((3, 4), 0.2))).unwrap().abs() < 1e-15);
        let v = dci_disentanglement(&mi(array![[0.9, 0.1], [0.1, 0.9]])).unwrap();
        let h = -(0.9f64 * 0.9f64.ln() + 0.1 * 0.1f64.ln());
        assert!((v - (1.0 - h / 2f64.ln())).abs() < 1e-15);
        assert!((v - 0.531).abs() < 1e-3);
        assert!(dci_disentanglement(&mi(Array2::zeros((2, 2)))).is_err());
        // Zero-mass columns are ignored.
        let with_dead = mi(array![[1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_eq!(dci_disentanglement(&with_dead).unwrap(), 1.0);
    }

    #[test]
    fn median_split_balances() {
        let f = ndarray::Array1::from(vec![0usize, 1, 2, 3, 4, 5, 6, 7]);
        let s = median_split(f.view()).unwrap();
        assert_eq!(s.iter().filter(|&&b| b).count(), 4);
        assert!(median_split(ndarray::Array1::from(vec![3usize; 4]).view()).is_none());
    }

    #[test]
    fn sap_copies_tie() {
        let labels = Array2::from_shape_fn((40, 1), |(i, _)| i % 4);
        let latents = Array2::from_shape_fn((40, 2), |(i, _)| (i % 4) as f64);
        assert_eq!(sap(latents.view(), labels.view()).unwrap(), 0.0);
    }

    #[test]
    fn single_value_factor_is_skipped() {
        let labels = Array2::from_shape_fn((40, 2), |(i, j)| if j == 0 { i % 2 } else { 1 });
        let latents = Array2::from_shape_fn((40, 2), |(i, j)| if j == 0 { (i % 2) as f64 } else { 0.0 });
        assert_eq!(sap(latents.view(), labels.view()).unwrap(), 0.5);
    }
}
