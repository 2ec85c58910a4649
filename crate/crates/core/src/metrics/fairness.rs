//! Demographic-parity unfairness between a predicted factor and a sensitive
//! factor.

use ndarray::ArrayView2;

use super::gbt::{self, GbtParams};
use super::{MetricError, Result};

fn histogram(values: impl Iterator<Item = usize>, k: usize) -> Vec<f64> {
    let mut h = vec![0.0; k];
    let mut n = 0.0;
    for v in values {
        h[v] += 1.0;
        n += 1.0;
    }
    if n > 0.0 {
        h.iter_mut().for_each(|x| *x /= n);
    }
    h
}

/// Mean over observed sensitive values `s` of `TV(p(ŷ | s), p(ŷ))`.
pub fn demographic_parity(predictions: &[usize], sensitive: &[usize]) -> Result<f64> {
    if predictions.len() != sensitive.len() {
        return Err(MetricError::Shape(format!("{} predictions vs {} sensitive values", predictions.len(), sensitive.len())));
    }
    let mut groups: Vec<usize> = sensitive.to_vec();
    groups.sort_unstable();
    groups.dedup();
    if groups.len() < 2 {
        return Err(MetricError::Degenerate("sensitive factor takes a single value".into()));
    }
    let k = predictions.iter().max().map_or(1, |m| m + 1);
    let marginal = histogram(predictions.iter().copied(), k);
    let total: f64 = groups
        .iter()
        .map(|&s| {
            let cond = histogram(predictions.iter().zip(sensitive).filter(|(_, &v)| v == s).map(|(&p, _)| p), k);
            0.5 * cond.iter().zip(&marginal).map(|(a, b)| (a - b).abs()).sum::<f64>()
        })
        .sum();
    Ok((total / groups.len() as f64).clamp(0.0, 1.0))
}

/// Fits the tree classifier predicting `target` from all latents and scores
/// the demographic parity of its hard predictions against `sensitive`.
pub fn unfairness(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    target: usize,
    sensitive: usize,
    params: &GbtParams,
) -> Result<f64> {
    if target == sensitive {
        return Err(MetricError::Domain("target and sensitive factor must differ".into()));
    }
    let fit = gbt::fit(latents, &labels.column(target).to_vec(), params)?;
    let predictions = fit.classifier.predict_all(latents);
    demographic_parity(&predictions, &labels.column(sensitive).to_vec())
}

/// Fits the classifier on `(fit_latents, fit_labels)` and scores the
/// demographic parity of its predictions on `(latents, labels)`.
pub fn unfairness_transfer(
    fit_latents: ArrayView2<f64>,
    fit_labels: ArrayView2<usize>,
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    target: usize,
    sensitive: usize,
    params: &GbtParams,
) -> Result<f64> {
    if target == sensitive {
        return Err(MetricError::Domain("target and sensitive factor must differ".into()));
    }
    let fit = gbt::fit(fit_latents, &fit_labels.column(target).to_vec(), params)?;
    demographic_parity(&fit.classifier.predict_all(latents), &labels.column(sensitive).to_vec())
}
