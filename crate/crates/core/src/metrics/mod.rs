//! Importance matrices and representation scores.
//!
//! Two importance sources feed the scores: entropy-normalized mutual
//! information between factors and quantile-binned latents ([`mi`]), and
//! split gains of gradient-boosted trees predicting each factor from all
//! latents ([`gbt`]). [`evaluate`] computes the full [`ScoreReport`] for one
//! encoded dataset.

pub mod fairness;
pub mod gbt;
pub mod mi;
pub mod pairwise;
pub mod scores;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fairness::{demographic_parity, unfairness, unfairness_transfer};
pub use gbt::GbtParams;
pub use mi::mi_importance;
pub use pairwise::{pair_matrix_csv, pairwise_entanglement, pairwise_summary, PairwiseSummary};
pub use scores::{dci_disentanglement, mig, sap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, MetricError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceSource {
    MutualInformation,
    TreeClassifier,
}

/// Non-negative relevance of each latent (columns) for each factor (rows).
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceMatrix {
    pub weights: Array2<f64>,
    pub source: ImportanceSource,
}

impl ImportanceMatrix {
    pub fn new(weights: Array2<f64>, source: ImportanceSource) -> Result<Self> {
        if weights.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(MetricError::Domain("importance entries must be finite and non-negative".into()));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(MetricError::Shape("empty importance matrix".into()));
        }
        Ok(Self { weights, source })
    }

    pub fn factor_count(&self) -> usize {
        self.weights.nrows()
    }

    pub fn latent_count(&self) -> usize {
        self.weights.ncols()
    }
}

fn check_rows(latents: &ArrayView2<f64>, labels: &ArrayView2<usize>) -> Result<()> {
    if latents.nrows() != labels.nrows() {
        return Err(MetricError::Shape(format!("{} latent rows vs {} label rows", latents.nrows(), labels.nrows())));
    }
    Ok(())
}

/// Per-factor tree fits: row-normalized split gains and in-sample hard
/// predictions.
struct FactorFits {
    importance: ImportanceMatrix,
    predictions: Vec<Vec<usize>>,
}

fn fit_factors(latents: ArrayView2<f64>, labels: ArrayView2<usize>, params: &GbtParams) -> Result<FactorFits> {
    check_rows(&latents, &labels)?;
    let mut weights = Array2::zeros((labels.ncols(), latents.ncols()));
    let mut predictions = Vec::with_capacity(labels.ncols());
    for (i, factor) in labels.columns().into_iter().enumerate() {
        let fit = gbt::fit(latents, &factor.to_vec(), params)?;
        let total: f64 = fit.feature_gain.iter().sum();
        if total > 0.0 {
            for (j, g) in fit.feature_gain.iter().enumerate() {
                weights[[i, j]] = g / total;
            }
        }
        predictions.push(fit.classifier.predict_all(latents));
    }
    Ok(FactorFits { importance: ImportanceMatrix::new(weights, ImportanceSource::TreeClassifier)?, predictions })
}

/// Gradient-boosted tree importance, each row normalized to sum 1.
pub fn tree_importance(latents: ArrayView2<f64>, labels: ArrayView2<usize>, params: &GbtParams) -> Result<ImportanceMatrix> {
    Ok(fit_factors(latents, labels, params)?.importance)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSettings {
    pub mi_bins: usize,
    pub gbt: GbtParams,
}

impl Default for MetricSettings {
    fn default() -> Self {
        Self { mi_bins: 20, gbt: GbtParams::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessEntry {
    pub target: usize,
    pub sensitive: usize,
    pub value: f64,
}

fn to_rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_vec((rows.len(), cols), rows.iter().flatten().copied().collect()).expect("rectangular rows")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mig: f64,
    /// DCI disentanglement from the tree importance matrix.
    pub dci: f64,
    pub sap: f64,
    pub correlated_pair: (usize, usize),
    /// Pairwise entanglement from tree importance.
    pub pairwise: Vec<Vec<f64>>,
    pub pairwise_summary: PairwiseSummary,
    /// Pairwise entanglement from mutual-information importance.
    pub pairwise_mi: Vec<Vec<f64>>,
    pub pairwise_mi_summary: PairwiseSummary,
    /// Every ordered (target, sensitive) factor pair.
    pub unfairness: Vec<UnfairnessEntry>,
    /// Mean of the two directions of the correlated pair.
    pub correlated_unfairness: f64,
    pub tree_importance: Vec<Vec<f64>>,
    pub mi_importance: Vec<Vec<f64>>,
    pub settings: MetricSettings,
}

impl ScoreReport {
    pub fn pairwise_matrix(&self) -> Array2<f64> {
        from_rows(&self.pairwise)
    }

    pub fn unfairness_between(&self, target: usize, sensitive: usize) -> Option<f64> {
        self.unfairness.iter().find(|e| e.target == target && e.sensitive == sensitive).map(|e| e.value)
    }
}

/// Encoded samples with one label column per factor.
#[derive(Clone, Copy, Debug)]
pub struct Labeled<'a> {
    pub latents: ArrayView2<'a, f64>,
    pub labels: ArrayView2<'a, usize>,
}

/// Computes every score for one encoded dataset. `labels` holds one column
/// per factor. Unfairness classifiers are fitted on the same samples.
pub fn evaluate(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    correlated_pair: (usize, usize),
    settings: &MetricSettings,
) -> Result<ScoreReport> {
    evaluate_with_reference(latents, labels, None, correlated_pair, settings)
}

/// Like [`evaluate`], but when `reference` is given the unfairness
/// classifiers are fitted on it and audited on `latents`/`labels`.
pub fn evaluate_with_reference(
    latents: ArrayView2<f64>,
    labels: ArrayView2<usize>,
    reference: Option<Labeled>,
    correlated_pair: (usize, usize),
    settings: &MetricSettings,
) -> Result<ScoreReport> {
    check_rows(&latents, &labels)?;
    if let Some(r) = &reference {
        check_rows(&r.latents, &r.labels)?;
        if r.latents.ncols() != latents.ncols() || r.labels.ncols() != labels.ncols() {
            return Err(MetricError::Shape("reference and evaluation columns differ".into()));
        }
    }
    let (a, b) = correlated_pair;
    if a == b || a >= labels.ncols() || b >= labels.ncols() {
        return Err(MetricError::Domain(format!("invalid correlated pair {correlated_pair:?}")));
    }
    let mi = mi_importance(latents, labels, settings.mi_bins)?;
    let fits = fit_factors(latents, labels, &settings.gbt)?;
    let tree = &fits.importance;

    let pairwise = pairwise_entanglement(tree);
    let pairwise_mi = pairwise_entanglement(&mi);
    let predictions = match &reference {
        None => fits.predictions.clone(),
        Some(r) => r
            .labels
            .columns()
            .into_iter()
            .map(|factor| Ok(gbt::fit(r.latents, &factor.to_vec(), &settings.gbt)?.classifier.predict_all(latents)))
            .collect::<Result<Vec<_>>>()?,
    };
    let mut unfair = Vec::new();
    for target in 0..labels.ncols() {
        for sensitive in 0..labels.ncols() {
            if target != sensitive {
                let value = demographic_parity(&predictions[target], &labels.column(sensitive).to_vec())?;
                unfair.push(UnfairnessEntry { target, sensitive, value });
            }
        }
    }
    let find = |t: usize, s: usize| unfair.iter().find(|e| e.target == t && e.sensitive == s).unwrap().value;
    let correlated_unfairness = 0.5 * (find(a, b) + find(b, a));

    Ok(ScoreReport {
        mig: mig(&mi)?,
        dci: dci_disentanglement(tree)?,
        sap: sap(latents, labels)?,
        correlated_pair,
        pairwise_summary: pairwise_summary(&pairwise, correlated_pair),
        pairwise: to_rows(&pairwise),
        pairwise_mi_summary: pairwise_summary(&pairwise_mi, correlated_pair),
        pairwise_mi: to_rows(&pairwise_mi),
        unfairness: unfair,
        correlated_unfairness,
        tree_importance: to_rows(&tree.weights),
        mi_importance: to_rows(&mi.weights),
        settings: *settings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn importance_validation() {
        assert!(ImportanceMatrix::new(array![[-0.1]], ImportanceSource::TreeClassifier).is_err());
        assert!(ImportanceMatrix::new(array![[f64::NAN]], ImportanceSource::TreeClassifier).is_err());
        assert!(ImportanceMatrix::new(Array2::zeros((0, 3)), ImportanceSource::TreeClassifier).is_err());
    }

    #[test]
    fn evaluate_rejects_bad_pairs() {
        let latents = Array2::from_shape_fn((20, 2), |(i, j)| (i * (j + 1)) as f64);
        let labels = Array2::from_shape_fn((20, 2), |(i, j)| (i + j) % 2);
        let s = MetricSettings::default();
        assert!(evaluate(latents.view(), labels.view(), (0, 0), &s).is_err());
        assert!(evaluate(latents.view(), labels.view(), (0, 5), &s).is_err());
    }
}
