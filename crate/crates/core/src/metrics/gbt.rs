//! Gradient-boosted depth-limited regression trees for multi-class
//! classification (one-vs-rest logistic loss, Newton leaf values).
//!
//! Feature importance is the total split gain attributed to each feature
//! across every tree of every class.

use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{MetricError, Result};
use crate::nnkit::sigmoid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbtParams {
    pub depth: usize,
    pub rounds: usize,
    pub shrinkage: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self { depth: 2, rounds: 20, shrinkage: 0.1, lambda: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: ArrayView1<f64>) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split { feature, threshold, left, right } => {
                    i = if row[feature] <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtClassifier {
    /// Sorted distinct labels seen during fitting.
    pub classes: Vec<usize>,
    base_scores: Vec<f64>,
    /// `trees[c]` holds the boosted sequence for class `classes[c]`.
    trees: Vec<Vec<Tree>>,
    shrinkage: f64,
}

#[derive(Clone, Debug)]
pub struct GbtFit {
    pub classifier: GbtClassifier,
    /// Total split gain per feature.
    pub feature_gain: Vec<f64>,
}

impl GbtClassifier {
    fn scores(&self, row: ArrayView1<f64>) -> Vec<f64> {
        self.trees
            .iter()
            .zip(&self.base_scores)
            .map(|(ts, &b)| b + self.shrinkage * ts.iter().map(|t| t.predict(row)).sum::<f64>())
            .collect()
    }

    /// Hard prediction: the class with the highest one-vs-rest score (lowest
    /// label on ties).
    pub fn predict(&self, row: ArrayView1<f64>) -> usize {
        let s = self.scores(row);
        let mut best = 0;
        for c in 1..s.len() {
            if s[c] > s[best] {
                best = c;
            }
        }
        self.classes[best]
    }

    pub fn predict_all(&self, features: ArrayView2<f64>) -> Vec<usize> {
        features.rows().into_iter().map(|r| self.predict(r)).collect()
    }
}

/// Per-feature sample order, shared by every tree fitted on the same data.
struct SortedFeatures {
    order: Vec<Vec<u32>>,
}

impl SortedFeatures {
    fn new(features: ArrayView2<f64>) -> Self {
        let order = features
            .columns()
            .into_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..col.len() as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        Self { order }
    }
}

#[derive(Clone, Copy, Default)]
struct Sums {
    g: f64,
    h: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn score(s: Sums, lambda: f64) -> f64 {
    s.g * s.g / (s.h + lambda)
}

/// Fits one regression tree to gradients/hessians by level-wise growth; the
/// gain of every split is added to `feature_gain`.
fn fit_tree(
    features: ArrayView2<f64>,
    sorted: &SortedFeatures,
    grad: &[f64],
    hess: &[f64],
    params: &GbtParams,
    feature_gain: &mut [f64],
) -> Tree {
    let n = grad.len();
    let lambda = params.lambda;
    // Node index per sample in `nodes`; usize::MAX once the sample sits in a
    // finished leaf.
    let mut node_of = vec![0usize; n];
    let mut nodes: Vec<Node> = vec![Node::Leaf(0.0)];
    let mut frontier = vec![0usize];
    let mut totals = vec![Sums { g: grad.iter().sum(), h: hess.iter().sum() }];

    for _level in 0..params.depth {
        if frontier.is_empty() {
            break;
        }
        // Frontier slot of each live node id.
        let slot_of = |id: usize| frontier.iter().position(|&f| f == id);
        let mut best: Vec<Option<Candidate>> = vec![None; frontier.len()];
        // Features whose best split reaches exactly the best gain; they share
        // its importance, so duplicated columns split the credit.
        let mut tied: Vec<Vec<usize>> = vec![Vec::new(); frontier.len()];
        for (feature, order) in sorted.order.iter().enumerate() {
            let col = features.column(feature);
            let mut left = vec![Sums::default(); frontier.len()];
            let mut last: Vec<Option<f64>> = vec![None; frontier.len()];
            for &i in order {
                let i = i as usize;
                let Some(slot) = (node_of[i] != usize::MAX).then(|| slot_of(node_of[i])).flatten() else {
                    continue;
                };
                let v = col[i];
                if let Some(prev) = last[slot] {
                    if v > prev {
                        let l = left[slot];
                        let t = totals[slot];
                        let r = Sums { g: t.g - l.g, h: t.h - l.h };
                        let gain = 0.5 * (score(l, lambda) + score(r, lambda) - score(t, lambda));
                        if gain > 1e-12 && best[slot].is_none_or(|b| gain > b.gain) {
                            best[slot] = Some(Candidate { gain, feature, threshold: 0.5 * (prev + v) });
                            tied[slot] = vec![feature];
                        } else if best[slot].is_some_and(|b| gain == b.gain) && tied[slot].last() != Some(&feature) {
                            tied[slot].push(feature);
                        }
                    }
                }
                left[slot].g += grad[i];
                left[slot].h += hess[i];
                last[slot] = Some(v);
            }
        }

        let mut next_frontier = Vec::new();
        let mut next_totals = Vec::new();
        let mut child_of: Vec<Option<(usize, usize, usize, f64)>> = vec![None; frontier.len()];
        for (slot, &id) in frontier.iter().enumerate() {
            let Some(c) = best[slot] else {
                continue;
            };
            for &f in &tied[slot] {
                feature_gain[f] += c.gain / tied[slot].len() as f64;
            }
            let (l, r) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf(0.0));
            nodes.push(Node::Leaf(0.0));
            nodes[id] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
            child_of[slot] = Some((l, r, c.feature, c.threshold));
            next_frontier.extend([l, r]);
            next_totals.extend([Sums::default(), Sums::default()]);
        }
        for i in 0..n {
            if node_of[i] == usize::MAX {
                continue;
            }
            let slot = slot_of(node_of[i]).expect("live node is on the frontier");
            match child_of[slot] {
                Some((l, r, f, t)) => {
                    let child = if features[[i, f]] <= t { l } else { r };
                    node_of[i] = child;
                    let s = next_frontier.iter().position(|&x| x == child).unwrap();
                    next_totals[s].g += grad[i];
                    next_totals[s].h += hess[i];
                }
                None => node_of[i] = usize::MAX,
            }
        }
        frontier = next_frontier;
        totals = next_totals;
    }

    // Leaf values from the final per-leaf sums; recompute for all leaves,
    // including those finished early.
    let mut leaf_sums = vec![Sums::default(); nodes.len()];
    for i in 0..n {
        let row = features.row(i);
        let mut id = 0;
        while let Node::Split { feature, threshold, left, right } = nodes[id] {
            id = if row[feature] <= threshold { left } else { right };
        }
        leaf_sums[id].g += grad[i];
        leaf_sums[id].h += hess[i];
    }
    for (id, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf(v) = node {
            *v = -leaf_sums[id].g / (leaf_sums[id].h + lambda);
        }
    }
    Tree { nodes }
}

pub fn fit(features: ArrayView2<f64>, labels: &[usize], params: &GbtParams) -> Result<GbtFit> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(MetricError::Shape(format!("{} labels for {} rows", labels.len(), n)));
    }
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(MetricError::Degenerate(format!("need at least 2 classes, found {}", classes.len())));
    }
    let sorted = SortedFeatures::new(features);
    let mut feature_gain = vec![0.0; features.ncols()];
    let mut base_scores = Vec::with_capacity(classes.len());
    let mut trees = Vec::with_capacity(classes.len());
    for &class in &classes {
        let y: Vec<f64> = labels.iter().map(|&l| if l == class { 1.0 } else { 0.0 }).collect();
        let p0 = y.iter().sum::<f64>() / n as f64;
        let base = (p0 / (1.0 - p0)).ln();
        let mut f = vec![base; n];
        let mut class_trees = Vec::with_capacity(params.rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                let p = sigmoid(f[i]);
                grad[i] = p - y[i];
                hess[i] = (p * (1.0 - p)).max(1e-12);
            }
            let tree = fit_tree(features, &sorted, &grad, &hess, params, &mut feature_gain);
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += params.shrinkage * tree.predict(features.row(i));
            }
            class_trees.push(tree);
        }
        base_scores.push(base);
        trees.push(class_trees);
    }
    Ok(GbtFit { classifier: GbtClassifier { classes, base_scores, trees, shrinkage: params.shrinkage }, feature_gain })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn separable_data_is_learned() {
        let n = 200;
        let x = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { (i % 4) as f64 } else { ((i * 7) % 13) as f64 });
        let y: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let fit = fit(x.view(), &y, &GbtParams::default()).unwrap();
        assert_eq!(fit.classifier.predict_all(x.view()), y);
        assert!(fit.feature_gain[0] > 10.0 * fit.feature_gain[1]);
    }

    #[test]
    fn single_class_is_degenerate() {
        let x = Array2::<f64>::zeros((5, 1));
        assert!(matches!(fit(x.view(), &[2; 5], &GbtParams::default()), Err(MetricError::Degenerate(_))));
    }

    #[test]
    fn depth_bounds_the_tree() {
        let n = 64;
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let y: Vec<usize> = (0..n).map(|i| (i / 8) % 2).collect();
        let fit = fit(x.view(), &y, &GbtParams { rounds: 1, ..Default::default() }).unwrap();
        for ts in &fit.classifier.trees {
            assert!(ts[0].nodes.len() <= 7);
        }
    }
}
