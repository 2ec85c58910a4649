//! Pairwise entanglement between factors.
//!
//! The importance matrix is read as a weighted bipartite graph between
//! factors and latents. The score of a factor pair is the largest threshold
//! at which the two factors are still connected when only edges of at least
//! that weight are kept, i.e. the bottleneck of the widest path between them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::ImportanceMatrix;

/// Disjoint sets with path compression and union by size; each root also
/// keeps the list of factor nodes in its set.
struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    factors: Vec<Vec<usize>>,
}

impl DisjointSets {
    fn new(nodes: usize, factor_count: usize) -> Self {
        Self {
            parent: (0..nodes).collect(),
            size: vec![1; nodes],
            factors: (0..nodes).map(|i| if i < factor_count { vec![i] } else { Vec::new() }).collect(),
        }
    }

    fn find(&mut self, x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        let mut cur = x;
        while self.parent[cur] != root {
            let next = self.parent[cur];
            self.parent[cur] = root;
            cur = next;
        }
        root
    }

    /// Merges the sets of `a` and `b`; returns the factor lists of the two
    /// sets as they were before merging, or `None` if already joined.
    fn union(&mut self, a: usize, b: usize) -> Option<(Vec<usize>, Vec<usize>)> {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return None;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        let moved = std::mem::take(&mut self.factors[rb]);
        let before = (self.factors[ra].clone(), moved.clone());
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.factors[ra].extend(moved);
        Some(before)
    }
}

/// Symmetric `factors × factors` matrix of merge thresholds; the diagonal and
/// pairs that never connect through a positive edge are 0.
pub fn pairwise_entanglement(importance: &ImportanceMatrix) -> Array2<f64> {
    let w = &importance.weights;
    let (f, l) = w.dim();
    let mut edges: Vec<(f64, usize, usize)> =
        w.indexed_iter().filter(|(_, &v)| v > 0.0).map(|((i, j), &v)| (v, i, j)).collect();
    // Descending weight; equal weights keep (row, col) order.
    edges.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut sets = DisjointSets::new(f + l, f);
    let mut scores = Array2::zeros((f, f));
    for (weight, factor, latent) in edges {
        if let Some((left, right)) = sets.union(factor, f + latent) {
            for &a in &left {
                for &b in &right {
                    scores[[a, b]] = weight;
                    scores[[b, a]] = weight;
                }
            }
        }
    }
    scores
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairwiseSummary {
    pub correlated: f64,
    /// Median over all other unordered pairs; `None` with fewer than three
    /// factors.
    pub median_others: Option<f64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

pub fn pairwise_summary(pairs: &Array2<f64>, correlated: (usize, usize)) -> PairwiseSummary {
    let (a, b) = correlated;
    let n = pairs.nrows();
    let mut others = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if (i, j) != (a.min(b), a.max(b)) {
                others.push(pairs[[i, j]]);
            }
        }
    }
    PairwiseSummary { correlated: pairs[[a, b]], median_others: median(&mut others) }
}

/// CSV with a header row of factor names and one named row per factor.
pub fn pair_matrix_csv(pairs: &Array2<f64>, names: &[&str]) -> String {
    let mut out = String::from("factor");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (i, row) in pairs.rows().into_iter().enumerate() {
        out.push_str(names[i]);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::ImportanceSource;
    use ndarray::array;

    fn scores(w: Array2<f64>) -> Array2<f64> {
        pairwise_entanglement(&ImportanceMatrix::new(w, ImportanceSource::TreeClassifier).unwrap())
    }

    #[test]
    fn examples() {
        assert_eq!(scores(array![[1.0, 0.0], [0.0, 1.0]])[[0, 1]], 0.0);
        assert_eq!(scores(array![[0.9, 0.1], [0.1, 0.9]])[[0, 1]], 0.1);
        assert_eq!(scores(array![[0.5, 0.5], [0.5, 0.5]])[[0, 1]], 0.5);
    }

    #[test]
    fn chains_take_the_bottleneck() {
        // f0 - z0 - f1 at 0.6, f1 - z1 - f2 at 0.3.
        let s = scores(array![[0.8, 0.0], [0.6, 0.7], [0.0, 0.3]]);
        assert_eq!(s[[0, 1]], 0.6);
        assert_eq!(s[[1, 2]], 0.3);
        assert_eq!(s[[0, 2]], 0.3);
        assert_eq!(s, s.t());
    }

    #[test]
    fn summary_examples() {
        let p = array![[0.0, 0.4, 0.1], [0.4, 0.0, 0.2], [0.1, 0.2, 0.0]];
        let s = pairwise_summary(&p, (0, 1));
        assert_eq!(s.correlated, 0.4);
        assert!((s.median_others.unwrap() - 0.15).abs() < 1e-15);
        assert_eq!(pairwise_summary(&p, (1, 0)), s);
        let two = array![[0.0, 0.3], [0.3, 0.0]];
        assert_eq!(pairwise_summary(&two, (0, 1)), PairwiseSummary { correlated: 0.3, median_others: None });
    }

    #[test]
    fn csv_layout() {
        let p = array![[0.0, 0.5], [0.5, 0.0]];
        assert_eq!(pair_matrix_csv(&p, &["a", "b"]), "factor,a,b\na,0,0.5\nb,0.5,0\n");
    }
}
