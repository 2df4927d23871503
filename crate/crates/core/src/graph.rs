//! Weighted undirected graphs stored as upper-triangle edge weights.
//!
//! A [`LaplacianGraph`] keeps the flat weight vector as the source of truth
//! and derives the combinatorial Laplacian `L = D - W` from it. Edges are
//! ordered row-major over the strict upper triangle, see [`EdgePairIndex`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{KmglError, Result};
use crate::seed::rng_from_seed;

/// Bijection between node pairs `(i, j)` with `i < j` and flat edge indices.
///
/// Pairs are enumerated row by row: `(0,1), (0,2), ..., (0,n-1), (1,2), ...`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgePairIndex {
    n: usize,
}

impl EdgePairIndex {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    /// Number of unordered pairs, `n(n-1)/2`.
    pub fn len(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index of pair `(i, j)`. The pair may be given in either order.
    ///
    /// Panics if `i == j` or either node is out of range.
    pub fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        assert!(i != j && j < self.n, "invalid pair ({i}, {j}) for n = {}", self.n);
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`index`](Self::index).
    pub fn pair(&self, index: usize) -> (usize, usize) {
        assert!(index < self.len(), "edge index {index} out of range");
        let mut row = 0;
        let mut start = 0;
        loop {
            let row_len = self.n - row - 1;
            if index < start + row_len {
                return (row, row + 1 + index - start);
            }
            start += row_len;
            row += 1;
        }
    }

    /// All pairs in flat-index order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| (i + 1..self.n).map(move |j| (i, j)))
    }
}

/// Valid combinatorial graph Laplacian with its generating edge weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianGraph {
    n: usize,
    weights: Vec<f64>,
    laplacian: DMatrix<f64>,
    normalized: bool,
}

impl LaplacianGraph {
    /// Builds `L = D - W` from upper-triangle weights.
    pub fn from_weights(weights: Vec<f64>, n: usize) -> Result<Self> {
        let index = EdgePairIndex::new(n);
        if weights.len() != index.len() {
            return Err(KmglError::Dimension(format!(
                "expected {} edge weights for n = {n}, got {}",
                index.len(),
                weights.len()
            )));
        }
        if let Some((i, &w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(KmglError::InvalidWeight { index: i, value: w });
        }

        let mut laplacian = DMatrix::zeros(n, n);
        for ((i, j), &w) in index.pairs().zip(&weights) {
            laplacian[(i, j)] = -w;
            laplacian[(j, i)] = -w;
            laplacian[(i, i)] += w;
            laplacian[(j, j)] += w;
        }
        Ok(Self {
            n,
            weights,
            laplacian,
            normalized: false,
        })
    }

    /// Reads weights from a symmetric adjacency matrix with zero diagonal.
    pub fn from_adjacency(adjacency: &DMatrix<f64>) -> Result<Self> {
        let n = adjacency.nrows();
        if adjacency.ncols() != n {
            return Err(KmglError::Dimension(format!(
                "adjacency must be square, got {}x{}",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        let index = EdgePairIndex::new(n);
        let mut weights = Vec::with_capacity(index.len());
        for (i, j) in index.pairs() {
            let (a, b) = (adjacency[(i, j)], adjacency[(j, i)]);
            let tol = 1e-10 * (1.0 + a.abs().max(b.abs()));
            if (a - b).abs() > tol {
                return Err(KmglError::Dimension(format!(
                    "adjacency is not symmetric at ({i}, {j}): {a} vs {b}"
                )));
            }
            weights.push(0.5 * (a + b));
        }
        Self::from_weights(weights, n)
    }

    /// Uniform complete graph with `trace(L) = n`.
    pub fn uniform(n: usize) -> Result<Self> {
        let pairs = EdgePairIndex::new(n).len();
        if pairs == 0 {
            return Err(KmglError::DegenerateGraph(format!(
                "a graph on {n} node(s) has no edges"
            )));
        }
        let w = n as f64 / (2.0 * pairs as f64);
        let mut g = Self::from_weights(vec![w; pairs], n)?;
        g.normalized = true;
        Ok(g)
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn edge_index(&self) -> EdgePairIndex {
        EdgePairIndex::new(self.n)
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.laplacian[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.laplacian.trace()
    }

    /// `W` as a dense symmetric matrix.
    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for ((i, j), &w) in self.edge_index().pairs().zip(&self.weights) {
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
        a
    }

    /// `‖L‖_F² = Σ_i d_i² + 2 Σ_e w_e²`.
    pub fn frobenius_norm_sq(&self) -> f64 {
        frobenius_sq_from_weights(&self.weights, self.n)
    }

    /// Smoothness `xᵀLx` evaluated edge-wise as `Σ_{i<j} w_ij (x_i - x_j)²`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> f64 {
        self.edge_index()
            .pairs()
            .zip(&self.weights)
            .map(|((i, j), &w)| {
                let d = x[i] - x[j];
                w * d * d
            })
            .sum()
    }

    pub fn edge_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }

    /// Rescales weights so that `trace(L) = n`.
    pub fn normalize_trace(&self) -> Result<Self> {
        let total: f64 = self.weights.iter().sum();
        if total <= 0.0 {
            return Err(KmglError::DegenerateGraph(
                "cannot normalize a graph without edges".into(),
            ));
        }
        let scale = self.n as f64 / (2.0 * total);
        let weights = self.weights.iter().map(|w| w * scale).collect();
        let mut g = Self::from_weights(weights, self.n)?;
        g.normalized = true;
        Ok(g)
    }

    pub(crate) fn mark_normalized(mut self) -> Self {
        self.normalized = true;
        self
    }
}

/// `Σ_i d_i² + 2 Σ_e w_e²` for an upper-triangle weight vector.
pub(crate) fn frobenius_sq_from_weights(weights: &[f64], n: usize) -> f64 {
    let mut degrees = vec![0.0; n];
    let mut off = 0.0;
    for ((i, j), &w) in EdgePairIndex::new(n).pairs().zip(weights) {
        degrees[i] += w;
        degrees[j] += w;
        off += w * w;
    }
    degrees.iter().map(|d| d * d).sum::<f64>() + 2.0 * off
}

/// Builds a Laplacian from upper-triangle weights.
pub fn laplacian_from_weights(weights: &[f64], n: usize) -> Result<LaplacianGraph> {
    LaplacianGraph::from_weights(weights.to_vec(), n)
}

/// Rescales a graph so that `trace(L) = n`.
pub fn normalize_trace(g: &LaplacianGraph) -> Result<LaplacianGraph> {
    g.normalize_trace()
}

const MAX_ER_ATTEMPTS: u64 = 100;

/// Trace-normalized Erdős–Rényi graph with binary edges drawn with
/// probability `p`. A draw with no edges is retried with `seed + 1`, up to
/// 100 attempts.
pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<LaplacianGraph> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(KmglError::Config(format!(
            "edge probability must lie in (0, 1], got {p}"
        )));
    }
    if n < 2 {
        return Err(KmglError::Dimension(format!(
            "an Erdős–Rényi graph needs at least 2 nodes, got {n}"
        )));
    }
    let pairs = EdgePairIndex::new(n).len();
    for attempt in 0..MAX_ER_ATTEMPTS {
        let mut rng = rng_from_seed(seed.wrapping_add(attempt));
        let weights: Vec<f64> = (0..pairs)
            .map(|_| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
            .collect();
        if weights.iter().any(|&w| w > 0.0) {
            return LaplacianGraph::from_weights(weights, n)?.normalize_trace();
        }
    }
    Err(KmglError::DegenerateGraph(format!(
        "no edges drawn after {MAX_ER_ATTEMPTS} attempts (n = {n}, p = {p})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;

    fn brute_force_laplacian(weights: &[f64], n: usize) -> DMatrix<f64> {
        let mut w = DMatrix::zeros(n, n);
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                w[(i, j)] = weights[k];
                w[(j, i)] = weights[k];
                k += 1;
            }
        }
        let mut l = -w.clone();
        for i in 0..n {
            l[(i, i)] = w.row(i).sum();
        }
        l
    }

    #[test]
    fn single_edge() {
        let g = laplacian_from_weights(&[1.0], 2).unwrap();
        assert_eq!(g.laplacian(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn empty_graph_is_zero() {
        let g = laplacian_from_weights(&[0.0; 3], 3).unwrap();
        assert_eq!(g.laplacian(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn three_node_weights() {
        let g = laplacian_from_weights(&[1.0, 2.0, 3.0], 3).unwrap();
        let l = g.laplacian();
        assert_eq!(l, &brute_force_laplacian(&[1.0, 2.0, 3.0], 3));
        assert_eq!([l[(0, 0)], l[(1, 1)], l[(2, 2)]], [3.0, 4.0, 5.0]);
        assert_eq!(l[(0, 1)], -1.0);
        assert_eq!(l[(0, 2)], -2.0);
        assert_eq!(l[(1, 2)], -3.0);
    }

    #[test]
    fn rejects_negative_weight_and_bad_length() {
        assert!(matches!(
            laplacian_from_weights(&[1.0, -0.5, 0.0], 3),
            Err(KmglError::InvalidWeight { index: 1, .. })
        ));
        assert!(matches!(
            laplacian_from_weights(&[1.0, 1.0], 3),
            Err(KmglError::Dimension(_))
        ));
    }

    #[test]
    fn normalize_complete_graph() {
        let g = laplacian_from_weights(&[5.0; 3], 3).unwrap().normalize_trace().unwrap();
        for &w in g.weights() {
            assert!((w - 0.5).abs() < 1e-15);
        }
        for d in g.degrees() {
            assert!((d - 1.0).abs() < 1e-15);
        }
        assert!((g.trace() - 3.0).abs() < 1e-15);
        assert!(g.is_normalized());
    }

    #[test]
    fn normalize_single_edge() {
        let g = laplacian_from_weights(&[4.0], 2).unwrap().normalize_trace().unwrap();
        assert_eq!(g.weights(), &[1.0]);
        assert_eq!(g.trace(), 2.0);
    }

    #[test]
    fn normalize_path_graph() {
        // path 0-1-2-3: pairs (0,1),(0,2),(0,3),(1,2),(1,3),(2,3)
        let w = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0];
        let raw = laplacian_from_weights(&w, 4).unwrap();
        let oracle_trace = brute_force_laplacian(&w, 4).trace();
        assert_eq!(oracle_trace, 6.0);
        let g = raw.normalize_trace().unwrap();
        for (a, b) in g.weights().iter().zip(&w) {
            assert!((a - b * 4.0 / oracle_trace).abs() < 1e-15);
        }
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn normalize_rejects_empty() {
        let g = laplacian_from_weights(&[0.0; 6], 4).unwrap();
        assert!(matches!(g.normalize_trace(), Err(KmglError::DegenerateGraph(_))));
    }

    #[test]
    fn erdos_renyi_full_probability() {
        let g = erdos_renyi(4, 1.0, 3).unwrap();
        for &w in g.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn erdos_renyi_is_deterministic() {
        let a = erdos_renyi(20, 0.3, 42).unwrap();
        let b = erdos_renyi(20, 0.3, 42).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!((a.trace() - 20.0).abs() < 1e-8);
    }

    #[test]
    fn erdos_renyi_edge_count_matches_binomial_mean() {
        let draws = 10_000u64;
        let pairs = 190.0;
        let counts: Vec<f64> = (0..draws)
            .map(|s| erdos_renyi(20, 0.3, s * 1000).unwrap().edge_count() as f64)
            .collect();
        let mean = counts.iter().sum::<f64>() / draws as f64;
        let se = (pairs * 0.3 * 0.7 / draws as f64).sqrt();
        assert!((mean - 57.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn erdos_renyi_rejects_bad_probability() {
        assert!(erdos_renyi(5, 0.0, 1).is_err());
        assert!(erdos_renyi(5, 1.5, 1).is_err());
    }

    proptest! {
        #[test]
        fn pair_index_round_trip(n in 2usize..40, seed in any::<u64>()) {
            let idx = EdgePairIndex::new(n);
            let k = (seed as usize) % idx.len();
            let (i, j) = idx.pair(k);
            prop_assert!(i < j);
            prop_assert_eq!(idx.index(i, j), k);
            prop_assert_eq!(idx.pairs().nth(k), Some((i, j)));
        }

        #[test]
        fn laplacian_invariants(
            n in 2usize..9,
            raw in proptest::collection::vec(0.0f64..3.0, 36),
            x in proptest::collection::vec(-5.0f64..5.0, 9),
        ) {
            let pairs = EdgePairIndex::new(n).len();
            let w: Vec<f64> = raw[..pairs].iter().map(|v| if *v < 1.0 { 0.0 } else { *v }).collect();
            let g = laplacian_from_weights(&w, n).unwrap();
            let l = g.laplacian();
            prop_assert_eq!(l, &l.transpose());
            for i in 0..n {
                prop_assert!(l.row(i).sum().abs() < 1e-10);
                for j in 0..n {
                    if i != j {
                        prop_assert!(l[(i, j)] <= 0.0);
                        prop_assert_eq!(l[(i, j)], -w[g.edge_index().index(i, j)]);
                    }
                }
            }
            let x = DVector::from_column_slice(&x[..n]);
            let matrix_form = (x.transpose() * l * &x)[(0, 0)];
            let edge_form = g.quadratic_form(&x);
            prop_assert!((matrix_form - edge_form).abs() <= 1e-8 * (1.0 + edge_form.abs()));
            let eig = SymmetricEigen::new(l.clone());
            prop_assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-8));
            prop_assert!((g.frobenius_norm_sq() - l.norm_squared()).abs() < 1e-9 * (1.0 + l.norm_squared()));

            if w.iter().any(|&v| v > 0.0) {
                let once = g.normalize_trace().unwrap();
                let twice = once.normalize_trace().unwrap();
                prop_assert!((once.trace() - n as f64).abs() < 1e-8);
                for (a, b) in once.weights().iter().zip(twice.weights()) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }
}
