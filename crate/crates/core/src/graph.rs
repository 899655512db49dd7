//! Undirected weighted graphs, symmetric normalization and kNN construction.

use rand::Rng as _;
use thiserror::Error;

use crate::rng::SeededRng;
use crate::tensor::{Matrix, TensorError};

/// Entrywise symmetry tolerance for adjacency matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("adjacency must be square, got {0:?}")]
    NotSquare((usize, usize)),
    #[error("adjacency is not symmetric at ({i}, {j}): |difference| = {diff:e}")]
    Asymmetric { i: usize, j: usize, diff: f64 },
    #[error("negative edge weight {value} at ({i}, {j})")]
    Negative { i: usize, j: usize, value: f64 },
    #[error("nonzero diagonal entry {value} at node {i}")]
    SelfLoop { i: usize, value: f64 },
    #[error("non-finite value at ({i}, {j})")]
    NonFinite { i: usize, j: usize },
    #[error("edge ({src}, {dst}) out of range for {n} nodes")]
    EdgeOutOfRange { src: usize, dst: usize, n: usize },
    #[error("kNN needs k < n (k = {k}, n = {n})")]
    TooManyNeighbors { k: usize, n: usize },
    #[error("kNN bandwidth must be positive and finite, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Symmetric non-negative adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Matrix,
}

impl Graph {
    pub fn new(adjacency: Matrix) -> Result<Self, GraphError> {
        if !adjacency.is_square() {
            return Err(GraphError::NotSquare(adjacency.shape()));
        }
        let n = adjacency.rows();
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.get(i, j);
                if !v.is_finite() {
                    return Err(GraphError::NonFinite { i, j });
                }
                if v < 0.0 {
                    return Err(GraphError::Negative { i, j, value: v });
                }
                if j > i {
                    let diff = (v - adjacency.get(j, i)).abs();
                    if diff > SYMMETRY_TOL {
                        return Err(GraphError::Asymmetric { i, j, diff });
                    }
                }
            }
            let d = adjacency.get(i, i);
            if d != 0.0 {
                return Err(GraphError::SelfLoop { i, value: d });
            }
        }
        Ok(Self { adjacency })
    }

    /// Builds an undirected graph from an edge list. Both directions map to
    /// one edge, duplicates keep the largest weight and self-edges are
    /// dropped.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let mut a = Matrix::zeros(n, n);
        for &(src, dst, w) in edges {
            if src >= n || dst >= n {
                return Err(GraphError::EdgeOutOfRange { src, dst, n });
            }
            if !w.is_finite() {
                return Err(GraphError::NonFinite { i: src, j: dst });
            }
            if w < 0.0 {
                return Err(GraphError::Negative {
                    i: src,
                    j: dst,
                    value: w,
                });
            }
            if src == dst {
                continue;
            }
            let w = w.max(a.get(src, dst));
            a.set(src, dst, w);
            a.set(dst, src, w);
        }
        Ok(Self { adjacency: a })
    }

    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }

    pub fn adjacency(&self) -> &Matrix {
        &self.adjacency
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.adjacency.row(i).iter().sum()).collect()
    }

    /// Undirected edges `(i, j, w)` with `i < j` and `w > 0`, in row order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency.get(i, j);
                if w > 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn normalize(&self) -> NormalizedGraph {
        normalize(self)
    }
}

/// `Â = D^{-1/2} A D^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGraph {
    a_hat: Matrix,
}

impl NormalizedGraph {
    pub fn n(&self) -> usize {
        self.a_hat.rows()
    }

    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    pub fn into_matrix(self) -> Matrix {
        self.a_hat
    }
}

/// Symmetric normalization. Isolated nodes get a zero row and column.
pub fn normalize(g: &Graph) -> NormalizedGraph {
    let inv_sqrt: Vec<f64> = g
        .degrees()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let a = g.adjacency();
    let a_hat = Matrix::from_fn(g.n(), g.n(), |i, j| a.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
    NormalizedGraph { a_hat }
}

/// Gaussian-weighted kNN graph, symmetrized by elementwise max.
///
/// Each node links to its `k` nearest neighbours by Euclidean distance
/// (ties broken by lower index) with weight `exp(−dist² / 2σ²)`. With
/// `sigma = None` the bandwidth is the mean distance over all selected
/// neighbour pairs (1.0 if that mean is zero).
pub fn knn_graph(features: &Matrix, k: usize, sigma: Option<f64>) -> Result<Graph, GraphError> {
    let n = features.rows();
    if k >= n {
        return Err(GraphError::TooManyNeighbors { k, n });
    }
    for i in 0..n {
        for (j, v) in features.row(i).iter().enumerate() {
            if !v.is_finite() {
                return Err(GraphError::NonFinite { i, j });
            }
        }
    }
    if let Some(s) = sigma {
        if !(s > 0.0 && s.is_finite()) {
            return Err(GraphError::BadSigma(s));
        }
    }
    let sq_dist = |i: usize, j: usize| -> f64 {
        features
            .row(i)
            .iter()
            .zip(features.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    };
    let mut picks: Vec<(usize, usize, f64)> = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut cands: Vec<(f64, usize)> =
            (0..n).filter(|&j| j != i).map(|j| (sq_dist(i, j), j)).collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        picks.extend(cands.into_iter().take(k).map(|(d2, j)| (i, j, d2)));
    }
    let sigma = match sigma {
        Some(s) => s,
        None if picks.is_empty() => 1.0,
        None => {
            let mean = picks.iter().map(|p| p.2.sqrt()).sum::<f64>() / picks.len() as f64;
            if mean > 0.0 {
                mean
            } else {
                1.0
            }
        }
    };
    let edges: Vec<(usize, usize, f64)> = picks
        .into_iter()
        .map(|(i, j, d2)| (i, j, (-d2 / (2.0 * sigma * sigma)).exp()))
        .collect();
    Graph::from_edges(n, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
}

/// Dominant eigenvalue magnitude by power iteration from a fixed-seed start
/// vector. Stops early once successive estimates agree to 1e-13 relative.
pub fn spectral_radius_estimate(m: &Matrix, iterations: usize) -> Result<SpectralEstimate, GraphError> {
    if !m.is_square() {
        return Err(GraphError::NotSquare(m.shape()));
    }
    let n = m.rows();
    if n == 0 {
        return Ok(SpectralEstimate {
            value: 0.0,
            iterations: 0,
        });
    }
    let mut rng = SeededRng::seed_from(0x005e_ed0f_5bec);
    let mut x = Matrix::from_fn(n, 1, |_, _| rng.random_range(0.5..1.5));
    let norm = x.frobenius_norm();
    x = x.scale(1.0 / norm);
    let mut estimate = 0.0;
    for it in 1..=iterations.max(1) {
        let y = m.matmul(&x)?;
        let next = y.frobenius_norm();
        if next == 0.0 {
            return Ok(SpectralEstimate {
                value: 0.0,
                iterations: it,
            });
        }
        x = y.scale(1.0 / next);
        let converged = (next - estimate).abs() <= 1e-13 * next;
        estimate = next;
        if converged {
            return Ok(SpectralEstimate {
                value: estimate,
                iterations: it,
            });
        }
    }
    Ok(SpectralEstimate {
        value: estimate,
        iterations: iterations.max(1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn eigen_radius(m: &Matrix) -> f64 {
        let d = DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
        d.symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(0.0f64, |a, v| a.max(v.abs()))
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..12).prop_flat_map(|n| {
            proptest::collection::vec((0.0f64..1.0, proptest::bool::weighted(0.4)), n * n).prop_map(
                move |cells| {
                    let mut edges = Vec::new();
                    for i in 0..n {
                        for j in (i + 1)..n {
                            let (w, on) = cells[i * n + j];
                            if on {
                                edges.push((i, j, w + 0.01));
                            }
                        }
                    }
                    Graph::from_edges(n, &edges).unwrap()
                },
            )
        })
    }

    #[test]
    fn unit_degree_pair_is_unchanged() {
        let g = Graph::new(Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]])).unwrap();
        assert_eq!(normalize(&g).a_hat(), g.adjacency());
    }

    #[test]
    fn path_graph_normalization() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let a = normalize(&g);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = Matrix::from_rows(&[[0.0, h, 0.0], [h, 0.0, h], [0.0, h, 0.0]]);
        assert!(a.a_hat().sub(&expected).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn isolated_node_has_zero_row_and_column() {
        let g = Graph::from_edges(3, &[(0, 1, 2.0)]).unwrap();
        let a = normalize(&g);
        for k in 0..3 {
            assert_eq!(a.a_hat().get(2, k), 0.0);
            assert_eq!(a.a_hat().get(k, 2), 0.0);
        }
        assert!(a.a_hat().is_finite());
    }

    #[test]
    fn invariant_violations_are_rejected() {
        let asym = Matrix::from_rows(&[[0.0, 1.0], [0.5, 0.0]]);
        assert!(matches!(Graph::new(asym), Err(GraphError::Asymmetric { .. })));
        let neg = Matrix::from_rows(&[[0.0, -1.0], [-1.0, 0.0]]);
        assert!(matches!(Graph::new(neg), Err(GraphError::Negative { .. })));
        let diag = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(Graph::new(diag), Err(GraphError::SelfLoop { .. })));
        assert!(matches!(
            Graph::from_edges(2, &[(0, 5, 1.0)]),
            Err(GraphError::EdgeOutOfRange { .. })
        ));
    }

    #[test]
    fn identical_rows_get_unit_weight() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0], [5.0, 5.0]]);
        let g = knn_graph(&x, 1, Some(0.7)).unwrap();
        assert_eq!(g.adjacency().get(0, 1), 1.0);
    }

    #[test]
    fn collinear_points_symmetrize_far_node() {
        // Distances: |0-1| = 1, |0-10| = 10, |1-10| = 9.
        let x = Matrix::from_rows(&[[0.0], [1.0], [10.0]]);
        let g = knn_graph(&x, 1, Some(1.0)).unwrap();
        let a = g.adjacency();
        assert!(a.get(0, 1) > 0.0);
        assert_eq!(a.get(0, 2), 0.0);
        assert!((a.get(1, 2) - (-81.0f64 / 2.0).exp()).abs() < 1e-30);
        assert_eq!(a.get(2, 1), a.get(1, 2));
    }

    #[test]
    fn knn_rejects_bad_parameters() {
        let x = Matrix::from_rows(&[[0.0], [1.0]]);
        assert!(matches!(knn_graph(&x, 2, None), Err(GraphError::TooManyNeighbors { .. })));
        assert!(matches!(knn_graph(&x, 1, Some(0.0)), Err(GraphError::BadSigma(_))));
        let bad = Matrix::from_rows(&[[0.0], [f64::NAN]]);
        assert!(matches!(knn_graph(&bad, 1, None), Err(GraphError::NonFinite { .. })));
    }

    #[test]
    fn spectral_radius_simple_cases() {
        let est = spectral_radius_estimate(&Matrix::identity(4), 100).unwrap();
        assert!((est.value - 1.0).abs() < 1e-6);
        let est = spectral_radius_estimate(&Matrix::diag(&[0.3, 0.9]), 200).unwrap();
        assert!((est.value - 0.9).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn normalization_is_scale_free(g in arb_graph(), c in 0.01f64..100.0) {
            let scaled = Graph::new(g.adjacency().scale(c)).unwrap();
            let diff = normalize(&scaled).a_hat().sub(normalize(&g).a_hat()).unwrap().max_abs();
            prop_assert!(diff <= 1e-12);
        }

        #[test]
        fn normalized_graph_radius_at_most_one(g in arb_graph()) {
            let a = normalize(&g);
            prop_assert!(a.a_hat().asymmetry() <= 1e-12);
            let est = spectral_radius_estimate(a.a_hat(), 2000).unwrap();
            prop_assert!(est.value <= 1.0 + 1e-6);
            prop_assert!(eigen_radius(a.a_hat()) <= 1.0 + 1e-6);
        }

        #[test]
        fn knn_output_is_a_valid_graph(
            cells in proptest::collection::vec(-5.0f64..5.0, 30),
            k in 1usize..9,
        ) {
            let x = Matrix::from_vec(10, 3, cells).unwrap();
            let g = knn_graph(&x, k, None).unwrap();
            prop_assert!(Graph::new(g.adjacency().clone()).is_ok());
        }
    }
}
