use crate::error::{Error, Result};
use crate::scalar::Real;

/// Weighted graph given by its edges `(source, sink)`; the incidence matrix
/// `𝔻` has `+1` at the source and `−1` at the sink of every column.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph<T> {
    n: usize,
    edges: Vec<(usize, usize)>,
    weights: Vec<T>,
    sqrt_w: Vec<T>,
}

impl<T: Real> Graph<T> {
    /// Rejects self-loops, out-of-range nodes, non-positive weights and
    /// disconnected graphs.
    pub fn new(n: usize, edges: Vec<(usize, usize)>, weights: Vec<T>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidProblem("graph needs at least one node".into()));
        }
        if edges.len() != weights.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} edges but {} weights",
                edges.len(),
                weights.len()
            )));
        }
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (e, &(a, b)) in edges.iter().enumerate() {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidProblem(format!("edge {e} = ({a}, {b}) is invalid")));
            }
            if !(weights[e] > T::zero()) || !weights[e].is_finite() {
                return Err(Error::InvalidProblem(format!("edge {e} has non-positive weight")));
            }
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        }
        let root = find(&mut parent, 0);
        if (1..n).any(|v| find(&mut parent, v) != root) {
            return Err(Error::InvalidProblem("graph is not connected".into()));
        }
        Ok(Self {
            n,
            sqrt_w: weights.iter().map(|w| w.sqrt()).collect(),
            edges,
            weights,
        })
    }

    /// Complete graph `K_n` with unit weights, edges `(i, j)` for `i < j`.
    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        let weights = vec![T::one(); edges.len()];
        Self::new(n, edges, weights)
    }

    /// Single node, no edges.
    pub fn single() -> Self {
        Self::new(1, Vec::new(), Vec::new()).expect("single node graph")
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.n
    }

    /// Number of edges `N`.
    #[inline]
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    #[inline]
    pub(crate) fn sqrt_weights(&self) -> &[T] {
        &self.sqrt_w
    }

    /// Dense `n x N` incidence matrix, row-major.
    pub fn incidence(&self) -> Vec<T> {
        let m = self.edges.len();
        let mut d = vec![T::zero(); self.n * m];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            d[a * m + e] = T::one();
            d[b * m + e] = -T::one();
        }
        d
    }

    /// `W^{1/2} 𝔻ᵀ x`
    pub fn grad(&self, x: &[T], out: &mut [T]) {
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            out[e] = self.sqrt_w[e] * (x[a] - x[b]);
        }
    }

    /// `𝔻 W^{1/2} y`, the adjoint of [`grad`](Self::grad).
    pub fn div(&self, y: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|v| *v = T::zero());
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            let v = self.sqrt_w[e] * y[e];
            out[a] += v;
            out[b] -= v;
        }
    }
}
