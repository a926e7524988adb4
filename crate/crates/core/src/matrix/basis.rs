use crate::block::{check_dim, jacobi_eigen, packed_len, sym_basis_element, GenBlock, SymBlock};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetric matrices `L_1..L_N` defining the commutator gradient
/// `X ↦ (L_k X − X L_k)_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorBasis<T> {
    n: usize,
    elems: Vec<GenBlock<T>>,
}

impl<T: Real> OperatorBasis<T> {
    pub fn new(elems: Vec<SymBlock<T>>) -> Result<Self> {
        let n = elems
            .first()
            .map(|e| e.dim())
            .ok_or_else(|| Error::InvalidProblem("operator basis is empty".into()))?;
        check_dim(n)?;
        if elems.len() > 8 {
            return Err(Error::InvalidProblem(format!(
                "operator basis has {} elements, at most 8 supported",
                elems.len()
            )));
        }
        if elems.iter().any(|e| e.dim() != n) {
            return Err(Error::ShapeMismatch("basis elements differ in dimension".into()));
        }
        Ok(Self {
            n,
            elems: elems.iter().map(|e| e.to_full()).collect(),
        })
    }

    /// `L_1` with ones on its first row and column, `L_2 = diag(1, .., n−1, 0)`.
    pub fn default_for(n: usize) -> Result<Self> {
        check_dim(n)?;
        let mut l1 = SymBlock::zeros(n);
        for j in 0..n {
            l1.set(0, j, T::one());
        }
        let diag: Vec<T> = (0..n)
            .map(|i| if i + 1 < n { T::lit((i + 1) as f64) } else { T::zero() })
            .collect();
        Self::new(vec![l1, SymBlock::from_diag(&diag)])
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of basis elements `N`.
    #[inline]
    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    pub fn elements(&self) -> &[GenBlock<T>] {
        &self.elems
    }

    /// `(L_k X − X L_k)_k`; every output block is skew-symmetric.
    pub fn grad(&self, x: &SymBlock<T>) -> Vec<GenBlock<T>> {
        let xf = x.to_full();
        self.elems.iter().map(|l| GenBlock::commutator(l, &xf)).collect()
    }

    /// `Σ_k (L_k Y_k − Y_k L_k)`, the adjoint of [`grad`](Self::grad) on skew inputs.
    pub fn div(&self, y: &[GenBlock<T>]) -> Result<SymBlock<T>> {
        if y.len() != self.elems.len() || y.iter().any(|b| b.dim() != self.n) {
            return Err(Error::ShapeMismatch(format!(
                "expected {} blocks of size {}",
                self.elems.len(),
                self.n
            )));
        }
        let mut acc = GenBlock::zeros(self.n);
        for (l, yk) in self.elems.iter().zip(y) {
            acc = acc.add(&GenBlock::commutator(l, yk));
        }
        Ok(acc.sym_part())
    }

    /// Nullity of the gradient restricted to symmetric matrices.
    pub fn verify_kernel(&self) -> usize {
        let n = self.n;
        let s = packed_len(n);
        // Gram matrix GᵀG of the gradient in an orthonormal symmetric basis
        let cols: Vec<Vec<GenBlock<T>>> = (0..s).map(|a| self.grad(&sym_basis_element(n, a))).collect();
        let mut gram = vec![T::zero(); s * s];
        for a in 0..s {
            for b in 0..s {
                gram[a * s + b] = cols[a].iter().zip(&cols[b]).map(|(x, y)| x.inner(y)).sum();
            }
        }
        let scale = (0..s).map(|a| gram[a * s + a]).fold(T::zero(), T::max);
        let (vals, _) = jacobi_eigen(&mut gram, s);
        let tol = T::lit(1e-10) * scale.max(T::one());
        vals.iter().filter(|v| v.abs() <= tol).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> SymBlock<f64> {
        let mut b = SymBlock::zeros(n);
        for v in b.packed_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        b
    }

    fn random_skew(rng: &mut ChaCha8Rng, n: usize) -> GenBlock<f64> {
        let mut g = GenBlock::zeros(n);
        for v in g.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        g.minus_transpose()
    }

    #[test]
    fn default_basis_shape() {
        let b = OperatorBasis::<f64>::default_for(3).unwrap();
        let l1 = b.elements()[0];
        let l2 = b.elements()[1];
        assert_eq!(l1.as_slice()[..9], [1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(l2.as_slice()[..9], [1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn grad_of_identity_vanishes() {
        let b = OperatorBasis::<f64>::default_for(4).unwrap();
        for g in b.grad(&SymBlock::identity(4)) {
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn grad_small_example() {
        let b = OperatorBasis::<f64>::default_for(2).unwrap();
        let g = b.grad(&SymBlock::from_diag(&[0.0, 1.0]));
        assert_eq!(g[0].as_slice()[..4], [0.0, 1.0, -1.0, 0.0]);
        assert_eq!(g[1].max_abs(), 0.0);
    }

    #[test]
    fn div_small_example() {
        // L1 = [[1,1],[1,0]], Y1 = [[0,1],[-1,0]]: L1 Y1 − Y1 L1 = [[-2,1],[1,2]]
        let b = OperatorBasis::<f64>::default_for(2).unwrap();
        let y1 = GenBlock::from_row_major(2, &[0.0, 1.0, -1.0, 0.0]);
        let d = b.div(&[y1, GenBlock::zeros(2)]).unwrap();
        assert_eq!(d.packed(), &[-2.0, 1.0, 2.0]);
        assert_eq!(b.div(&[GenBlock::zeros(2); 2]).unwrap(), SymBlock::zeros(2));
        assert!(b.div(&[y1]).is_err());
    }

    #[test]
    fn grad_is_skew_and_div_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in 1..=5 {
            let b = OperatorBasis::<f64>::default_for(n).unwrap();
            for _ in 0..20 {
                let x = random_sym(&mut rng, n);
                let y: Vec<_> = (0..2).map(|_| random_skew(&mut rng, n)).collect();
                let gx = b.grad(&x);
                for g in &gx {
                    assert!(g.add(&g.transpose()).max_abs() < 1e-14);
                }
                let lhs: f64 = gx.iter().zip(&y).map(|(a, c)| a.inner(c)).sum();
                let rhs = x.inner(&b.div(&y).unwrap());
                assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
            }
        }
    }

    #[test]
    fn kernel_of_default_basis_is_identity() {
        for n in 1..=6 {
            assert_eq!(
                OperatorBasis::<f64>::default_for(n).unwrap().verify_kernel(),
                1,
                "n = {n}"
            );
        }
    }

    #[test]
    fn identity_basis_has_full_kernel() {
        for n in 1..=4 {
            let b = OperatorBasis::<f64>::new(vec![SymBlock::identity(n)]).unwrap();
            assert_eq!(b.verify_kernel(), packed_len(n));
        }
    }
}
