use log::debug;

use super::sparse::SparseSym;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Relative diagonal shifts tried after a breakdown of the unshifted factorization.
pub const IC_SHIFTS: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

/// Zero fill-in incomplete Cholesky factor `L` (same pattern as the input).
#[derive(Clone, Debug)]
pub struct IcFactor<T> {
    l: SparseSym<T>,
    shift: T,
}

/// Applies `z = M⁻¹ r` for a symmetric positive-definite preconditioner `M`.
pub trait Preconditioner<T> {
    fn apply(&self, r: &[T], z: &mut [T]);

    /// Removes components outside the space the iteration works in (no-op by default).
    fn project(&self, _r: &mut [T]) {}
}

/// `M = I`.
pub struct IdentityPreconditioner;

impl<T: Real> Preconditioner<T> for IdentityPreconditioner {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

impl<T: Real> IcFactor<T> {
    /// Relative diagonal shift `alpha` that was needed (0 when none).
    pub fn shift(&self) -> T {
        self.shift
    }

    pub fn factor(&self) -> &SparseSym<T> {
        &self.l
    }

    /// Dense lower-triangular factor (tests and diagnostics).
    pub fn to_dense_lower(&self) -> Vec<T> {
        let n = self.l.dim();
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            let (cols, vals) = self.l.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[i * n + j] = v;
            }
        }
        a
    }
}

impl<T: Real> Preconditioner<T> for IcFactor<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        let n = self.l.dim();
        // forward: L y = r
        for i in 0..n {
            let (cols, vals) = self.l.row(i);
            let last = cols.len() - 1;
            let mut s = r[i];
            for k in 0..last {
                s -= vals[k] * z[cols[k]];
            }
            z[i] = s / vals[last];
        }
        // backward: Lᵀ z = y, column sweep over the rows of L
        for i in (0..n).rev() {
            let (cols, vals) = self.l.row(i);
            let last = cols.len() - 1;
            let zi = z[i] / vals[last];
            z[i] = zi;
            for k in 0..last {
                z[cols[k]] -= vals[k] * zi;
            }
        }
    }
}

fn try_factor<T: Real>(s: &SparseSym<T>, alpha: T) -> Option<SparseSym<T>> {
    let (row_ptr, cols, vals) = s.parts();
    let n = s.dim();
    let mut lv = vals.to_vec();
    for i in 0..n {
        let start = row_ptr[i];
        let end = row_ptr[i + 1];
        for e in start..end {
            let k = cols[e];
            // dot of row i (cols < k) with row k (cols < k), both sorted
            let mut acc = T::zero();
            let (mut a, a_end) = (start, e);
            let (mut b, b_end) = (row_ptr[k], row_ptr[k + 1] - 1);
            while a < a_end && b < b_end {
                let (ca, cb) = (cols[a], cols[b]);
                if ca == cb {
                    acc += lv[a] * lv[b];
                    a += 1;
                    b += 1;
                } else if ca < cb {
                    a += 1;
                } else {
                    b += 1;
                }
            }
            if k == i {
                let d = vals[e] * (T::one() + alpha) - acc;
                if !(d > T::zero()) || !d.is_finite() {
                    return None;
                }
                lv[e] = d.sqrt();
            } else {
                let lkk = lv[row_ptr[k + 1] - 1];
                lv[e] = (vals[e] - acc) / lkk;
            }
        }
    }
    Some(SparseSym::from_parts(n, row_ptr.to_vec(), cols.to_vec(), lv))
}

/// Zero fill-in incomplete Cholesky. On a non-positive pivot the
/// factorization restarts with the diagonal scaled by `1 + alpha` for each
/// `alpha` in [`IC_SHIFTS`], returning the first success.
pub fn ic_factorize<T: Real>(s: &SparseSym<T>) -> Result<IcFactor<T>> {
    if let Some(l) = try_factor(s, T::zero()) {
        return Ok(IcFactor { l, shift: T::zero() });
    }
    for &alpha in &IC_SHIFTS {
        let alpha = T::lit(alpha);
        if let Some(l) = try_factor(s, alpha) {
            debug!("incomplete Cholesky needed diagonal shift {alpha}");
            return Ok(IcFactor { l, shift: alpha });
        }
    }
    Err(Error::FactorizationFailed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_cholesky(a: &[f64], n: usize) -> Vec<f64> {
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            l[j * n + j] = d.sqrt();
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / l[j * n + j];
            }
        }
        l
    }

    #[test]
    fn identity_factor_is_identity() {
        let f = ic_factorize(&SparseSym::<f64>::identity(5)).unwrap();
        assert_eq!(f.shift(), 0.0);
        assert_eq!(f.factor(), &SparseSym::identity(5));
    }

    #[test]
    fn dense_spd_gives_exact_cholesky() {
        let n = 6;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = 1.0 / (1.0 + (i as f64 - j as f64).abs()) + if i == j { n as f64 } else { 0.0 };
            }
        }
        let f = ic_factorize(&SparseSym::from_dense(&a, n).unwrap()).unwrap();
        let exact = dense_cholesky(&a, n);
        for (x, y) in f.to_dense_lower().iter().zip(&exact) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn tridiagonal_laplacian_has_no_fill() {
        let n = 10;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i > 0 {
                a[i * n + i - 1] = -1.0;
                a[(i - 1) * n + i] = -1.0;
            }
        }
        let f = ic_factorize(&SparseSym::from_dense(&a, n).unwrap()).unwrap();
        let exact = dense_cholesky(&a, n);
        for (x, y) in f.to_dense_lower().iter().zip(&exact) {
            assert!((x - y).abs() < 1e-13);
        }
        // preconditioner is then an exact solve
        let r: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut z = vec![0.0; n];
        f.apply(&r, &mut z);
        let mut back = vec![0.0; n];
        SparseSym::from_dense(&a, n).unwrap().mul_vec(&z, &mut back);
        for (x, y) in back.iter().zip(&r) {
            assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn breakdown_triggers_shift() {
        // an indefinite matrix needs a shift; a negative diagonal cannot be rescued
        let a = vec![1.0, 1.2, 1.2, 1.0];
        let f = ic_factorize(&SparseSym::from_dense(&a, 2).unwrap()).unwrap();
        assert!(f.shift() > 0.0);
        let bad = vec![-1.0, 0.0, 0.0, 1.0];
        assert!(matches!(
            ic_factorize(&SparseSym::from_dense(&bad, 2).unwrap()),
            Err(Error::FactorizationFailed)
        ));
    }
}
