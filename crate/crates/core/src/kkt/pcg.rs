use super::ic::Preconditioner;
use super::sparse::SparseSym;
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, norm2, Real};

/// Default iteration cap for the inner solve.
pub const DEFAULT_MAX_ITER: usize = 500;

#[derive(Clone, Debug)]
pub struct PcgOutcome<T> {
    pub solution: Vec<T>,
    pub iterations: usize,
    /// Achieved `‖S x − rhs‖ / ‖rhs‖`.
    pub rel_residual: T,
    pub converged: bool,
}

/// Restricts a preconditioner to the orthogonal complement of a null vector
/// `k` of a singular but consistent system: `z = Π M⁻¹ Π r` with
/// `Π = I − k kᵀ / kᵀk`. Search directions then never pick up the null
/// component through rounding, so the curvature stays positive.
pub struct Deflated<'a, T, P> {
    inner: &'a P,
    k: Vec<T>,
    kk: T,
    scratch: std::cell::RefCell<Vec<T>>,
}

impl<'a, T: Real, P: Preconditioner<T>> Deflated<'a, T, P> {
    pub fn new(inner: &'a P, k: Vec<T>) -> Self {
        let kk = dot(&k, &k);
        let n = k.len();
        Self {
            inner,
            k,
            kk,
            scratch: std::cell::RefCell::new(vec![T::zero(); n]),
        }
    }

    fn remove_kernel(&self, v: &mut [T]) {
        if self.kk > T::zero() {
            let c = dot(v, &self.k) / self.kk;
            axpy(-c, &self.k, v);
        }
    }
}

impl<T: Real, P: Preconditioner<T>> Preconditioner<T> for Deflated<'_, T, P> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        let mut rp = self.scratch.borrow_mut();
        rp.copy_from_slice(r);
        self.remove_kernel(&mut rp);
        self.inner.apply(&rp, z);
        self.remove_kernel(z);
    }

    /// `v ← Π v`
    fn project(&self, v: &mut [T]) {
        self.remove_kernel(v);
    }
}

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// Stops when the relative residual drops to `tol_rel` or after `max_iter`
/// iterations; an unconverged result is returned with `converged == false`.
pub fn pcg<T: Real, P: Preconditioner<T>>(
    s: &SparseSym<T>,
    precond: &P,
    rhs: &[T],
    tol_rel: T,
    max_iter: usize,
) -> Result<PcgOutcome<T>> {
    pcg_with(|x, y| s.mul_vec(x, y), precond, rhs, tol_rel, max_iter)
}

/// Matrix-free variant of [`pcg`].
pub fn pcg_with<T: Real, P: Preconditioner<T>>(
    apply: impl Fn(&[T], &mut [T]),
    precond: &P,
    rhs: &[T],
    tol_rel: T,
    max_iter: usize,
) -> Result<PcgOutcome<T>> {
    let n = rhs.len();
    let mut x = vec![T::zero(); n];
    let bnorm = norm2(rhs);
    if bnorm == T::zero() {
        return Ok(PcgOutcome {
            solution: x,
            iterations: 0,
            rel_residual: T::zero(),
            converged: true,
        });
    }
    let mut r = rhs.to_vec();
    precond.project(&mut r);
    let mut z = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    // a curvature within rounding of zero means the iteration has stagnated
    // at working precision; anything clearly negative is a breakdown
    let round = T::epsilon() * T::lit(10.0) * T::lit((n as f64).sqrt());
    let stalled = |v: T, a: &[T], b: &[T]| v.abs() <= round * norm2(a) * norm2(b);
    let stop = |x: Vec<T>, it: usize, rel: T| PcgOutcome {
        solution: x,
        iterations: it,
        rel_residual: rel,
        converged: rel <= tol_rel,
    };
    precond.apply(&r, &mut z);
    let mut rz = dot(&r, &z);
    if !(rz > T::zero()) {
        if stalled(rz, &r, &z) {
            return Ok(stop(x, 0, T::one()));
        }
        return Err(Error::BreakdownDetected(rz.to_f64_lossy()));
    }
    let mut p = z.clone();
    let mut rel = T::one();
    for it in 1..=max_iter {
        apply(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > T::zero()) {
            if stalled(pq, &p, &q) {
                return Ok(stop(x, it - 1, rel));
            }
            return Err(Error::BreakdownDetected(pq.to_f64_lossy()));
        }
        let alpha = rz / pq;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        // rounding in S p leaks into the kernel of a singular system
        precond.project(&mut r);
        rel = norm2(&r) / bnorm;
        if rel <= tol_rel {
            return Ok(PcgOutcome {
                solution: x,
                iterations: it,
                rel_residual: rel,
                converged: true,
            });
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        if !(rz_new > T::zero()) {
            if stalled(rz_new, &r, &z) {
                return Ok(stop(x, it, rel));
            }
            return Err(Error::BreakdownDetected(rz_new.to_f64_lossy()));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = *zi + beta * *pi;
        }
    }
    Ok(PcgOutcome {
        solution: x,
        iterations: max_iter,
        rel_residual: rel,
        converged: false,
    })
}
