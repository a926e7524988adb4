//! Small dense blocks: packed symmetric and general square matrices.
//!
//! Blocks live on the stack with a fixed capacity, so the per-cell kernels
//! never allocate. Symmetric blocks keep only the upper triangle, row by row.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Largest supported block dimension.
pub const MAX_BLOCK_DIM: usize = 8;
const GEN_CAP: usize = MAX_BLOCK_DIM * MAX_BLOCK_DIM;
const SYM_CAP: usize = MAX_BLOCK_DIM * (MAX_BLOCK_DIM + 1) / 2;

/// Number of stored entries of a packed symmetric `n x n` block.
#[inline]
pub const fn packed_len(n: usize) -> usize {
    n * (n + 1) / 2
}

#[inline]
fn row_offset(n: usize, i: usize) -> usize {
    i * (2 * n - i + 1) / 2
}

/// Index of `(i, j)` in packed upper-triangular storage.
#[inline]
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    row_offset(n, r) + (c - r)
}

/// Row/column pair for each packed position, in storage order.
pub fn packed_pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i..n).map(move |j| (i, j)))
}

pub fn check_dim(n: usize) -> Result<()> {
    if n == 0 || n > MAX_BLOCK_DIM {
        return Err(Error::DimensionTooLarge(n));
    }
    Ok(())
}

/// Symmetric `n x n` block in packed upper-triangular storage.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymBlock<T> {
    n: usize,
    data: [T; SYM_CAP],
}

/// General `n x n` block, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenBlock<T> {
    n: usize,
    data: [T; GEN_CAP],
}

impl<T: Real> SymBlock<T> {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= MAX_BLOCK_DIM, "block dimension {n} too large");
        Self {
            n,
            data: [T::zero(); SYM_CAP],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::scaled_identity(n, T::one())
    }

    pub fn scaled_identity(n: usize, s: T) -> Self {
        let mut b = Self::zeros(n);
        for i in 0..n {
            b.set(i, i, s);
        }
        b
    }

    pub fn from_packed(n: usize, packed: &[T]) -> Self {
        let mut b = Self::zeros(n);
        b.data[..packed_len(n)].copy_from_slice(&packed[..packed_len(n)]);
        b
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let mut b = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            b.set(i, i, *d);
        }
        b
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn packed(&self) -> &[T] {
        &self.data[..packed_len(self.n)]
    }

    #[inline]
    pub fn packed_mut(&mut self) -> &mut [T] {
        let len = packed_len(self.n);
        &mut self.data[..len]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[packed_index(self.n, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[packed_index(self.n, i, j)] = v;
    }

    pub fn to_full(&self) -> GenBlock<T> {
        let mut g = GenBlock::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                g.set(i, j, self.get(i, j));
            }
        }
        g
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    pub fn scale(mut self, s: T) -> Self {
        for v in self.packed_mut() {
            *v *= s;
        }
        self
    }

    pub fn add(mut self, other: &Self) -> Self {
        for (a, b) in self.packed_mut().iter_mut().zip(other.packed()) {
            *a += *b;
        }
        self
    }

    pub fn sub(mut self, other: &Self) -> Self {
        for (a, b) in self.packed_mut().iter_mut().zip(other.packed()) {
            *a -= *b;
        }
        self
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.packed_mut().iter_mut().zip(other.packed()) {
            *a += s * *b;
        }
    }

    /// `tr(self * other)` for symmetric operands.
    pub fn inner(&self, other: &Self) -> T {
        sym_packed_inner(self.n, self.packed(), other.packed())
    }

    /// Lower Cholesky factor `L` with `self = L Lᵀ`.
    pub fn cholesky(&self) -> Result<GenBlock<T>> {
        let n = self.n;
        let mut l = GenBlock::zeros(n);
        for j in 0..n {
            let mut d = self.get(j, j);
            for k in 0..j {
                d -= l.get(j, k) * l.get(j, k);
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite(format!("pivot {j} of {n}x{n} block is {d}")));
            }
            let d = d.sqrt();
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = self.get(i, j);
                for k in 0..j {
                    s -= l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        Ok(l)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.cholesky().is_ok()
    }

    /// Eigenvalues (ascending) and eigenvectors (columns of the returned block).
    pub fn eigen(&self) -> (Vec<T>, GenBlock<T>) {
        let n = self.n;
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = self.get(i, j);
            }
        }
        let (vals, vecs) = jacobi_eigen(&mut a, n);
        let mut v = GenBlock::zeros(n);
        v.data[..n * n].copy_from_slice(&vecs);
        (vals, v)
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigen().0[0]
    }

    /// Coordinates in the orthonormal basis `E_ii`, `(E_ij + E_ji)/sqrt(2)`.
    pub fn to_coords(&self, out: &mut [T]) {
        sym_packed_to_coords(self.n, self.packed(), out);
    }

    pub fn from_coords(n: usize, coords: &[T]) -> Self {
        let mut b = Self::zeros(n);
        sym_coords_to_packed(n, coords, b.packed_mut());
        b
    }
}

impl<T: Real> GenBlock<T> {
    pub fn zeros(n: usize) -> Self {
        assert!(n <= MAX_BLOCK_DIM, "block dimension {n} too large");
        Self {
            n,
            data: [T::zero(); GEN_CAP],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut b = Self::zeros(n);
        for i in 0..n {
            b.set(i, i, T::one());
        }
        b
    }

    pub fn from_row_major(n: usize, data: &[T]) -> Self {
        let mut b = Self::zeros(n);
        b.data[..n * n].copy_from_slice(&data[..n * n]);
        b
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data[..self.n * self.n]
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        let len = self.n * self.n;
        &mut self.data[..len]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    /// `selfᵀ * rhs`
    pub fn tmul(&self, rhs: &Self) -> Self {
        let n = self.n;
        let mut out = Self::zeros(n);
        for k in 0..n {
            for i in 0..n {
                let a = self.get(k, i);
                if a == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.get(k, j);
                }
            }
        }
        out
    }

    pub fn add(mut self, other: &Self) -> Self {
        for (a, b) in self.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *a += *b;
        }
        self
    }

    pub fn sub(mut self, other: &Self) -> Self {
        for (a, b) in self.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *a -= *b;
        }
        self
    }

    pub fn scale(mut self, s: T) -> Self {
        for v in self.as_mut_slice() {
            *v *= s;
        }
        self
    }

    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *a += s * *b;
        }
    }

    /// `tr(selfᵀ * other)`
    pub fn inner(&self, other: &Self) -> T {
        crate::scalar::dot(self.as_slice(), other.as_slice())
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Symmetric part `(A + Aᵀ)/2` in packed storage.
    pub fn sym_part(&self) -> SymBlock<T> {
        sym_from_full(self)
    }

    /// `self - selfᵀ`
    pub fn minus_transpose(&self) -> Self {
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                out.set(i, j, self.get(i, j) - self.get(j, i));
            }
        }
        out
    }

    /// `A B - B A`
    pub fn commutator(a: &Self, b: &Self) -> Self {
        a.mul(b).sub(&b.mul(a))
    }

    pub fn max_abs(&self) -> T {
        self.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

/// Returns `(A + Aᵀ)/2` in packed storage.
pub fn sym_from_full<T: Real>(full: &GenBlock<T>) -> SymBlock<T> {
    let n = full.dim();
    let half = T::lit(0.5);
    let mut s = SymBlock::zeros(n);
    for (i, j) in packed_pairs(n) {
        s.set(i, j, half * (full.get(i, j) + full.get(j, i)));
    }
    s
}

/// Inverse of an SPD block via Cholesky.
pub fn block_inverse<T: Real>(a: &SymBlock<T>) -> Result<SymBlock<T>> {
    let n = a.dim();
    let l = a.cholesky()?;
    // invert L (lower triangular) then form L⁻ᵀ L⁻¹
    let mut linv = GenBlock::zeros(n);
    for j in 0..n {
        linv.set(j, j, T::one() / l.get(j, j));
        for i in (j + 1)..n {
            let mut s = T::zero();
            for k in j..i {
                s -= l.get(i, k) * linv.get(k, j);
            }
            linv.set(i, j, s / l.get(i, i));
        }
    }
    let mut inv = SymBlock::zeros(n);
    for (i, j) in packed_pairs(n) {
        let mut s = T::zero();
        for k in j..n {
            s += linv.get(k, i) * linv.get(k, j);
        }
        inv.set(i, j, s);
    }
    Ok(inv)
}

/// `tr(X Y)` for packed symmetric slices.
#[inline]
pub fn sym_packed_inner<T: Real>(n: usize, x: &[T], y: &[T]) -> T {
    let mut diag = T::zero();
    let mut off = T::zero();
    let mut idx = 0;
    for i in 0..n {
        diag += x[idx] * y[idx];
        idx += 1;
        for _ in (i + 1)..n {
            off += x[idx] * y[idx];
            idx += 1;
        }
    }
    diag + off + off
}

pub fn sym_packed_to_coords<T: Real>(n: usize, packed: &[T], out: &mut [T]) {
    let r2 = T::lit(std::f64::consts::SQRT_2);
    for (idx, (i, j)) in packed_pairs(n).enumerate() {
        out[idx] = if i == j { packed[idx] } else { packed[idx] * r2 };
    }
}

pub fn sym_coords_to_packed<T: Real>(n: usize, coords: &[T], out: &mut [T]) {
    let r2 = T::lit(std::f64::consts::SQRT_2);
    for (idx, (i, j)) in packed_pairs(n).enumerate() {
        out[idx] = if i == j { coords[idx] } else { coords[idx] / r2 };
    }
}

/// Orthonormal symmetric basis element with coordinate index `alpha`.
pub fn sym_basis_element<T: Real>(n: usize, alpha: usize) -> SymBlock<T> {
    let mut coords = [T::zero(); SYM_CAP];
    coords[alpha] = T::one();
    SymBlock::from_coords(n, &coords[..packed_len(n)])
}

/// Coordinate matrix (row-major `s x s`, `s = n(n+1)/2`) of a linear map on
/// symmetric matrices, in the orthonormal symmetric basis.
pub fn sym_map_matrix<T: Real>(n: usize, map: impl Fn(&SymBlock<T>) -> SymBlock<T>) -> Vec<T> {
    let s = packed_len(n);
    let mut m = vec![T::zero(); s * s];
    let mut col = vec![T::zero(); s];
    for beta in 0..s {
        let image = map(&sym_basis_element(n, beta));
        image.to_coords(&mut col);
        for alpha in 0..s {
            m[alpha * s + beta] = col[alpha];
        }
    }
    m
}

/// In-place dense Cholesky of a row-major `s x s` SPD matrix (lower factor).
pub fn dense_cholesky<T: Real>(a: &mut [T], s: usize) -> Result<()> {
    for j in 0..s {
        let mut d = a[j * s + j];
        for k in 0..j {
            d -= a[j * s + k] * a[j * s + k];
        }
        if !(d > T::zero()) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite(format!(
                "pivot {j} of dense {s}x{s} matrix is {d}"
            )));
        }
        let d = d.sqrt();
        a[j * s + j] = d;
        for i in (j + 1)..s {
            let mut v = a[i * s + j];
            for k in 0..j {
                v -= a[i * s + k] * a[j * s + k];
            }
            a[i * s + j] = v / d;
        }
        for i in 0..j {
            a[i * s + j] = T::zero();
        }
    }
    Ok(())
}

/// Solves `L Lᵀ x = b` in place given the lower factor from [`dense_cholesky`].
pub fn dense_cholesky_solve<T: Real>(l: &[T], s: usize, b: &mut [T]) {
    for i in 0..s {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * s + k] * b[k];
        }
        b[i] = v / l[i * s + i];
    }
    for i in (0..s).rev() {
        let mut v = b[i];
        for k in (i + 1)..s {
            v -= l[k * s + i] * b[k];
        }
        b[i] = v / l[i * s + i];
    }
}

/// Inverse of a dense SPD matrix from its Cholesky factor.
pub fn dense_cholesky_inverse<T: Real>(l: &[T], s: usize) -> Vec<T> {
    let mut inv = vec![T::zero(); s * s];
    let mut col = vec![T::zero(); s];
    for j in 0..s {
        col.iter_mut().for_each(|v| *v = T::zero());
        col[j] = T::one();
        dense_cholesky_solve(l, s, &mut col);
        for i in 0..s {
            inv[i * s + j] = col[i];
        }
    }
    // exact symmetry
    for i in 0..s {
        for j in 0..i {
            let v = T::lit(0.5) * (inv[i * s + j] + inv[j * s + i]);
            inv[i * s + j] = v;
            inv[j * s + i] = v;
        }
    }
    inv
}

/// Cyclic Jacobi eigen-decomposition of a symmetric row-major matrix.
/// Returns ascending eigenvalues and the matching eigenvectors as columns of
/// a row-major matrix.
pub fn jacobi_eigen<T: Real>(a: &mut [T], n: usize) -> (Vec<T>, Vec<T>) {
    let mut v = vec![T::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = T::one();
    }
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let x = a[i * n + j] * a[i * n + j];
                total += x;
                if i != j {
                    off += x;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[i * n + i]
            .partial_cmp(&a[j * n + j])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let vals = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = vec![T::zero(); n * n];
    for (new, &old) in order.iter().enumerate() {
        for k in 0..n {
            vecs[k * n + new] = v[k * n + old];
        }
    }
    (vals, vecs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gen(rng: &mut ChaCha8Rng, n: usize) -> GenBlock<f64> {
        let mut g = GenBlock::zeros(n);
        for v in g.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
        g
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymBlock<f64> {
        let g = random_gen(rng, n);
        sym_from_full(&g.tmul(&g)).add(&SymBlock::scaled_identity(n, 0.5))
    }

    #[test]
    fn packed_layout_is_row_major_upper() {
        let n = 3;
        let idx: Vec<_> = packed_pairs(n).map(|(i, j)| packed_index(n, i, j)).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4, 5]);
        assert_eq!(packed_index(3, 2, 0), packed_index(3, 0, 2));
    }

    #[test]
    fn sym_from_full_identity_and_nilpotent() {
        let i3 = GenBlock::<f64>::identity(3);
        assert_eq!(sym_from_full(&i3), SymBlock::identity(3));
        let m = GenBlock::from_row_major(2, &[0.0, 1.0, 0.0, 0.0]);
        let s = sym_from_full(&m);
        assert_eq!(s.packed(), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn sym_from_full_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_gen(&mut rng, 3);
        let s = sym_from_full(&a);
        for i in 0..3 {
            for j in 0..3 {
                let expect = (a.as_slice()[i * 3 + j] + a.as_slice()[j * 3 + i]) / 2.0;
                assert_eq!(s.get(i, j), expect);
            }
        }
    }

    #[test]
    fn inverse_of_identity_and_diagonal() {
        assert_eq!(
            block_inverse(&SymBlock::<f64>::identity(4)).unwrap(),
            SymBlock::identity(4)
        );
        let d = SymBlock::from_diag(&[2.0, 4.0]);
        let inv = block_inverse(&d).unwrap();
        for (x, y) in inv.packed().iter().zip([0.5f64, 0.0, 0.25]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_multiplies_back_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let a = random_spd(&mut rng, 3);
            let inv = block_inverse(&a).unwrap();
            let prod = a.to_full().mul(&inv.to_full());
            let err = prod.sub(&GenBlock::identity(3)).max_abs();
            assert!(err < 1e-12 * 1e3, "err {err}");
        }
    }

    #[test]
    fn inverse_rejects_indefinite() {
        let a = SymBlock::from_diag(&[1.0, -1.0]);
        assert!(matches!(block_inverse(&a), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn symmetric_and_skew_blocks_are_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_gen(&mut rng, 4);
        let sym = sym_from_full(&a).to_full();
        let skew = a.minus_transpose();
        assert!(sym.inner(&skew).abs() < 1e-14);
        let i2 = GenBlock::<f64>::identity(2);
        assert_eq!(i2.inner(&i2), 2.0);
    }

    #[test]
    fn packed_inner_matches_full_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_spd(&mut rng, 4);
        let b = random_spd(&mut rng, 4);
        let full = a.to_full().inner(&b.to_full());
        assert!((a.inner(&b) - full).abs() < 1e-13);
        let mut ca = vec![0.0; 10];
        let mut cb = vec![0.0; 10];
        a.to_coords(&mut ca);
        b.to_coords(&mut cb);
        assert!((crate::scalar::dot(&ca, &cb) - full).abs() < 1e-13);
        let back = SymBlock::from_coords(4, &ca);
        assert!(back.sub(&a).packed().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn jacobi_eigen_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_spd(&mut rng, 5);
        let (vals, vecs) = a.eigen();
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let mut recon = GenBlock::zeros(5);
        for i in 0..5 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..5 {
                    s += vecs.get(i, k) * vals[k] * vecs.get(j, k);
                }
                recon.set(i, j, s);
            }
        }
        assert!(recon.sub(&a.to_full()).max_abs() < 1e-12);
    }

    #[test]
    fn dense_cholesky_inverse_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let s = 6;
        let g: Vec<f64> = (0..s * s).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; s * s];
        for i in 0..s {
            for j in 0..s {
                let mut v = if i == j { 1.0 } else { 0.0 };
                for k in 0..s {
                    v += g[k * s + i] * g[k * s + j];
                }
                a[i * s + j] = v;
            }
        }
        let mut l = a.clone();
        dense_cholesky(&mut l, s).unwrap();
        let inv = dense_cholesky_inverse(&l, s);
        for i in 0..s {
            for j in 0..s {
                let v: f64 = (0..s).map(|k| a[i * s + k] * inv[k * s + j]).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((v - e).abs() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn pack_unpack_roundtrip(vals in proptest::collection::vec(-1e3f64..1e3, 10)) {
            let s = SymBlock::from_packed(4, &vals);
            let back = sym_from_full(&s.to_full());
            proptest::prop_assert_eq!(back, s);
        }

        #[test]
        fn double_inverse_recovers_block(seed in 0u64..1000, log_cond in 0.0f64..6.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3;
            // random orthogonal basis from the eigenvectors of a random SPD block
            let (_, q) = random_spd(&mut rng, n).eigen();
            let eigs = [1.0, 10f64.powf(log_cond / 2.0), 10f64.powf(log_cond)];
            let mut a = SymBlock::zeros(n);
            for (i, j) in packed_pairs(n) {
                let v: f64 = (0..n).map(|k| q.get(i, k) * eigs[k] * q.get(j, k)).sum();
                a.set(i, j, v);
            }
            let back = block_inverse(&block_inverse(&a).unwrap()).unwrap();
            let scale = a.packed().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = back.sub(&a).packed().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            proptest::prop_assert!(err <= 1e-10 * scale, "err {} scale {}", err, scale);
        }
    }
}
