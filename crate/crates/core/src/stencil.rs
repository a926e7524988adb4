//! Staggered difference operators shared by the matrix and vector problems.
//!
//! Fields are raw slices with a fixed number of scalars per location.
//! Space faces of axis `d` are indexed `t * faces_per_slice(d) + f`, time
//! faces `k * space_cells + s` (face `k` lies between cell layers `k`, `k+1`).

use rayon::prelude::*;

use crate::grid::Grid;
use crate::scalar::Real;

fn for_each_chunk<T: Real>(out: &mut [T], stride: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    if stride == 0 {
        return;
    }
    out.par_chunks_mut(stride).enumerate().for_each(|(i, o)| f(i, o));
}

/// `out[cell] += (face_upper − face_lower) / h_d` along spatial `axis`;
/// boundary faces are zero.
pub fn space_diff_add<T: Real>(grid: &Grid<T>, axis: usize, face: &[T], stride: usize, out: &mut [T]) {
    let ns = grid.space_cells();
    let nf = grid.faces_per_slice(axis);
    let inv_h = T::one() / grid.h(axis);
    for_each_chunk(out, stride, |c, o| {
        let (t, s) = (c / ns, c % ns);
        let (lo, hi) = grid.cell_faces(axis, s);
        if let Some(f) = hi {
            let src = &face[(t * nf + f) * stride..(t * nf + f + 1) * stride];
            for (a, b) in o.iter_mut().zip(src) {
                *a += *b * inv_h;
            }
        }
        if let Some(f) = lo {
            let src = &face[(t * nf + f) * stride..(t * nf + f + 1) * stride];
            for (a, b) in o.iter_mut().zip(src) {
                *a -= *b * inv_h;
            }
        }
    });
}

/// Adjoint of [`space_diff_add`]: `face = (cell_lower − cell_upper) / h_d`.
pub fn space_diff_adjoint<T: Real>(grid: &Grid<T>, axis: usize, cell: &[T], stride: usize, face: &mut [T]) {
    let ns = grid.space_cells();
    let nf = grid.faces_per_slice(axis);
    let inv_h = T::one() / grid.h(axis);
    for_each_chunk(face, stride, |i, o| {
        let (t, f) = (i / nf, i % nf);
        let (lo, hi) = grid.face_cells(axis, f);
        let a = &cell[(t * ns + lo) * stride..(t * ns + lo + 1) * stride];
        let b = &cell[(t * ns + hi) * stride..(t * ns + hi + 1) * stride];
        for ((o, x), y) in o.iter_mut().zip(a).zip(b) {
            *o = (*x - *y) * inv_h;
        }
    });
}

/// `out[cell] += (face_upper − face_lower) / h_t` over interior time faces.
pub fn time_diff_add<T: Real>(grid: &Grid<T>, face: &[T], stride: usize, out: &mut [T]) {
    let ns = grid.space_cells();
    let nt = grid.nt();
    let inv_h = T::one() / grid.ht();
    for_each_chunk(out, stride, |c, o| {
        let (t, s) = (c / ns, c % ns);
        if t + 1 < nt {
            let k = t * ns + s;
            for (a, b) in o.iter_mut().zip(&face[k * stride..(k + 1) * stride]) {
                *a += *b * inv_h;
            }
        }
        if t > 0 {
            let k = (t - 1) * ns + s;
            for (a, b) in o.iter_mut().zip(&face[k * stride..(k + 1) * stride]) {
                *a -= *b * inv_h;
            }
        }
    });
}

/// Adjoint of [`time_diff_add`]: `face_k = (cell_k − cell_{k+1}) / h_t`.
pub fn time_diff_adjoint<T: Real>(grid: &Grid<T>, cell: &[T], stride: usize, face: &mut [T]) {
    let ns = grid.space_cells();
    let inv_h = T::one() / grid.ht();
    for_each_chunk(face, stride, |k, o| {
        let a = &cell[k * stride..(k + 1) * stride];
        let b = &cell[(k + ns) * stride..(k + ns + 1) * stride];
        for ((o, x), y) in o.iter_mut().zip(a).zip(b) {
            *o = (*x - *y) * inv_h;
        }
    });
}

/// Boundary data `b`: `ρ⁰/h_t` on the first layer, `−ρ¹/h_t` on the last
/// (both when there is a single layer).
pub fn boundary_rhs<T: Real>(grid: &Grid<T>, rho0: &[T], rho1: &[T], stride: usize) -> Vec<T> {
    let ns = grid.space_cells();
    let inv_h = T::one() / grid.ht();
    let mut b = vec![T::zero(); grid.cells() * stride];
    let last = (grid.nt() - 1) * ns * stride;
    for i in 0..ns * stride {
        b[i] += rho0[i] * inv_h;
        b[last + i] -= rho1[i] * inv_h;
    }
    b
}

/// Per-cell callback applied in parallel with the cell index.
pub(crate) fn map_cells<T: Real>(out: &mut [T], stride: usize, f: impl Fn(usize, &mut [T]) + Sync + Send) {
    for_each_chunk(out, stride, f)
}
