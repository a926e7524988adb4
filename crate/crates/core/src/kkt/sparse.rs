use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, StaggerKind};
use crate::scalar::Real;

/// Sparse symmetric matrix; only the lower triangle (with the diagonal) is
/// stored, row by row, with sorted column indices and the diagonal last.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym<T> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Real> SparseSym<T> {
    /// Builds from per-row lower-triangle entries `(col, value)`.
    /// Every row must end with its diagonal entry.
    pub fn from_lower_rows(rows: Vec<Vec<(usize, T)>>) -> Result<Self> {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let nnz = rows.iter().map(|r| r.len()).sum();
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            let mut last = None;
            for &(c, v) in &row {
                if c > i || last.is_some_and(|l| c <= l) {
                    return Err(Error::ShapeMismatch(format!(
                        "row {i}: columns must be sorted and <= row index"
                    )));
                }
                last = Some(c);
                cols.push(c);
                vals.push(v);
            }
            if last != Some(i) {
                return Err(Error::ShapeMismatch(format!("row {i} lacks a diagonal entry")));
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            dim,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Lower triangle of a dense row-major matrix, keeping nonzeros and the diagonal.
    pub fn from_dense(a: &[T], dim: usize) -> Result<Self> {
        let rows = (0..dim)
            .map(|i| {
                (0..=i)
                    .filter(|&j| j == i || a[i * dim + j] != T::zero())
                    .map(|j| (j, a[i * dim + j]))
                    .collect()
            })
            .collect();
        Self::from_lower_rows(rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            dim,
            row_ptr: (0..=dim).collect(),
            cols: (0..dim).collect(),
            vals: vec![T::one(); dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz_lower(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.dim).map(|i| self.vals[self.row_ptr[i + 1] - 1]).collect()
    }

    pub(crate) fn from_parts(dim: usize, row_ptr: Vec<usize>, cols: Vec<usize>, vals: Vec<T>) -> Self {
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub(crate) fn parts(&self) -> (&[usize], &[usize], &[T]) {
        (&self.row_ptr, &self.cols, &self.vals)
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.iter_mut().for_each(|v| *v = T::zero());
        for i in 0..self.dim {
            let (cols, vals) = self.row(i);
            let xi = x[i];
            let mut acc = T::zero();
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
                if j != i {
                    y[j] += v * xi;
                }
            }
            y[i] += acc;
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let n = self.dim;
        let mut a = vec![T::zero(); n * n];
        for i in 0..n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }
}

/// Block-structured symmetric operator on cell-centered unknowns: one dense
/// `bs x bs` diagonal block per cell plus one coupling block per interior
/// face (spatial faces along every axis and time faces).
///
/// Unknowns are ordered time-major, then spatial lexicographic, then by the
/// within-cell coordinate.
#[derive(Clone, Debug)]
pub struct BlockStencil<T> {
    bs: usize,
    grid: Grid<T>,
    diag: Vec<T>,
    /// Per spatial axis, one block per space face (row = lower cell coordinate).
    space: Vec<Vec<T>>,
    /// One block per time face (row = earlier cell coordinate).
    time: Vec<T>,
}

impl<T: Real> BlockStencil<T> {
    pub fn new(grid: &Grid<T>, bs: usize) -> Self {
        let b2 = bs * bs;
        Self {
            bs,
            diag: vec![T::zero(); grid.cells() * b2],
            space: (0..grid.dim())
                .map(|d| vec![T::zero(); grid.count(StaggerKind::SpaceFace(d)) * b2])
                .collect(),
            time: vec![T::zero(); grid.count(StaggerKind::TimeFace) * b2],
            grid: grid.clone(),
        }
    }

    /// Operator `Σ_faces Eᵀ F E + Σ_cells C`, where each face map `F` couples
    /// its two neighbouring cells through the difference `E = x_lower − x_upper`:
    /// it adds `F` to both diagonal blocks and `−F` to the coupling block.
    ///
    /// `space(axis, face)` and `time(face)` return row-major `bs x bs` blocks,
    /// `cell(c)` the extra diagonal term of cell `c`.
    pub fn from_face_maps(
        grid: &Grid<T>,
        bs: usize,
        space: impl Fn(usize, usize) -> Vec<T> + Sync,
        time: impl Fn(usize) -> Vec<T> + Sync,
        cell: impl Fn(usize) -> Vec<T> + Sync,
    ) -> Self {
        let mut st = Self::new(grid, bs);
        if bs == 0 {
            return st;
        }
        let b2 = bs * bs;
        for d in 0..grid.dim() {
            st.space[d].par_chunks_mut(b2).enumerate().for_each(|(i, blk)| {
                for (o, v) in blk.iter_mut().zip(space(d, i)) {
                    *o = -v;
                }
            });
        }
        st.time.par_chunks_mut(b2).enumerate().for_each(|(i, blk)| {
            for (o, v) in blk.iter_mut().zip(time(i)) {
                *o = -v;
            }
        });
        let ns = grid.space_cells();
        let nt = grid.nt();
        let (space_blocks, time_blocks) = (&st.space, &st.time);
        st.diag.par_chunks_mut(b2).enumerate().for_each(|(c, blk)| {
            blk.copy_from_slice(&cell(c));
            let (t, s) = (c / ns, c % ns);
            let mut sub = |src: &[T]| {
                for (o, v) in blk.iter_mut().zip(src) {
                    *o -= *v;
                }
            };
            if t > 0 {
                let k = (t - 1) * ns + s;
                sub(&time_blocks[k * b2..(k + 1) * b2]);
            }
            if t + 1 < nt {
                let k = t * ns + s;
                sub(&time_blocks[k * b2..(k + 1) * b2]);
            }
            for d in 0..grid.dim() {
                let nf = grid.faces_per_slice(d);
                let (lo, hi) = grid.cell_faces(d, s);
                for f in [lo, hi].into_iter().flatten() {
                    let i = t * nf + f;
                    sub(&space_blocks[d][i * b2..(i + 1) * b2]);
                }
            }
        });
        st
    }

    #[inline]
    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn dim(&self) -> usize {
        self.grid.cells() * self.bs
    }

    #[inline]
    pub fn diag_block_mut(&mut self, cell: usize) -> &mut [T] {
        let b2 = self.bs * self.bs;
        &mut self.diag[cell * b2..(cell + 1) * b2]
    }

    pub fn diag_blocks_mut(&mut self) -> &mut [T] {
        &mut self.diag
    }

    #[inline]
    pub fn space_block_mut(&mut self, axis: usize, face: usize) -> &mut [T] {
        let b2 = self.bs * self.bs;
        &mut self.space[axis][face * b2..(face + 1) * b2]
    }

    pub fn space_blocks_mut(&mut self, axis: usize) -> &mut [T] {
        &mut self.space[axis]
    }

    #[inline]
    pub fn time_block_mut(&mut self, face: usize) -> &mut [T] {
        let b2 = self.bs * self.bs;
        &mut self.time[face * b2..(face + 1) * b2]
    }

    pub fn time_blocks_mut(&mut self) -> &mut [T] {
        &mut self.time
    }

    /// `y = A x` without assembling.
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        let bs = self.bs;
        let b2 = bs * bs;
        let g = &self.grid;
        let ns = g.space_cells();
        y.iter_mut().for_each(|v| *v = T::zero());
        let couple = |blk: &[T], lo: usize, hi: usize, y: &mut [T]| {
            for a in 0..bs {
                for b in 0..bs {
                    let v = blk[a * bs + b];
                    y[lo * bs + a] += v * x[hi * bs + b];
                    y[hi * bs + b] += v * x[lo * bs + a];
                }
            }
        };
        for c in 0..g.cells() {
            let blk = &self.diag[c * b2..(c + 1) * b2];
            for a in 0..bs {
                for b in 0..bs {
                    y[c * bs + a] += blk[a * bs + b] * x[c * bs + b];
                }
            }
        }
        for d in 0..g.dim() {
            let nf = g.faces_per_slice(d);
            for t in 0..g.nt() {
                for f in 0..nf {
                    let (lo, hi) = g.face_cells(d, f);
                    let idx = t * nf + f;
                    couple(&self.space[d][idx * b2..(idx + 1) * b2], t * ns + lo, t * ns + hi, y);
                }
            }
        }
        for k in 0..g.nt().saturating_sub(1) {
            for s in 0..ns {
                let idx = k * ns + s;
                couple(&self.time[idx * b2..(idx + 1) * b2], k * ns + s, (k + 1) * ns + s, y);
            }
        }
    }

    /// Explicit lower-triangle sparse matrix.
    pub fn to_sparse(&self) -> Result<SparseSym<T>> {
        let bs = self.bs;
        let b2 = bs * bs;
        let g = &self.grid;
        let ns = g.space_cells();
        let m = g.dim();
        let n = self.dim();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for c in 0..g.cells() {
            let t = c / ns;
            let s = c % ns;
            // backward neighbours in ascending column order: time, then axes
            // from the largest stride down
            let mut back: Vec<(usize, &[T])> = Vec::with_capacity(m + 1);
            if t > 0 {
                let idx = (t - 1) * ns + s;
                back.push((c - ns, &self.time[idx * b2..(idx + 1) * b2]));
            }
            for d in (0..m).rev() {
                if let Some(f) = g.cell_faces(d, s).0 {
                    let idx = t * g.faces_per_slice(d) + f;
                    back.push((c - g.stride(d), &self.space[d][idx * b2..(idx + 1) * b2]));
                }
            }
            let diag = &self.diag[c * b2..(c + 1) * b2];
            for beta in 0..bs {
                for &(nb, blk) in &back {
                    for alpha in 0..bs {
                        cols.push(nb * bs + alpha);
                        vals.push(blk[alpha * bs + beta]);
                    }
                }
                for alpha in 0..=beta {
                    cols.push(c * bs + alpha);
                    vals.push(T::lit(0.5) * (diag[beta * bs + alpha] + diag[alpha * bs + beta]));
                }
                row_ptr.push(cols.len());
            }
        }
        Ok(SparseSym {
            dim: n,
            row_ptr,
            cols,
            vals,
        })
    }
}
