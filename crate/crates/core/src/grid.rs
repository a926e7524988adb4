//! Uniform space-time grids and staggered block fields.
//!
//! Cells are numbered time-major: `cell = t * space_cells + s`, where the
//! spatial index `s` is lexicographic with the x index running fastest.
//! Boundary values are never stored: space faces are the `n_d - 1` interior
//! faces along each axis and time faces are the `n_t - 1` interior slices.

use crate::block::{packed_len, sym_packed_inner, GenBlock, SymBlock};
use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, Real};

/// Where a field's values live on the staggered grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum StaggerKind {
    /// Interior faces normal to spatial axis `d`.
    SpaceFace(usize),
    /// Interior time slices between consecutive cell layers.
    TimeFace,
    /// Cell centers over the whole space-time grid.
    CellCenter,
    /// Cell centers of a single spatial slice (marginals, frames).
    SpaceCenter,
}

/// Per-location payload of a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockLayout {
    /// Packed symmetric `n x n` block.
    Sym { n: usize },
    /// `count` general `n x n` blocks, stacked.
    Gen { n: usize, count: usize },
    /// Plain real vector.
    Vector { len: usize },
}

impl BlockLayout {
    #[inline]
    pub fn stride(&self) -> usize {
        match *self {
            BlockLayout::Sym { n } => packed_len(n),
            BlockLayout::Gen { n, count } => n * n * count,
            BlockLayout::Vector { len } => len,
        }
    }

    /// Trace inner product of two location payloads.
    #[inline]
    pub fn inner<T: Real>(&self, x: &[T], y: &[T]) -> T {
        match *self {
            BlockLayout::Sym { n } => sym_packed_inner(n, x, y),
            _ => dot(x, y),
        }
    }
}

/// Uniform grid on the unit cube times the unit time interval.
#[derive(Clone, Debug)]
pub struct Grid<T> {
    extents: Vec<usize>,
    nt: usize,
    h: Vec<T>,
    ht: T,
    strides: Vec<usize>,
    space_cells: usize,
    /// For each axis: (lower cell, upper cell) of every interior face of one slice.
    faces: Vec<Vec<(usize, usize)>>,
    /// For each axis: (lower face, upper face) of every cell of one slice.
    cell_faces: Vec<Vec<(Option<usize>, Option<usize>)>>,
}

impl<T: Real> Grid<T> {
    /// Builds a grid with `h_d = 1/n_d` and `h_t = 1/n_t`.
    pub fn new(extents: &[usize], nt: usize) -> Result<Self> {
        if extents.is_empty() || extents.len() > 3 {
            return Err(Error::InvalidProblem(format!(
                "spatial dimension must be 1, 2 or 3 (got {})",
                extents.len()
            )));
        }
        if extents.contains(&0) || nt == 0 {
            return Err(Error::InvalidProblem("grid extents must be positive".into()));
        }
        let mut strides = Vec::with_capacity(extents.len());
        let mut acc = 1;
        for &e in extents {
            strides.push(acc);
            acc *= e;
        }
        let space_cells = acc;
        let mut faces = Vec::new();
        let mut cell_faces = Vec::new();
        for d in 0..extents.len() {
            let mut face_ext = extents.to_vec();
            face_ext[d] -= 1;
            let nface: usize = face_ext.iter().product();
            let mut list = Vec::with_capacity(nface);
            let mut per_cell = vec![(None, None); space_cells];
            for f in 0..nface {
                let mut rem = f;
                let mut cell = 0;
                for (k, &e) in face_ext.iter().enumerate() {
                    let idx = rem % e;
                    rem /= e;
                    cell += idx * strides[k];
                }
                let upper = cell + strides[d];
                list.push((cell, upper));
                per_cell[cell].1 = Some(f);
                per_cell[upper].0 = Some(f);
            }
            faces.push(list);
            cell_faces.push(per_cell);
        }
        Ok(Self {
            h: extents.iter().map(|&e| T::one() / T::lit(e as f64)).collect(),
            ht: T::one() / T::lit(nt as f64),
            extents: extents.to_vec(),
            nt,
            strides,
            space_cells,
            faces,
            cell_faces,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.extents.len()
    }

    pub fn extents(&self) -> &[usize] {
        &self.extents
    }

    #[inline]
    pub fn nt(&self) -> usize {
        self.nt
    }

    #[inline]
    pub fn h(&self, axis: usize) -> T {
        self.h[axis]
    }

    #[inline]
    pub fn ht(&self) -> T {
        self.ht
    }

    /// Spatial cell volume.
    pub fn h_vol(&self) -> T {
        self.h.iter().fold(T::one(), |a, &b| a * b)
    }

    #[inline]
    pub fn space_cells(&self) -> usize {
        self.space_cells
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.space_cells * self.nt
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.strides[axis]
    }

    /// Interior faces of one time slice normal to `axis`.
    #[inline]
    pub fn faces_per_slice(&self, axis: usize) -> usize {
        self.faces[axis].len()
    }

    /// (lower cell, upper cell) spatial indices of face `f` on `axis`.
    #[inline]
    pub fn face_cells(&self, axis: usize, f: usize) -> (usize, usize) {
        self.faces[axis][f]
    }

    /// (lower face, upper face) on `axis` of spatial cell `s`.
    #[inline]
    pub fn cell_faces(&self, axis: usize, s: usize) -> (Option<usize>, Option<usize>) {
        self.cell_faces[axis][s]
    }

    /// Number of stored locations for a staggering.
    pub fn count(&self, kind: StaggerKind) -> usize {
        match kind {
            StaggerKind::SpaceFace(d) => self.faces[d].len() * self.nt,
            StaggerKind::TimeFace => self.space_cells * (self.nt - 1),
            StaggerKind::CellCenter => self.cells(),
            StaggerKind::SpaceCenter => self.space_cells,
        }
    }

    /// Multi-index of spatial cell `s`.
    pub fn space_index(&self, s: usize) -> Vec<usize> {
        let mut rem = s;
        self.extents
            .iter()
            .map(|&e| {
                let i = rem % e;
                rem /= e;
                i
            })
            .collect()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.extents == other.extents && self.nt == other.nt
    }
}

/// Grid-indexed array of blocks on one staggering.
#[derive(Clone, Debug, PartialEq)]
pub struct StaggeredField<T> {
    kind: StaggerKind,
    layout: BlockLayout,
    len: usize,
    data: Vec<T>,
}

impl<T: Real> StaggeredField<T> {
    pub fn zeros(grid: &Grid<T>, kind: StaggerKind, layout: BlockLayout) -> Self {
        let len = grid.count(kind);
        Self {
            kind,
            layout,
            len,
            data: vec![T::zero(); len * layout.stride()],
        }
    }

    pub fn from_data(grid: &Grid<T>, kind: StaggerKind, layout: BlockLayout, data: Vec<T>) -> Result<Self> {
        let len = grid.count(kind);
        if data.len() != len * layout.stride() {
            return Err(Error::ShapeMismatch(format!(
                "{kind:?} field expects {} values, got {}",
                len * layout.stride(),
                data.len()
            )));
        }
        Ok(Self {
            kind,
            layout,
            len,
            data,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            kind: self.kind,
            layout: self.layout,
            len: self.len,
            data: vec![T::zero(); self.data.len()],
        }
    }

    #[inline]
    pub fn kind(&self) -> StaggerKind {
        self.kind
    }

    #[inline]
    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    /// Number of locations.
    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn stride(&self) -> usize {
        self.layout.stride()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, i: usize) -> &[T] {
        let s = self.stride();
        &self.data[i * s..(i + 1) * s]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize) -> &mut [T] {
        let s = self.stride();
        &mut self.data[i * s..(i + 1) * s]
    }

    fn sym_dim(&self) -> usize {
        match self.layout {
            BlockLayout::Sym { n } => n,
            other => panic!("expected symmetric layout, found {other:?}"),
        }
    }

    fn gen_dim(&self) -> usize {
        match self.layout {
            BlockLayout::Gen { n, .. } => n,
            other => panic!("expected general layout, found {other:?}"),
        }
    }

    #[inline]
    pub fn sym(&self, i: usize) -> SymBlock<T> {
        SymBlock::from_packed(self.sym_dim(), self.at(i))
    }

    #[inline]
    pub fn set_sym(&mut self, i: usize, b: &SymBlock<T>) {
        self.at_mut(i).copy_from_slice(b.packed());
    }

    /// Block `k` of the stack stored at location `i`.
    #[inline]
    pub fn gen(&self, i: usize, k: usize) -> GenBlock<T> {
        let n = self.gen_dim();
        let off = k * n * n;
        GenBlock::from_row_major(n, &self.at(i)[off..off + n * n])
    }

    #[inline]
    pub fn set_gen(&mut self, i: usize, k: usize, b: &GenBlock<T>) {
        let n = self.gen_dim();
        let off = k * n * n;
        self.at_mut(i)[off..off + n * n].copy_from_slice(b.as_slice());
    }

    fn check_conformable(&self, other: &Self) -> Result<()> {
        if self.kind != other.kind || self.layout != other.layout || self.len != other.len {
            return Err(Error::ShapeMismatch(format!(
                "{:?}/{:?}[{}] vs {:?}/{:?}[{}]",
                self.kind, self.layout, self.len, other.kind, other.layout, other.len
            )));
        }
        Ok(())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        axpy(alpha, &other.data, &mut self.data);
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Trace inner product, summed over locations in storage order.
    pub fn inner(&self, other: &Self) -> T {
        trace_inner(self, other).expect("conformable fields")
    }

    pub fn norm(&self) -> T {
        self.inner(self).max(T::zero()).sqrt()
    }
}

/// `Σ_locations Σ_blocks tr(Xᵀ Y)`.
pub fn trace_inner<T: Real>(x: &StaggeredField<T>, y: &StaggeredField<T>) -> Result<T> {
    x.check_conformable(y)?;
    let stride = x.stride();
    let mut s = T::zero();
    for i in 0..x.len {
        s += x.layout.inner(
            &x.data[i * stride..(i + 1) * stride],
            &y.data[i * stride..(i + 1) * stride],
        );
    }
    Ok(s)
}

/// Primal variables `(p_1, .., p_m, rho, u)` of a transport problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Primal<T> {
    fields: Vec<StaggeredField<T>>,
}

impl<T: Real> Primal<T> {
    pub fn new(p: Vec<StaggeredField<T>>, rho: StaggeredField<T>, u: StaggeredField<T>) -> Self {
        let mut fields = p;
        fields.push(rho);
        fields.push(u);
        Self { fields }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.fields.len() - 2
    }

    #[inline]
    pub fn p(&self, axis: usize) -> &StaggeredField<T> {
        &self.fields[axis]
    }

    #[inline]
    pub fn p_mut(&mut self, axis: usize) -> &mut StaggeredField<T> {
        &mut self.fields[axis]
    }

    #[inline]
    pub fn rho(&self) -> &StaggeredField<T> {
        &self.fields[self.dim()]
    }

    #[inline]
    pub fn rho_mut(&mut self) -> &mut StaggeredField<T> {
        let d = self.dim();
        &mut self.fields[d]
    }

    #[inline]
    pub fn u(&self) -> &StaggeredField<T> {
        &self.fields[self.dim() + 1]
    }

    #[inline]
    pub fn u_mut(&mut self) -> &mut StaggeredField<T> {
        let d = self.dim();
        &mut self.fields[d + 1]
    }

    pub fn fields(&self) -> &[StaggeredField<T>] {
        &self.fields
    }

    pub fn fields_mut(&mut self) -> &mut [StaggeredField<T>] {
        &mut self.fields
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            fields: self.fields.iter().map(|f| f.zeros_like()).collect(),
        }
    }

    pub fn axpy(&mut self, alpha: T, other: &Self) {
        for (a, b) in self.fields.iter_mut().zip(&other.fields) {
            a.axpy(alpha, b);
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.fields.iter_mut().for_each(|f| f.scale(alpha));
    }

    pub fn inner(&self, other: &Self) -> T {
        self.fields
            .iter()
            .zip(&other.fields)
            .map(|(a, b)| a.inner(b))
            .fold(T::zero(), |a, b| a + b)
    }

    pub fn norm(&self) -> T {
        self.inner(self).max(T::zero()).sqrt()
    }

    /// Total number of stored scalars.
    pub fn len(&self) -> usize {
        self.fields.iter().map(|f| f.data().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Concatenated raw storage.
    pub fn to_flat(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        for f in &self.fields {
            v.extend_from_slice(f.data());
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "primal expects {} values, got {}",
                self.len(),
                flat.len()
            )));
        }
        let mut off = 0;
        for f in &mut self.fields {
            let n = f.data().len();
            f.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Mutable reference to raw entry `idx` of the concatenated storage.
    pub fn flat_entry_mut(&mut self, mut idx: usize) -> &mut T {
        for f in &mut self.fields {
            let n = f.data().len();
            if idx < n {
                return &mut f.data_mut()[idx];
            }
            idx -= n;
        }
        panic!("flat index out of range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn staggered_counts_1d() {
        let g = Grid::<f64>::new(&[5], 4).unwrap();
        assert_eq!(g.count(StaggerKind::SpaceFace(0)), 4 * 4);
        assert_eq!(g.count(StaggerKind::TimeFace), 5 * 3);
        assert_eq!(g.count(StaggerKind::CellCenter), 20);
    }

    #[test]
    fn faces_link_neighbouring_cells_2d() {
        let g = Grid::<f64>::new(&[3, 2], 2).unwrap();
        assert_eq!(g.faces_per_slice(0), 2 * 2);
        assert_eq!(g.faces_per_slice(1), 3);
        for d in 0..2 {
            for f in 0..g.faces_per_slice(d) {
                let (lo, hi) = g.face_cells(d, f);
                assert_eq!(hi - lo, g.stride(d));
                assert_eq!(g.cell_faces(d, lo).1, Some(f));
                assert_eq!(g.cell_faces(d, hi).0, Some(f));
            }
        }
        // boundary cells have a missing face
        assert_eq!(g.cell_faces(0, 0).0, None);
        assert_eq!(g.cell_faces(0, 2).1, None);
        assert_eq!(g.space_index(4), vec![1, 1]);
    }

    #[test]
    fn trace_inner_weights_off_diagonals() {
        let g = Grid::<f64>::new(&[1], 1).unwrap();
        let lay = BlockLayout::Sym { n: 2 };
        let mut x = StaggeredField::zeros(&g, StaggerKind::CellCenter, lay);
        x.set_sym(0, &SymBlock::identity(2));
        assert_eq!(trace_inner(&x, &x).unwrap(), 2.0);
        let mut y = x.zeros_like();
        y.at_mut(0).copy_from_slice(&[0.0, 1.0, 0.0]);
        assert_eq!(trace_inner(&y, &y).unwrap(), 2.0);
        let z = StaggeredField::zeros(&g, StaggerKind::CellCenter, BlockLayout::Vector { len: 3 });
        assert!(matches!(trace_inner(&x, &z), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn trace_inner_matches_flattened_full_dot() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let g = Grid::<f64>::new(&[3, 2], 3).unwrap();
        let lay = BlockLayout::Sym { n: 3 };
        let mut x = StaggeredField::zeros(&g, StaggerKind::TimeFace, lay);
        let mut y = x.zeros_like();
        x.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        y.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut flat = 0.0;
        for i in 0..x.len() {
            let a = x.sym(i).to_full();
            let b = y.sym(i).to_full();
            flat += a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| p * q).sum::<f64>();
        }
        let ip = trace_inner(&x, &y).unwrap();
        assert!((ip - flat).abs() < 1e-12);
        assert_eq!(ip, trace_inner(&y, &x).unwrap());
    }
}
