//! Vector-valued transport on a graph: each cell carries a density per
//! node, and mass moves between nodes along graph edges.

mod graph;

pub use graph::Graph;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{BlockLayout, Grid, Primal, StaggerKind, StaggeredField};
use crate::kkt::BlockStencil;
use crate::matrix::mass_tolerance;
use crate::problem::{HessianApprox, KktResidual, ShiftPolicy, TransportProblem};
use crate::scalar::{kahan_sum, Real};
use crate::stencil::{self, map_cells};

/// Discretized vector-valued transport problem.
#[derive(Clone, Debug)]
pub struct VectorProblem<T> {
    grid: Grid<T>,
    graph: Graph<T>,
    gamma: T,
    rho0: StaggeredField<T>,
    rho1: StaggeredField<T>,
    b: StaggeredField<T>,
    mass: T,
}

fn positive_floor<T: Real>() -> T {
    T::min_positive_value().max(T::lit(1e-300))
}

fn checked_recip<T: Real>(x: T, what: &str, at: usize) -> Result<T> {
    if x > positive_floor() && x.is_finite() {
        Ok(T::one() / x)
    } else {
        Err(Error::NonPositiveDensity(format!("{what} {at} has value {x}")))
    }
}

/// Per-cell weights `M = A₂(1/ρ) + a` (nodes) and
/// `E = A₂(1/𝔻₂ᵀρ + 1/𝔻₁ᵀρ) + c` (edges).
struct CellWeights<T> {
    m: Vec<T>,
    e: Vec<T>,
}

impl<T: Real> VectorProblem<T> {
    pub fn new(
        grid: Grid<T>,
        graph: Graph<T>,
        gamma: T,
        rho0: StaggeredField<T>,
        rho1: StaggeredField<T>,
    ) -> Result<Self> {
        let n = graph.nodes();
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidProblem(format!("gamma must be positive, got {gamma}")));
        }
        let mut masses = Vec::with_capacity(2);
        for (name, rho) in [("rho0", &rho0), ("rho1", &rho1)] {
            if rho.kind() != StaggerKind::SpaceCenter
                || rho.layout() != (BlockLayout::Vector { len: n })
                || rho.len() != grid.space_cells()
            {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must hold {n} values per spatial cell"
                )));
            }
            if let Some(i) = rho
                .data()
                .iter()
                .position(|v| !(*v > positive_floor()) || !v.is_finite())
            {
                return Err(Error::NonPositiveDensity(format!("{name} entry {i}")));
            }
            masses.push(grid.h_vol() * kahan_sum(rho.data().iter().copied()));
        }
        for m in &masses {
            if (*m - T::one()).abs() > mass_tolerance() {
                return Err(Error::InvalidProblem(format!("marginal mass is {m}, expected 1")));
            }
        }
        let b_data = stencil::boundary_rhs(&grid, rho0.data(), rho1.data(), n);
        let b = StaggeredField::from_data(&grid, StaggerKind::CellCenter, BlockLayout::Vector { len: n }, b_data)?;
        Ok(Self {
            mass: masses[0],
            grid,
            graph,
            gamma,
            rho0,
            rho1,
            b,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.graph.nodes()
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn rho0(&self) -> &StaggeredField<T> {
        &self.rho0
    }

    pub fn rho1(&self) -> &StaggeredField<T> {
        &self.rho1
    }

    fn node_layout(&self) -> BlockLayout {
        BlockLayout::Vector { len: self.n() }
    }

    pub fn d1(&self, axis: usize, p: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = self.zero_dual();
        stencil::space_diff_add(&self.grid, axis, p.data(), self.n(), out.data_mut());
        out
    }

    pub fn d1_adjoint(&self, axis: usize, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::SpaceFace(axis), self.node_layout());
        stencil::space_diff_adjoint(&self.grid, axis, lambda.data(), self.n(), out.data_mut());
        out
    }

    pub fn d2(&self, rho: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = self.zero_dual();
        stencil::time_diff_add(&self.grid, rho.data(), self.n(), out.data_mut());
        out
    }

    pub fn d2_adjoint(&self, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::TimeFace, self.node_layout());
        stencil::time_diff_adjoint(&self.grid, lambda.data(), self.n(), out.data_mut());
        out
    }

    /// `−𝔻 W^{1/2} u` per cell.
    pub fn d3(&self, u: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = self.zero_dual();
        let n = self.n();
        map_cells(out.data_mut(), n, |c, o| {
            self.graph.div(u.at(c), o);
            o.iter_mut().for_each(|v| *v = -*v);
        });
        out
    }

    /// `−W^{1/2} 𝔻ᵀ λ` per cell.
    pub fn d3_adjoint(&self, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let ne = self.graph.edge_count();
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, BlockLayout::Vector { len: ne });
        map_cells(out.data_mut(), ne, |c, o| {
            self.graph.grad(lambda.at(c), o);
            o.iter_mut().for_each(|v| *v = -*v);
        });
        out
    }

    fn rho_reciprocals(&self, rho: &StaggeredField<T>) -> Result<Vec<T>> {
        rho.data()
            .par_iter()
            .enumerate()
            .map(|(i, &v)| checked_recip(v, "density entry", i))
            .collect()
    }

    fn cell_weights(&self, rho_rec: &[T]) -> CellWeights<T> {
        let g = &self.grid;
        let n = self.n();
        let ne = self.graph.edge_count();
        let ns = g.space_cells();
        let nt = g.nt();
        let half = T::lit(0.5);
        // marginals were validated positive at construction
        let inv0: Vec<T> = self.rho0.data().iter().map(|v| T::one() / *v).collect();
        let inv1: Vec<T> = self.rho1.data().iter().map(|v| T::one() / *v).collect();
        let mut m = vec![T::zero(); g.cells() * n];
        let mut e = vec![T::zero(); g.cells() * ne];
        let layer = |c: usize| -> (&[T], &[T]) {
            let (t, s) = (c / ns, c % ns);
            let below = if t == 0 {
                &inv0[s * n..(s + 1) * n]
            } else {
                &rho_rec[((t - 1) * ns + s) * n..((t - 1) * ns + s + 1) * n]
            };
            let above = if t + 1 == nt {
                &inv1[s * n..(s + 1) * n]
            } else {
                &rho_rec[(t * ns + s) * n..(t * ns + s + 1) * n]
            };
            (below, above)
        };
        map_cells(&mut m, n, |c, o| {
            let (below, above) = layer(c);
            for i in 0..n {
                o[i] = half * (below[i] + above[i]);
            }
        });
        map_cells(&mut e, ne, |c, o| {
            let (below, above) = layer(c);
            for (k, &(src, sink)) in self.graph.edges().iter().enumerate() {
                o[k] = half * (below[sink] + below[src] + above[sink] + above[src]);
            }
        });
        CellWeights { m, e }
    }

    /// `A₁(p²)` per cell.
    fn cell_momentum_squares(&self, w: &Primal<T>) -> Vec<T> {
        let g = &self.grid;
        let n = self.n();
        let ns = g.space_cells();
        let half = T::lit(0.5);
        let mut q = vec![T::zero(); g.cells() * n];
        map_cells(&mut q, n, |c, o| {
            let (t, s) = (c / ns, c % ns);
            for d in 0..g.dim() {
                let nf = g.faces_per_slice(d);
                let (lo, hi) = g.cell_faces(d, s);
                for f in [lo, hi].into_iter().flatten() {
                    for (a, p) in o.iter_mut().zip(w.p(d).at(t * nf + f)) {
                        *a += half * *p * *p;
                    }
                }
            }
        });
        q
    }

    fn face_weights(&self, axis: usize, m: &[T]) -> Vec<T> {
        let g = &self.grid;
        let n = self.n();
        let ns = g.space_cells();
        let nf = g.faces_per_slice(axis);
        let mut k = vec![T::zero(); g.count(StaggerKind::SpaceFace(axis)) * n];
        let half = T::lit(0.5);
        map_cells(&mut k, n, |i, o| {
            let (t, f) = (i / nf, i % nf);
            let (lo, hi) = g.face_cells(axis, f);
            let (a, b) = ((t * ns + lo) * n, (t * ns + hi) * n);
            for j in 0..n {
                o[j] = half * (m[a + j] + m[b + j]);
            }
        });
        k
    }

    /// `A₂*` of a per-cell field with `stride` values per cell.
    fn to_time_faces(&self, cell: &[T], stride: usize) -> Vec<T> {
        let ns = self.grid.space_cells();
        let nface = self.grid.count(StaggerKind::TimeFace);
        let half = T::lit(0.5);
        let mut out = vec![T::zero(); nface * stride];
        map_cells(&mut out, stride, |k, o| {
            for j in 0..stride {
                o[j] = half * (cell[k * stride + j] + cell[(k + ns) * stride + j]);
            }
        });
        out
    }

    /// Per time face: `A₂*A₁(p²)` and `A₂*(u²)`.
    fn time_face_quadratics(&self, w: &Primal<T>) -> (Vec<T>, Vec<T>) {
        let q = self.cell_momentum_squares(w);
        let uu: Vec<T> = w.u().data().iter().map(|v| *v * *v).collect();
        (
            self.to_time_faces(&q, self.n()),
            self.to_time_faces(&uu, self.graph.edge_count()),
        )
    }

    fn check_primal(&self, w: &Primal<T>) -> Result<()> {
        let n = self.n();
        let g = &self.grid;
        let ok = w.dim() == g.dim()
            && (0..g.dim())
                .all(|d| w.p(d).layout() == self.node_layout() && w.p(d).len() == g.count(StaggerKind::SpaceFace(d)))
            && w.rho().layout() == (BlockLayout::Vector { len: n })
            && w.rho().len() == g.count(StaggerKind::TimeFace)
            && w.u().layout()
                == (BlockLayout::Vector {
                    len: self.graph.edge_count(),
                })
            && w.u().len() == g.cells();
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("primal fields do not match the problem".into()))
        }
    }
}

/// Diagonal Hessian approximation of the vector problem (the density block
/// is diagonal because every edge has exactly one source and one sink).
#[derive(Clone, Debug)]
pub struct VectorHessian<T> {
    /// Per axis: `2K` for every face entry.
    p_diag: Vec<Vec<T>>,
    /// `g + shift` for every density entry.
    rho_diag: Vec<T>,
    /// `2γE` for every flux entry.
    u_diag: Vec<T>,
    shift: T,
}

impl<T: Real> VectorHessian<T> {
    pub fn rho_diagonal(&self) -> &[T] {
        &self.rho_diag
    }

    fn scale_fields(&self, x: &Primal<T>, inverse: bool) -> Primal<T> {
        let f = |field: &StaggeredField<T>, diag: &[T]| {
            let mut out = field.clone();
            out.data_mut()
                .par_iter_mut()
                .zip(diag)
                .for_each(|(v, d)| if inverse { *v /= *d } else { *v *= *d });
            out
        };
        let p = (0..x.dim()).map(|d| f(x.p(d), &self.p_diag[d])).collect();
        Primal::new(p, f(x.rho(), &self.rho_diag), f(x.u(), &self.u_diag))
    }
}

impl<T: Real> HessianApprox<T> for VectorHessian<T> {
    fn apply(&self, x: &Primal<T>) -> Primal<T> {
        self.scale_fields(x, false)
    }

    fn apply_inverse(&self, x: &Primal<T>) -> Primal<T> {
        self.scale_fields(x, true)
    }

    fn shift(&self) -> T {
        self.shift
    }
}

impl<T: Real> TransportProblem<T> for VectorProblem<T> {
    type Hessian = VectorHessian<T>;

    fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    fn gamma(&self) -> T {
        self.gamma
    }

    fn dual_layout(&self) -> BlockLayout {
        self.node_layout()
    }

    fn initial_primal(&self) -> Primal<T> {
        let mut w = self.zero_primal();
        let g = &self.grid;
        let n = self.n();
        let ns = g.space_cells();
        let nt = T::lit(g.nt() as f64);
        let rho = w.rho_mut().data_mut();
        for k in 0..g.nt().saturating_sub(1) {
            let tau = T::lit((k + 1) as f64) / nt;
            for i in 0..ns * n {
                rho[k * ns * n + i] = (T::one() - tau) * self.rho0.data()[i] + tau * self.rho1.data()[i];
            }
        }
        w
    }

    fn zero_primal(&self) -> Primal<T> {
        let g = &self.grid;
        let p = (0..g.dim())
            .map(|d| StaggeredField::zeros(g, StaggerKind::SpaceFace(d), self.node_layout()))
            .collect();
        let rho = StaggeredField::zeros(g, StaggerKind::TimeFace, self.node_layout());
        let u = StaggeredField::zeros(
            g,
            StaggerKind::CellCenter,
            BlockLayout::Vector {
                len: self.graph.edge_count(),
            },
        );
        Primal::new(p, rho, u)
    }

    fn zero_dual(&self) -> StaggeredField<T> {
        StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, self.node_layout())
    }

    fn constraint_rhs(&self) -> &StaggeredField<T> {
        &self.b
    }

    fn apply_constraint(&self, w: &Primal<T>) -> StaggeredField<T> {
        let mut out = self.d2(w.rho());
        for d in 0..self.grid.dim() {
            stencil::space_diff_add(&self.grid, d, w.p(d).data(), self.n(), out.data_mut());
        }
        out.axpy(T::one(), &self.d3(w.u()));
        out
    }

    fn apply_constraint_adjoint(&self, lambda: &StaggeredField<T>) -> Primal<T> {
        let p = (0..self.grid.dim()).map(|d| self.d1_adjoint(d, lambda)).collect();
        Primal::new(p, self.d2_adjoint(lambda), self.d3_adjoint(lambda))
    }

    fn cost(&self, w: &Primal<T>) -> Result<T> {
        self.check_primal(w)?;
        let cw = self.cell_weights(&self.rho_reciprocals(w.rho())?);
        let q = self.cell_momentum_squares(w);
        let mut total = T::zero();
        for (a, b) in q.iter().zip(&cw.m) {
            total += *a * *b;
        }
        let mut flux = T::zero();
        for (u, e) in w.u().data().iter().zip(&cw.e) {
            flux += *u * *u * *e;
        }
        Ok((total + self.gamma * flux) * self.grid.h_vol() * self.grid.ht())
    }

    fn kkt_residual(&self, w: &Primal<T>, lambda: &StaggeredField<T>) -> Result<KktResidual<T>> {
        self.check_primal(w)?;
        let n = self.n();
        let ne = self.graph.edge_count();
        let rec = self.rho_reciprocals(w.rho())?;
        let cw = self.cell_weights(&rec);
        let (cp, cu) = self.time_face_quadratics(w);
        let mut grad = self.apply_constraint_adjoint(lambda);
        let two = T::lit(2.0);
        for d in 0..self.grid.dim() {
            let k = self.face_weights(d, &cw.m);
            let p = w.p(d).data();
            grad.p_mut(d)
                .data_mut()
                .par_iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v += two * p[i] * k[i]);
        }
        let gamma = self.gamma;
        let edges = self.graph.edges();
        map_cells(grad.rho_mut().data_mut(), n, |k, o| {
            let r = &rec[k * n..(k + 1) * n];
            for i in 0..n {
                o[i] -= cp[k * n + i] * r[i] * r[i];
            }
            for (e, &(src, sink)) in edges.iter().enumerate() {
                let c = gamma * cu[k * ne + e];
                o[sink] -= c * r[sink] * r[sink];
                o[src] -= c * r[src] * r[src];
            }
        });
        let u = w.u().data();
        let tg = two * gamma;
        grad.u_mut()
            .data_mut()
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, v)| *v += tg * u[i] * cw.e[i]);
        let mut grad_lambda = self.apply_constraint(w);
        grad_lambda.axpy(-T::one(), &self.b);
        Ok(KktResidual {
            grad_w: grad,
            grad_lambda,
        })
    }

    fn hessian(&self, w: &Primal<T>, policy: ShiftPolicy) -> Result<VectorHessian<T>> {
        self.check_primal(w)?;
        let n = self.n();
        let ne = self.graph.edge_count();
        let rec = self.rho_reciprocals(w.rho())?;
        let cw = self.cell_weights(&rec);
        let (cp, cu) = self.time_face_quadratics(w);
        let two = T::lit(2.0);
        let p_diag = (0..self.grid.dim())
            .map(|d| self.face_weights(d, &cw.m).into_iter().map(|k| two * k).collect())
            .collect();
        let gamma = self.gamma;
        let edges = self.graph.edges();
        let mut g = vec![T::zero(); rec.len()];
        map_cells(&mut g, n, |k, o| {
            let r = &rec[k * n..(k + 1) * n];
            for i in 0..n {
                o[i] = two * cp[k * n + i] * r[i] * r[i] * r[i];
            }
            for (e, &(src, sink)) in edges.iter().enumerate() {
                let c = two * gamma * cu[k * ne + e];
                o[sink] += c * r[sink] * r[sink] * r[sink];
                o[src] += c * r[src] * r[src] * r[src];
            }
        });
        let mean = if g.is_empty() {
            T::zero()
        } else {
            kahan_sum(g.iter().copied()) / T::lit(g.len() as f64)
        };
        let shift = policy.shift(mean);
        g.iter_mut().for_each(|v| *v += shift);
        let u_diag = cw.e.iter().map(|e| two * gamma * *e).collect();
        Ok(VectorHessian {
            p_diag,
            rho_diag: g,
            u_diag,
            shift,
        })
    }

    fn assemble_schur(&self, hess: &VectorHessian<T>) -> Result<BlockStencil<T>> {
        let n = self.n();
        let g = &self.grid;
        let diag_block = |vals: &[T], scale: T| {
            let mut b = vec![T::zero(); n * n];
            for i in 0..n {
                b[i * n + i] = scale / vals[i];
            }
            b
        };
        let space = |d: usize, i: usize| diag_block(&hess.p_diag[d][i * n..(i + 1) * n], T::one() / (g.h(d) * g.h(d)));
        let time = |k: usize| diag_block(&hess.rho_diag[k * n..(k + 1) * n], T::one() / (g.ht() * g.ht()));
        let ne = self.graph.edge_count();
        let sw = self.graph.sqrt_weights();
        let edges = self.graph.edges();
        let cell = |c: usize| {
            let mut b = vec![T::zero(); n * n];
            for (e, &(src, sink)) in edges.iter().enumerate() {
                let v = sw[e] * sw[e] / hess.u_diag[c * ne + e];
                b[src * n + src] += v;
                b[sink * n + sink] += v;
                b[src * n + sink] -= v;
                b[sink * n + src] -= v;
            }
            b
        };
        Ok(BlockStencil::from_face_maps(g, n, space, time, cell))
    }

    fn max_step(&self, w: &Primal<T>, dw: &Primal<T>, cap: T) -> T {
        w.rho()
            .data()
            .iter()
            .zip(dw.rho().data())
            .filter(|(_, d)| **d < T::zero())
            .fold(cap, |acc, (r, d)| acc.min(-*r / *d))
    }

    fn admissible(&self, w: &Primal<T>) -> bool {
        w.rho().data().iter().all(|v| *v > positive_floor() && v.is_finite())
    }

    fn slice_masses(&self, w: &Primal<T>) -> Vec<T> {
        let per = self.grid.space_cells() * self.n();
        let hv = self.grid.h_vol();
        let mut out = vec![hv * kahan_sum(self.rho0.data().iter().copied())];
        for chunk in w.rho().data().chunks(per.max(1)) {
            out.push(hv * kahan_sum(chunk.iter().copied()));
        }
        out.push(hv * kahan_sum(self.rho1.data().iter().copied()));
        out
    }

    fn marginal_mass(&self) -> T {
        self.mass
    }

    fn dual_to_coords(&self, lambda: &StaggeredField<T>) -> Vec<T> {
        lambda.data().to_vec()
    }

    fn dual_kernel(&self) -> Vec<T> {
        vec![T::one(); self.grid.cells() * self.n()]
    }

    fn dual_from_coords(&self, coords: &[T]) -> StaggeredField<T> {
        StaggeredField::from_data(&self.grid, StaggerKind::CellCenter, self.node_layout(), coords.to_vec())
            .expect("coordinate vector matches dual shape")
    }
}
