//! Matrix-valued transport: densities are fields of SPD blocks and the
//! internal flux enters through the commutator gradient of an operator basis.

mod basis;

pub use basis::OperatorBasis;

use rayon::prelude::*;

use crate::block::{
    block_inverse, dense_cholesky, dense_cholesky_inverse, packed_len, sym_from_full, sym_map_matrix, GenBlock,
    SymBlock,
};
use crate::error::{Error, Result};
use crate::grid::{BlockLayout, Grid, Primal, StaggerKind, StaggeredField};
use crate::kkt::BlockStencil;
use crate::problem::{HessianApprox, KktResidual, ShiftPolicy, TransportProblem};
use crate::scalar::{kahan_sum, Real};
use crate::stencil::{self, map_cells};

/// Bisection steps used to locate the positivity boundary along a step.
pub const MAX_STEP_BISECTIONS: usize = 12;

/// Discretized matrix-valued transport problem.
#[derive(Clone, Debug)]
pub struct MatrixProblem<T> {
    grid: Grid<T>,
    basis: OperatorBasis<T>,
    gamma: T,
    rho0: StaggeredField<T>,
    rho1: StaggeredField<T>,
    inv0: Vec<SymBlock<T>>,
    inv1: Vec<SymBlock<T>>,
    b: StaggeredField<T>,
    mass: T,
}

/// Relative tolerance for the unit-mass check of marginals.
pub(crate) fn mass_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(100.0))
}

impl<T: Real> MatrixProblem<T> {
    /// Validates the marginals (SPD with an eigenvalue floor, unit trace mass)
    /// and the operator basis (kernel spanned by the identity).
    pub fn new(
        grid: Grid<T>,
        basis: OperatorBasis<T>,
        gamma: T,
        rho0: StaggeredField<T>,
        rho1: StaggeredField<T>,
    ) -> Result<Self> {
        let n = basis.dim();
        if !(gamma > T::zero()) || !gamma.is_finite() {
            return Err(Error::InvalidProblem(format!("gamma must be positive, got {gamma}")));
        }
        let kernel = basis.verify_kernel();
        if kernel != 1 {
            return Err(Error::KernelAssumption(kernel));
        }
        let mut inverses = Vec::with_capacity(2);
        let mut masses = Vec::with_capacity(2);
        for (name, rho) in [("rho0", &rho0), ("rho1", &rho1)] {
            if rho.kind() != StaggerKind::SpaceCenter
                || rho.layout() != (BlockLayout::Sym { n })
                || rho.len() != grid.space_cells()
            {
                return Err(Error::ShapeMismatch(format!(
                    "{name} must hold one packed {n}x{n} block per spatial cell"
                )));
            }
            let mut inv = Vec::with_capacity(rho.len());
            for s in 0..rho.len() {
                let blk = rho.sym(s);
                let floor = T::lit(1e-10) * blk.trace() / T::lit(n as f64);
                if !blk.is_positive_definite() || !(blk.min_eigenvalue() >= floor) {
                    return Err(Error::NotPositiveDefinite(format!("{name} block at cell {s}")));
                }
                inv.push(block_inverse(&blk)?);
            }
            inverses.push(inv);
            masses.push(grid.h_vol() * kahan_sum((0..rho.len()).map(|s| rho.sym(s).trace())));
        }
        for m in &masses {
            if (*m - T::one()).abs() > mass_tolerance() {
                return Err(Error::InvalidProblem(format!("marginal mass is {m}, expected 1")));
            }
        }
        let b_data = stencil::boundary_rhs(&grid, rho0.data(), rho1.data(), packed_len(n));
        let b = StaggeredField::from_data(&grid, StaggerKind::CellCenter, BlockLayout::Sym { n }, b_data)?;
        let inv1 = inverses.pop().unwrap_or_default();
        let inv0 = inverses.pop().unwrap_or_default();
        Ok(Self {
            mass: masses[0],
            grid,
            basis,
            gamma,
            rho0,
            rho1,
            inv0,
            inv1,
            b,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.basis.dim()
    }

    pub fn basis(&self) -> &OperatorBasis<T> {
        &self.basis
    }

    pub fn rho0(&self) -> &StaggeredField<T> {
        &self.rho0
    }

    pub fn rho1(&self) -> &StaggeredField<T> {
        &self.rho1
    }

    fn sym_layout(&self) -> BlockLayout {
        BlockLayout::Sym { n: self.n() }
    }

    /// Boundary field `a`: `½(ρ⁰)⁻¹` on the first layer, `½(ρ¹)⁻¹` on the last.
    pub fn boundary_inverse(&self) -> StaggeredField<T> {
        let g = &self.grid;
        let ns = g.space_cells();
        let mut a = StaggeredField::zeros(g, StaggerKind::CellCenter, self.sym_layout());
        let half = T::lit(0.5);
        for s in 0..ns {
            let last = (g.nt() - 1) * ns + s;
            let mut lo = a.sym(s);
            lo.add_scaled(half, &self.inv0[s]);
            a.set_sym(s, &lo);
            let mut hi = a.sym(last);
            hi.add_scaled(half, &self.inv1[s]);
            a.set_sym(last, &hi);
        }
        a
    }

    pub fn d1(&self, axis: usize, p: &StaggeredField<T>) -> StaggeredField<T> {
        let n = self.n();
        let s = packed_len(n);
        let mut sym = vec![T::zero(); p.len() * s];
        for (i, chunk) in sym.chunks_mut(s).enumerate() {
            chunk.copy_from_slice(p.gen(i, 0).sym_part().packed());
        }
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, self.sym_layout());
        stencil::space_diff_add(&self.grid, axis, &sym, s, out.data_mut());
        out
    }

    pub fn d1_adjoint(&self, axis: usize, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let n = self.n();
        let s = packed_len(n);
        let nface = self.grid.count(StaggerKind::SpaceFace(axis));
        let mut packed = vec![T::zero(); nface * s];
        stencil::space_diff_adjoint(&self.grid, axis, lambda.data(), s, &mut packed);
        let mut out = StaggeredField::zeros(
            &self.grid,
            StaggerKind::SpaceFace(axis),
            BlockLayout::Gen { n, count: 1 },
        );
        for (i, chunk) in packed.chunks(s).enumerate() {
            out.set_gen(i, 0, &SymBlock::from_packed(n, chunk).to_full());
        }
        out
    }

    pub fn d2(&self, rho: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, self.sym_layout());
        stencil::time_diff_add(&self.grid, rho.data(), rho.stride(), out.data_mut());
        out
    }

    pub fn d2_adjoint(&self, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::TimeFace, self.sym_layout());
        stencil::time_diff_adjoint(&self.grid, lambda.data(), lambda.stride(), out.data_mut());
        out
    }

    /// `−½ Σ_k [L_k, u_k − u_kᵀ]` per cell.
    pub fn d3(&self, u: &StaggeredField<T>) -> StaggeredField<T> {
        let nb = self.basis.len();
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, self.sym_layout());
        let stride = out.stride();
        map_cells(out.data_mut(), stride, |c, o| {
            let y: Vec<GenBlock<T>> = (0..nb).map(|k| u.gen(c, k).minus_transpose()).collect();
            let d = self.basis.div(&y).expect("basis shape").scale(T::lit(-0.5));
            o.copy_from_slice(d.packed());
        });
        out
    }

    /// `(−[L_k, λ])_k` per cell.
    pub fn d3_adjoint(&self, lambda: &StaggeredField<T>) -> StaggeredField<T> {
        let n = self.n();
        let nb = self.basis.len();
        let mut out = StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, BlockLayout::Gen { n, count: nb });
        let stride = out.stride();
        map_cells(out.data_mut(), stride, |c, o| {
            for (k, g) in self.basis.grad(&lambda.sym(c)).into_iter().enumerate() {
                let g = g.scale(-T::one());
                o[k * n * n..(k + 1) * n * n].copy_from_slice(g.as_slice());
            }
        });
        out
    }

    fn rho_inverses(&self, rho: &StaggeredField<T>) -> Result<Vec<SymBlock<T>>> {
        (0..rho.len())
            .into_par_iter()
            .map(|i| {
                block_inverse(&rho.sym(i))
                    .map_err(|_| Error::NotPositiveDefinite(format!("density block at time face {i}")))
            })
            .collect()
    }

    /// `M = A₂(ρ⁻¹) + a` per cell.
    fn cell_weights(&self, rho_inv: &[SymBlock<T>]) -> Vec<SymBlock<T>> {
        let g = &self.grid;
        let ns = g.space_cells();
        let nt = g.nt();
        let half = T::lit(0.5);
        (0..g.cells())
            .into_par_iter()
            .map(|c| {
                let (t, s) = (c / ns, c % ns);
                let below = if t == 0 {
                    &self.inv0[s]
                } else {
                    &rho_inv[(t - 1) * ns + s]
                };
                let above = if t + 1 == nt {
                    &self.inv1[s]
                } else {
                    &rho_inv[t * ns + s]
                };
                below.add(above).scale(half)
            })
            .collect()
    }

    /// `A₁(pᵀp) + γ Σ_k u_kᵀu_k` per cell.
    fn cell_quadratics(&self, w: &Primal<T>) -> Vec<SymBlock<T>> {
        let g = &self.grid;
        let ns = g.space_cells();
        let half = T::lit(0.5);
        (0..g.cells())
            .into_par_iter()
            .map(|c| {
                let (t, s) = (c / ns, c % ns);
                let mut q = GenBlock::zeros(self.n());
                for d in 0..g.dim() {
                    let nf = g.faces_per_slice(d);
                    let (lo, hi) = g.cell_faces(d, s);
                    for f in [lo, hi].into_iter().flatten() {
                        let p = w.p(d).gen(t * nf + f, 0);
                        q.add_scaled(half, &p.tmul(&p));
                    }
                }
                for k in 0..self.basis.len() {
                    let u = w.u().gen(c, k);
                    q.add_scaled(self.gamma, &u.tmul(&u));
                }
                sym_from_full(&q)
            })
            .collect()
    }

    /// Face weights `K = A₁*(M)` for every face of `axis`.
    fn face_weights(&self, axis: usize, m: &[SymBlock<T>]) -> Vec<SymBlock<T>> {
        let g = &self.grid;
        let ns = g.space_cells();
        let nf = g.faces_per_slice(axis);
        (0..g.count(StaggerKind::SpaceFace(axis)))
            .into_par_iter()
            .map(|i| {
                let (t, f) = (i / nf, i % nf);
                let (lo, hi) = g.face_cells(axis, f);
                m[t * ns + lo].add(&m[t * ns + hi]).scale(T::lit(0.5))
            })
            .collect()
    }

    /// `C = A₂*(quadratics)` for every interior time face.
    fn time_face_quadratics(&self, q: &[SymBlock<T>]) -> Vec<SymBlock<T>> {
        let ns = self.grid.space_cells();
        (0..self.grid.count(StaggerKind::TimeFace))
            .into_par_iter()
            .map(|k| q[k].add(&q[k + ns]).scale(T::lit(0.5)))
            .collect()
    }

    fn check_primal(&self, w: &Primal<T>) -> Result<()> {
        let n = self.n();
        let g = &self.grid;
        let ok = w.dim() == g.dim()
            && (0..g.dim()).all(|d| {
                w.p(d).kind() == StaggerKind::SpaceFace(d)
                    && w.p(d).layout() == (BlockLayout::Gen { n, count: 1 })
                    && w.p(d).len() == g.count(StaggerKind::SpaceFace(d))
            })
            && w.rho().layout() == self.sym_layout()
            && w.rho().len() == g.count(StaggerKind::TimeFace)
            && w.u().layout()
                == (BlockLayout::Gen {
                    n,
                    count: self.basis.len(),
                })
            && w.u().len() == g.cells();
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("primal fields do not match the problem".into()))
        }
    }
}

/// Block-diagonal Hessian approximation of the matrix problem.
#[derive(Clone, Debug)]
pub struct MatrixHessian<T> {
    n: usize,
    gamma: T,
    /// Per axis, per face: `K` and `K⁻¹`.
    k_face: Vec<Vec<(SymBlock<T>, SymBlock<T>)>>,
    /// Per cell: `M` and `M⁻¹`.
    m_cell: Vec<(SymBlock<T>, SymBlock<T>)>,
    /// Per time face: coordinate matrix of `g + shift I` and its inverse.
    g: Vec<T>,
    g_inv: Vec<T>,
    shift: T,
}

impl<T: Real> MatrixHessian<T> {
    /// Coordinate matrix (`s x s`, orthonormal symmetric basis) of the density
    /// block at time face `k`, shift included.
    pub fn rho_block(&self, k: usize) -> &[T] {
        let s = packed_len(self.n);
        &self.g[k * s * s..(k + 1) * s * s]
    }

    pub fn rho_block_inverse(&self, k: usize) -> &[T] {
        let s = packed_len(self.n);
        &self.g_inv[k * s * s..(k + 1) * s * s]
    }

    pub fn face_weight(&self, axis: usize, face: usize) -> &SymBlock<T> {
        &self.k_face[axis][face].0
    }

    pub fn cell_weight(&self, cell: usize) -> &SymBlock<T> {
        &self.m_cell[cell].0
    }

    fn map_rho(&self, x: &StaggeredField<T>, mats: &[T]) -> StaggeredField<T> {
        let n = self.n;
        let s = packed_len(n);
        let mut out = x.zeros_like();
        map_cells(out.data_mut(), s, |k, o| {
            let mut cx = vec![T::zero(); s];
            x.sym(k).to_coords(&mut cx);
            let m = &mats[k * s * s..(k + 1) * s * s];
            let y: Vec<T> = (0..s)
                .map(|a| (0..s).map(|b| m[a * s + b] * cx[b]).fold(T::zero(), |acc, v| acc + v))
                .collect();
            o.copy_from_slice(SymBlock::from_coords(n, &y).packed());
        });
        out
    }

    fn map_gen(
        x: &StaggeredField<T>,
        n: usize,
        weights: &[(SymBlock<T>, SymBlock<T>)],
        inverse: bool,
        factor: T,
    ) -> StaggeredField<T> {
        let mut out = x.zeros_like();
        let count = x.stride() / (n * n).max(1);
        let stride = x.stride();
        map_cells(out.data_mut(), stride, |i, o| {
            let w = if inverse { weights[i].1 } else { weights[i].0 };
            let wf = w.to_full();
            for k in 0..count {
                let y = x.gen(i, k).mul(&wf).scale(factor);
                o[k * n * n..(k + 1) * n * n].copy_from_slice(y.as_slice());
            }
        });
        out
    }
}

impl<T: Real> HessianApprox<T> for MatrixHessian<T> {
    fn apply(&self, x: &Primal<T>) -> Primal<T> {
        let two = T::lit(2.0);
        let p = (0..x.dim())
            .map(|d| Self::map_gen(x.p(d), self.n, &self.k_face[d], false, two))
            .collect();
        let rho = self.map_rho(x.rho(), &self.g);
        let u = Self::map_gen(x.u(), self.n, &self.m_cell, false, two * self.gamma);
        Primal::new(p, rho, u)
    }

    fn apply_inverse(&self, x: &Primal<T>) -> Primal<T> {
        let half = T::lit(0.5);
        let p = (0..x.dim())
            .map(|d| Self::map_gen(x.p(d), self.n, &self.k_face[d], true, half))
            .collect();
        let rho = self.map_rho(x.rho(), &self.g_inv);
        let u = Self::map_gen(x.u(), self.n, &self.m_cell, true, half / self.gamma);
        Primal::new(p, rho, u)
    }

    fn shift(&self) -> T {
        self.shift
    }
}

fn with_inverse<T: Real>(b: SymBlock<T>) -> Result<(SymBlock<T>, SymBlock<T>)> {
    Ok((b, block_inverse(&b)?))
}

impl<T: Real> TransportProblem<T> for MatrixProblem<T> {
    type Hessian = MatrixHessian<T>;

    fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    fn gamma(&self) -> T {
        self.gamma
    }

    fn dual_layout(&self) -> BlockLayout {
        self.sym_layout()
    }

    fn initial_primal(&self) -> Primal<T> {
        let mut w = self.zero_primal();
        let g = &self.grid;
        let ns = g.space_cells();
        let nt = T::lit(g.nt() as f64);
        let rho = w.rho_mut();
        for k in 0..g.nt().saturating_sub(1) {
            let tau = T::lit((k + 1) as f64) / nt;
            for s in 0..ns {
                let blk = self.rho0.sym(s).scale(T::one() - tau).add(&self.rho1.sym(s).scale(tau));
                rho.set_sym(k * ns + s, &blk);
            }
        }
        w
    }

    fn zero_primal(&self) -> Primal<T> {
        let g = &self.grid;
        let n = self.n();
        let p = (0..g.dim())
            .map(|d| StaggeredField::zeros(g, StaggerKind::SpaceFace(d), BlockLayout::Gen { n, count: 1 }))
            .collect();
        let rho = StaggeredField::zeros(g, StaggerKind::TimeFace, self.sym_layout());
        let u = StaggeredField::zeros(
            g,
            StaggerKind::CellCenter,
            BlockLayout::Gen {
                n,
                count: self.basis.len(),
            },
        );
        Primal::new(p, rho, u)
    }

    fn zero_dual(&self) -> StaggeredField<T> {
        StaggeredField::zeros(&self.grid, StaggerKind::CellCenter, self.sym_layout())
    }

    fn constraint_rhs(&self) -> &StaggeredField<T> {
        &self.b
    }

    fn apply_constraint(&self, w: &Primal<T>) -> StaggeredField<T> {
        let mut out = self.d2(w.rho());
        for d in 0..self.grid.dim() {
            out.axpy(T::one(), &self.d1(d, w.p(d)));
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
        let m = self.cell_weights(&self.rho_inverses(w.rho())?);
        let q = self.cell_quadratics(w);
        let total = q.iter().zip(&m).fold(T::zero(), |acc, (a, b)| acc + a.inner(b));
        Ok(total * self.grid.h_vol() * self.grid.ht())
    }

    fn kkt_residual(&self, w: &Primal<T>, lambda: &StaggeredField<T>) -> Result<KktResidual<T>> {
        self.check_primal(w)?;
        let n = self.n();
        let g = &self.grid;
        let rho_inv = self.rho_inverses(w.rho())?;
        let m = self.cell_weights(&rho_inv);
        let q = self.cell_quadratics(w);
        let c = self.time_face_quadratics(&q);
        let mut grad = self.apply_constraint_adjoint(lambda);
        let two = T::lit(2.0);
        for d in 0..g.dim() {
            let k = self.face_weights(d, &m);
            let p = w.p(d);
            let gp = grad.p_mut(d);
            map_cells(gp.data_mut(), n * n, |i, o| {
                let y = p.gen(i, 0).mul(&k[i].to_full()).scale(two);
                for (a, b) in o.iter_mut().zip(y.as_slice()) {
                    *a += *b;
                }
            });
        }
        let gr = grad.rho_mut();
        let stride = gr.stride();
        map_cells(gr.data_mut(), stride, |i, o| {
            let ri = rho_inv[i].to_full();
            let y = sym_from_full(&ri.mul(&c[i].to_full()).mul(&ri));
            for (a, b) in o.iter_mut().zip(y.packed()) {
                *a -= *b;
            }
        });
        let u = w.u();
        let nb = self.basis.len();
        let gu = grad.u_mut();
        let stride = gu.stride();
        let tg = two * self.gamma;
        map_cells(gu.data_mut(), stride, |i, o| {
            let mf = m[i].to_full();
            for k in 0..nb {
                let y = u.gen(i, k).mul(&mf).scale(tg);
                for (a, b) in o[k * n * n..(k + 1) * n * n].iter_mut().zip(y.as_slice()) {
                    *a += *b;
                }
            }
        });
        let mut grad_lambda = self.apply_constraint(w);
        grad_lambda.axpy(-T::one(), &self.b);
        Ok(KktResidual {
            grad_w: grad,
            grad_lambda,
        })
    }

    fn hessian(&self, w: &Primal<T>, policy: ShiftPolicy) -> Result<MatrixHessian<T>> {
        self.check_primal(w)?;
        let n = self.n();
        let s = packed_len(n);
        let g = &self.grid;
        let rho_inv = self.rho_inverses(w.rho())?;
        let m = self.cell_weights(&rho_inv);
        let q = self.cell_quadratics(w);
        let c = self.time_face_quadratics(&q);
        let k_face = (0..g.dim())
            .map(|d| {
                self.face_weights(d, &m)
                    .into_par_iter()
                    .map(with_inverse)
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let m_cell = m.into_par_iter().map(with_inverse).collect::<Result<Vec<_>>>()?;
        let nface = rho_inv.len();
        let mut gm = vec![T::zero(); nface * s * s];
        if s > 0 {
            gm.par_chunks_mut(s * s).enumerate().for_each(|(k, out)| {
                let ri = rho_inv[k].to_full();
                let a = ri.mul(&c[k].to_full()).mul(&ri);
                let mat = sym_map_matrix(n, |x| {
                    let xf = x.to_full();
                    sym_from_full(&a.mul(&xf).mul(&ri).add(&ri.mul(&xf).mul(&a)))
                });
                out.copy_from_slice(&mat);
            });
        }
        let diag_sum = kahan_sum(
            (0..nface)
                .flat_map(|k| (0..s).map(move |a| (k, a)))
                .map(|(k, a)| gm[k * s * s + a * s + a]),
        );
        let mean = if nface > 0 {
            diag_sum / T::lit((nface * s) as f64)
        } else {
            T::zero()
        };
        let shift = policy.shift(mean);
        let mut g_inv = vec![T::zero(); nface * s * s];
        if s > 0 {
            gm.par_chunks_mut(s * s)
                .zip(g_inv.par_chunks_mut(s * s))
                .try_for_each(|(gk, inv)| -> Result<()> {
                    for a in 0..s {
                        gk[a * s + a] += shift;
                    }
                    let mut l = gk.to_vec();
                    dense_cholesky(&mut l, s)?;
                    inv.copy_from_slice(&dense_cholesky_inverse(&l, s));
                    Ok(())
                })?;
        }
        Ok(MatrixHessian {
            n,
            gamma: self.gamma,
            k_face,
            m_cell,
            g: gm,
            g_inv,
            shift,
        })
    }

    fn assemble_schur(&self, hess: &MatrixHessian<T>) -> Result<BlockStencil<T>> {
        let n = self.n();
        let s = packed_len(n);
        let g = &self.grid;
        let ht2 = g.ht() * g.ht();
        let quarter = T::lit(0.25);
        let space = |d: usize, i: usize| {
            let kinv = hess.k_face[d][i].1.to_full();
            let h2 = g.h(d) * g.h(d);
            let mut mat = sym_map_matrix(n, |y| {
                let yf = y.to_full();
                sym_from_full(&yf.mul(&kinv).add(&kinv.mul(&yf)).scale(quarter))
            });
            mat.iter_mut().for_each(|v| *v /= h2);
            mat
        };
        let time = |k: usize| hess.rho_block_inverse(k).iter().map(|v| *v / ht2).collect();
        let nb = self.basis.len();
        let coef = T::lit(0.5) / self.gamma;
        let cell = |c: usize| {
            let minv = hess.m_cell[c].1.to_full();
            sym_map_matrix(n, |lam| {
                let z: Vec<GenBlock<T>> = self
                    .basis
                    .grad(lam)
                    .into_iter()
                    .map(|gk| gk.scale(-coef).mul(&minv).minus_transpose())
                    .collect();
                debug_assert_eq!(z.len(), nb);
                self.basis.div(&z).expect("basis shape").scale(T::lit(-0.5))
            })
        };
        Ok(BlockStencil::from_face_maps(g, s, space, time, cell))
    }

    fn max_step(&self, w: &Primal<T>, dw: &Primal<T>, cap: T) -> T {
        let rho = w.rho();
        let drho = dw.rho();
        let feasible = |alpha: T| {
            (0..rho.len()).into_par_iter().all(|i| {
                let mut b = rho.sym(i);
                b.add_scaled(alpha, &drho.sym(i));
                b.is_positive_definite()
            })
        };
        if feasible(cap) {
            return cap;
        }
        let (mut lo, mut hi) = (T::zero(), cap);
        for _ in 0..MAX_STEP_BISECTIONS {
            let mid = T::lit(0.5) * (lo + hi);
            if feasible(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn admissible(&self, w: &Primal<T>) -> bool {
        let rho = w.rho();
        (0..rho.len())
            .into_par_iter()
            .all(|i| rho.sym(i).is_positive_definite())
    }

    fn slice_masses(&self, w: &Primal<T>) -> Vec<T> {
        let ns = self.grid.space_cells();
        let hv = self.grid.h_vol();
        let slice = |f: &StaggeredField<T>, k: usize| hv * kahan_sum((0..ns).map(|s| f.sym(k * ns + s).trace()));
        let mut out = vec![slice(&self.rho0, 0)];
        for k in 0..self.grid.nt().saturating_sub(1) {
            out.push(slice(w.rho(), k));
        }
        out.push(slice(&self.rho1, 0));
        out
    }

    fn marginal_mass(&self) -> T {
        self.mass
    }

    fn dual_to_coords(&self, lambda: &StaggeredField<T>) -> Vec<T> {
        let s = packed_len(self.n());
        let mut out = vec![T::zero(); lambda.len() * s];
        for (i, chunk) in out.chunks_mut(s).enumerate() {
            lambda.sym(i).to_coords(chunk);
        }
        out
    }

    fn dual_kernel(&self) -> Vec<T> {
        let mut id = self.zero_dual();
        let eye = SymBlock::identity(self.n());
        for c in 0..id.len() {
            id.set_sym(c, &eye);
        }
        self.dual_to_coords(&id)
    }

    fn dual_from_coords(&self, coords: &[T]) -> StaggeredField<T> {
        let n = self.n();
        let s = packed_len(n);
        let mut out = self.zero_dual();
        for (i, chunk) in coords.chunks(s).enumerate() {
            out.set_sym(i, &SymBlock::from_coords(n, chunk));
        }
        out
    }
}
