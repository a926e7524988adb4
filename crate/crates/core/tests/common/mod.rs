//! Shared helpers for the integration tests: random states and literal
//! re-implementations of the discrete problem used as oracles.
#![allow(dead_code)]

use momt::block::packed_len;
use momt::problem::{HessianApprox, ShiftPolicy, TransportProblem};
use momt::{BlockLayout, Grid, MatrixProblem, OperatorBasis, Primal, StaggeredField, VectorProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fill_normal(data: &mut [f64], rng: &mut ChaCha8Rng, scale: f64) {
    for v in data {
        *v = scale * (rng.gen::<f64>() * 2.0 - 1.0);
    }
}

/// Random symmetric positive-definite block with eigenvalues roughly in `[0.5, 3]`.
pub fn spd_block(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let b = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
    &b * b.transpose() + DMatrix::identity(n, n) * 0.5
}

pub fn pack(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(packed_len(n));
    for i in 0..n {
        for j in i..n {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unpack(n: usize, p: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = p[k];
            m[(j, i)] = p[k];
            k += 1;
        }
    }
    m
}

/// Row-major general block.
pub fn general(n: usize, d: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, &d[..n * n])
}

/// Random primal state with positive densities.
pub fn random_primal<P: TransportProblem<f64>>(prob: &P, seed: u64) -> Primal<f64> {
    let mut r = rng(seed);
    let mut w = prob.zero_primal();
    for d in 0..w.dim() {
        fill_normal(w.p_mut(d).data_mut(), &mut r, 0.5);
    }
    fill_normal(w.u_mut().data_mut(), &mut r, 0.5);
    let rho = w.rho_mut();
    match rho.layout() {
        BlockLayout::Sym { n } => {
            for i in 0..rho.len() {
                rho.at_mut(i).copy_from_slice(&pack(&spd_block(n, &mut r)));
            }
        }
        _ => rho.data_mut().iter_mut().for_each(|v| *v = 0.5 + r.gen::<f64>()),
    }
    w
}

pub fn random_dual<P: TransportProblem<f64>>(prob: &P, seed: u64) -> StaggeredField<f64> {
    let mut lambda = prob.zero_dual();
    fill_normal(lambda.data_mut(), &mut rng(seed), 1.0);
    lambda
}

/// `f(w)/(h_vol h_t) + <λ, Dw − b>`
pub fn lagrangian<P: TransportProblem<f64>>(prob: &P, w: &Primal<f64>, lambda: &StaggeredField<f64>) -> f64 {
    let g = prob.grid();
    let mut r = prob.apply_constraint(w);
    r.axpy(-1.0, prob.constraint_rhs());
    prob.cost(w).unwrap() / (g.h_vol() * g.ht()) + r.inner(lambda)
}

/// Gradient with off-diagonal packed entries doubled, i.e. the derivative
/// with respect to each stored scalar.
pub fn storage_gradient(fields: &[StaggeredField<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for f in fields {
        match f.layout() {
            BlockLayout::Sym { n } => {
                for i in 0..f.len() {
                    let mut k = 0;
                    for a in 0..n {
                        for b in a..n {
                            out.push(if a == b { f.at(i)[k] } else { 2.0 * f.at(i)[k] });
                            k += 1;
                        }
                    }
                }
            }
            _ => out.extend_from_slice(f.data()),
        }
    }
    out
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

/// Grid bookkeeping written independently of the library's face tables.
#[derive(Clone, Debug)]
pub struct Lattice {
    pub extents: Vec<usize>,
    pub nt: usize,
}

impl Lattice {
    pub fn new(extents: &[usize], nt: usize) -> Self {
        Self {
            extents: extents.to_vec(),
            nt,
        }
    }

    pub fn ns(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn h_vol(&self) -> f64 {
        self.extents.iter().map(|&e| 1.0 / e as f64).product()
    }

    pub fn ht(&self) -> f64 {
        1.0 / self.nt as f64
    }

    fn multi(&self, mut s: usize) -> Vec<usize> {
        self.extents
            .iter()
            .map(|&e| {
                let i = s % e;
                s /= e;
                i
            })
            .collect()
    }

    pub fn faces(&self, d: usize) -> usize {
        self.ns() / self.extents[d] * (self.extents[d] - 1)
    }

    /// Face index (within a time layer) of the face below / above cell `s` along `d`.
    pub fn cell_faces(&self, d: usize, s: usize) -> (Option<usize>, Option<usize>) {
        let idx = self.multi(s);
        let face_index = |m: &[usize]| {
            let mut f = 0;
            let mut stride = 1;
            for (k, &e) in self.extents.iter().enumerate() {
                let fe = if k == d { e - 1 } else { e };
                f += m[k] * stride;
                stride *= fe;
            }
            f
        };
        let lo = (idx[d] > 0).then(|| {
            let mut m = idx.clone();
            m[d] -= 1;
            face_index(&m)
        });
        let hi = (idx[d] + 1 < self.extents[d]).then(|| face_index(&idx));
        (lo, hi)
    }
}

/// Literal matrix problem: primal flattened as `p_0 .. p_{d-1}, ρ, u`.
pub struct MatrixOracle {
    pub lat: Lattice,
    pub n: usize,
    pub gamma: f64,
    pub basis: Vec<DMatrix<f64>>,
    pub rho0: Vec<DMatrix<f64>>,
    pub rho1: Vec<DMatrix<f64>>,
}

impl MatrixOracle {
    pub fn from_problem(prob: &MatrixProblem<f64>) -> Self {
        let g = prob.grid();
        let n = prob.n();
        let ns = g.space_cells();
        let basis = prob
            .basis()
            .elements()
            .iter()
            .map(|l| general(n, l.as_slice()))
            .collect();
        Self {
            lat: Lattice::new(g.extents(), g.nt()),
            n,
            gamma: prob.gamma(),
            basis,
            rho0: (0..ns).map(|s| unpack(n, prob.rho0().at(s))).collect(),
            rho1: (0..ns).map(|s| unpack(n, prob.rho1().at(s))).collect(),
        }
    }

    fn offsets(&self) -> (Vec<usize>, usize, usize, usize) {
        let n = self.n;
        let dim = self.lat.extents.len();
        let mut off = Vec::new();
        let mut acc = 0;
        for d in 0..dim {
            off.push(acc);
            acc += self.lat.faces(d) * self.lat.nt * n * n;
        }
        let rho = acc;
        acc += self.lat.ns() * (self.lat.nt - 1) * packed_len(n);
        let u = acc;
        acc += self.lat.ns() * self.lat.nt * self.basis.len() * n * n;
        (off, rho, u, acc)
    }

    pub fn len(&self) -> usize {
        self.offsets().3
    }

    pub fn constraint_len(&self) -> usize {
        self.lat.ns() * self.lat.nt * packed_len(self.n)
    }

    fn p(&self, x: &[f64], d: usize, t: usize, f: usize) -> DMatrix<f64> {
        let (off, ..) = self.offsets();
        let nn = self.n * self.n;
        general(self.n, &x[off[d] + (t * self.lat.faces(d) + f) * nn..])
    }

    fn rho(&self, x: &[f64], k: usize, s: usize) -> DMatrix<f64> {
        let (_, off, ..) = self.offsets();
        let pl = packed_len(self.n);
        unpack(
            self.n,
            &x[off + (k * self.lat.ns() + s) * pl..off + (k * self.lat.ns() + s + 1) * pl],
        )
    }

    fn u(&self, x: &[f64], c: usize, k: usize) -> DMatrix<f64> {
        let (_, _, off, _) = self.offsets();
        let nn = self.n * self.n;
        general(self.n, &x[off + (c * self.basis.len() + k) * nn..])
    }

    /// Density below (`ρ_{j−½}`) and above (`ρ_{j+½}`) cell layer `t`.
    fn densities(&self, x: &[f64], t: usize, s: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let below = if t == 0 {
            self.rho0[s].clone()
        } else {
            self.rho(x, t - 1, s)
        };
        let above = if t + 1 == self.lat.nt {
            self.rho1[s].clone()
        } else {
            self.rho(x, t, s)
        };
        (below, above)
    }

    /// Midpoint/trapezoid cost; `None` when a density block is not invertible.
    pub fn cost(&self, x: &[f64]) -> Option<f64> {
        let mut total = 0.0;
        for t in 0..self.lat.nt {
            for s in 0..self.lat.ns() {
                let mut q = DMatrix::zeros(self.n, self.n);
                for d in 0..self.lat.extents.len() {
                    let (lo, hi) = self.lat.cell_faces(d, s);
                    for f in [lo, hi].into_iter().flatten() {
                        let p = self.p(x, d, t, f);
                        q += 0.5 * p.transpose() * &p;
                    }
                }
                for k in 0..self.basis.len() {
                    let u = self.u(x, t * self.lat.ns() + s, k);
                    q += self.gamma * u.transpose() * &u;
                }
                let (below, above) = self.densities(x, t, s);
                let m = 0.5 * (below.try_inverse()? + above.try_inverse()?);
                total += (q * m).trace();
            }
        }
        Some(total * self.lat.h_vol() * self.lat.ht())
    }

    /// `D w` as packed symmetric blocks per cell.
    pub fn constraint(&self, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let ns = self.lat.ns();
        let mut out = Vec::with_capacity(self.constraint_len());
        for t in 0..self.lat.nt {
            for s in 0..ns {
                let mut r = DMatrix::zeros(n, n);
                for d in 0..self.lat.extents.len() {
                    let h = 1.0 / self.lat.extents[d] as f64;
                    let (lo, hi) = self.lat.cell_faces(d, s);
                    if let Some(f) = hi {
                        let p = self.p(x, d, t, f);
                        r += 0.5 * (&p + p.transpose()) / h;
                    }
                    if let Some(f) = lo {
                        let p = self.p(x, d, t, f);
                        r -= 0.5 * (&p + p.transpose()) / h;
                    }
                }
                if t + 1 < self.lat.nt {
                    r += self.rho(x, t, s) / self.lat.ht();
                }
                if t > 0 {
                    r -= self.rho(x, t - 1, s) / self.lat.ht();
                }
                for (k, l) in self.basis.iter().enumerate() {
                    let u = self.u(x, t * ns + s, k);
                    let y = &u - u.transpose();
                    r -= 0.5 * (l * &y - &y * l);
                }
                out.extend(pack(&r));
            }
        }
        out
    }

    pub fn rhs(&self) -> Vec<f64> {
        let n = self.n;
        let ns = self.lat.ns();
        let mut out = Vec::new();
        for t in 0..self.lat.nt {
            for s in 0..ns {
                let mut r = DMatrix::zeros(n, n);
                if t == 0 {
                    r += &self.rho0[s] / self.lat.ht();
                }
                if t + 1 == self.lat.nt {
                    r -= &self.rho1[s] / self.lat.ht();
                }
                out.extend(pack(&r));
            }
        }
        out
    }

    /// Linear interpolation of the marginals, zero momentum and flux.
    pub fn start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        let (_, off, ..) = self.offsets();
        let pl = packed_len(self.n);
        for k in 0..self.lat.nt - 1 {
            let tau = (k + 1) as f64 / self.lat.nt as f64;
            for s in 0..self.lat.ns() {
                let b = (1.0 - tau) * &self.rho0[s] + tau * &self.rho1[s];
                let i = off + (k * self.lat.ns() + s) * pl;
                x[i..i + pl].copy_from_slice(&pack(&b));
            }
        }
        x
    }

    pub fn admissible(&self, x: &[f64]) -> bool {
        (0..self.lat.nt - 1).all(|k| (0..self.lat.ns()).all(|s| self.rho(x, k, s).cholesky().is_some()))
    }
}

/// Literal vector problem: primal flattened as `p_0 .. p_{d-1}, ρ, u`.
pub struct VectorOracle {
    pub lat: Lattice,
    pub n: usize,
    pub gamma: f64,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
}

impl VectorOracle {
    pub fn from_problem(prob: &VectorProblem<f64>) -> Self {
        let g = prob.grid();
        Self {
            lat: Lattice::new(g.extents(), g.nt()),
            n: prob.n(),
            gamma: prob.gamma(),
            edges: prob.graph().edges().to_vec(),
            weights: prob.graph().weights().to_vec(),
            rho0: prob.rho0().data().to_vec(),
            rho1: prob.rho1().data().to_vec(),
        }
    }

    fn offsets(&self) -> (Vec<usize>, usize, usize, usize) {
        let mut off = Vec::new();
        let mut acc = 0;
        for d in 0..self.lat.extents.len() {
            off.push(acc);
            acc += self.lat.faces(d) * self.lat.nt * self.n;
        }
        let rho = acc;
        acc += self.lat.ns() * (self.lat.nt - 1) * self.n;
        let u = acc;
        acc += self.lat.ns() * self.lat.nt * self.edges.len();
        (off, rho, u, acc)
    }

    pub fn len(&self) -> usize {
        self.offsets().3
    }

    pub fn constraint_len(&self) -> usize {
        self.lat.ns() * self.lat.nt * self.n
    }

    fn rho_at(&self, x: &[f64], k: usize, s: usize, i: usize) -> f64 {
        let (_, off, ..) = self.offsets();
        x[off + (k * self.lat.ns() + s) * self.n + i]
    }

    fn densities(&self, x: &[f64], t: usize, s: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        let below = (0..n)
            .map(|i| {
                if t == 0 {
                    self.rho0[s * n + i]
                } else {
                    self.rho_at(x, t - 1, s, i)
                }
            })
            .collect();
        let above = (0..n)
            .map(|i| {
                if t + 1 == self.lat.nt {
                    self.rho1[s * n + i]
                } else {
                    self.rho_at(x, t, s, i)
                }
            })
            .collect();
        (below, above)
    }

    pub fn cost(&self, x: &[f64]) -> Option<f64> {
        let (poff, _, uoff, _) = self.offsets();
        let n = self.n;
        let ne = self.edges.len();
        let mut total = 0.0;
        for t in 0..self.lat.nt {
            for s in 0..self.lat.ns() {
                let (below, above) = self.densities(x, t, s);
                if below.iter().chain(&above).any(|v| *v <= 0.0) {
                    return None;
                }
                for i in 0..n {
                    let mut q = 0.0;
                    for d in 0..self.lat.extents.len() {
                        let (lo, hi) = self.lat.cell_faces(d, s);
                        for f in [lo, hi].into_iter().flatten() {
                            let p = x[poff[d] + (t * self.lat.faces(d) + f) * n + i];
                            q += 0.5 * p * p;
                        }
                    }
                    total += q * 0.5 * (1.0 / below[i] + 1.0 / above[i]);
                }
                for (e, &(a, b)) in self.edges.iter().enumerate() {
                    let u = x[uoff + (t * self.lat.ns() + s) * ne + e];
                    let weight = 0.5 * (1.0 / below[a] + 1.0 / below[b] + 1.0 / above[a] + 1.0 / above[b]);
                    total += self.gamma * u * u * weight;
                }
            }
        }
        Some(total * self.lat.h_vol() * self.lat.ht())
    }

    pub fn constraint(&self, x: &[f64]) -> Vec<f64> {
        let (poff, _, uoff, _) = self.offsets();
        let n = self.n;
        let ne = self.edges.len();
        let ns = self.lat.ns();
        let mut out = vec![0.0; self.constraint_len()];
        for t in 0..self.lat.nt {
            for s in 0..ns {
                let r = &mut out[(t * ns + s) * n..(t * ns + s + 1) * n];
                for d in 0..self.lat.extents.len() {
                    let h = 1.0 / self.lat.extents[d] as f64;
                    let (lo, hi) = self.lat.cell_faces(d, s);
                    for i in 0..n {
                        if let Some(f) = hi {
                            r[i] += x[poff[d] + (t * self.lat.faces(d) + f) * n + i] / h;
                        }
                        if let Some(f) = lo {
                            r[i] -= x[poff[d] + (t * self.lat.faces(d) + f) * n + i] / h;
                        }
                    }
                }
                for i in 0..n {
                    if t + 1 < self.lat.nt {
                        r[i] += self.rho_at(x, t, s, i) / self.lat.ht();
                    }
                    if t > 0 {
                        r[i] -= self.rho_at(x, t - 1, s, i) / self.lat.ht();
                    }
                }
                // −𝔻 W^{1/2} u: the source node loses, the sink gains
                for (e, &(a, b)) in self.edges.iter().enumerate() {
                    let flow = self.weights[e].sqrt() * x[uoff + (t * ns + s) * ne + e];
                    r[a] -= flow;
                    r[b] += flow;
                }
            }
        }
        out
    }

    pub fn rhs(&self) -> Vec<f64> {
        let n = self.n;
        let ns = self.lat.ns();
        let mut out = vec![0.0; self.constraint_len()];
        for s in 0..ns {
            for i in 0..n {
                out[s * n + i] += self.rho0[s * n + i] / self.lat.ht();
                out[((self.lat.nt - 1) * ns + s) * n + i] -= self.rho1[s * n + i] / self.lat.ht();
            }
        }
        out
    }

    pub fn start(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.len()];
        let (_, off, ..) = self.offsets();
        let n = self.n;
        for k in 0..self.lat.nt - 1 {
            let tau = (k + 1) as f64 / self.lat.nt as f64;
            for s in 0..self.lat.ns() {
                for i in 0..n {
                    x[off + (k * self.lat.ns() + s) * n + i] =
                        (1.0 - tau) * self.rho0[s * n + i] + tau * self.rho1[s * n + i];
                }
            }
        }
        x
    }

    pub fn admissible(&self, x: &[f64]) -> bool {
        let (_, off, uoff, _) = self.offsets();
        x[off..uoff].iter().all(|v| *v > 0.0)
    }
}

/// Dense matrix of a linear map given by its action.
pub fn dense_of(rows: usize, cols: usize, apply: impl Fn(&[f64]) -> Vec<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    let mut e = vec![0.0; cols];
    for j in 0..cols {
        e[j] = 1.0;
        let col = apply(&e);
        e[j] = 0.0;
        for i in 0..rows {
            m[(i, j)] = col[i];
        }
    }
    m
}

fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DVector<f64> {
    let mut y = x.to_vec();
    DVector::from_fn(x.len(), |i, _| {
        let xi = y[i];
        y[i] = xi + h;
        let fp = f(&y);
        y[i] = xi - h;
        let fm = f(&y);
        y[i] = xi;
        (fp - fm) / (2.0 * h)
    })
}

fn fd_hessian(f: &impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut y = x.to_vec();
    let mut hm = DMatrix::zeros(n, n);
    let f0 = f(x);
    for i in 0..n {
        for j in i..n {
            let v = if i == j {
                let xi = y[i];
                y[i] = xi + h;
                let fp = f(&y);
                y[i] = xi - h;
                let fm = f(&y);
                y[i] = xi;
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let (xi, xj) = (y[i], y[j]);
                let mut eval = |a: f64, b: f64| {
                    y[i] = xi + a;
                    y[j] = xj + b;
                    let v = f(&y);
                    y[i] = xi;
                    y[j] = xj;
                    v
                };
                (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
            };
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    hm
}

/// Damped Newton iteration on the KKT system of `min f s.t. D x = b`, with
/// derivatives of `f` taken by finite differences. Returns the final cost.
pub fn dense_newton(
    cost: impl Fn(&[f64]) -> Option<f64>,
    admissible: impl Fn(&[f64]) -> bool,
    d: &DMatrix<f64>,
    b: &[f64],
    start: Vec<f64>,
) -> f64 {
    let f = |x: &[f64]| cost(x).unwrap_or(f64::INFINITY);
    let (m, n) = (d.nrows(), d.ncols());
    let b = DVector::from_column_slice(b);
    let mut x = start;
    for _ in 0..60 {
        let g = fd_gradient(&f, &x, 1e-6);
        let h = fd_hessian(&f, &x, 1e-4);
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h);
        kkt.view_mut((0, n), (n, m)).copy_from(&d.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(d);
        let xv = DVector::from_column_slice(&x);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&g));
        rhs.rows_mut(n, m).copy_from(&(&b - d * &xv));
        let infeasible = rhs.rows(n, m).norm() > 1e-12 * b.norm();
        let sol = kkt.svd(true, true).solve(&rhs, 1e-11).expect("svd solve");
        let dx: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let decrease = -g.dot(&sol.rows(0, n));
        if !infeasible && decrease.abs() < 1e-15 * f(&x).abs().max(1.0) {
            break;
        }
        let f0 = f(&x);
        let mut alpha = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dx).map(|(a, s)| a + alpha * s).collect();
            // until the linear constraints hold, only positivity restricts the step
            if admissible(&trial) && (infeasible || f(&trial) <= f0 - 1e-4 * alpha * decrease.max(0.0)) {
                x = trial;
                break;
            }
            alpha *= 0.5;
            assert!(alpha > 1e-12, "dense Newton line search failed");
        }
    }
    f(&x)
}

pub fn matrix_grid(extents: &[usize], nt: usize) -> Grid<f64> {
    Grid::new(extents, nt).unwrap()
}

pub fn small_matrix_problem(extents: &[usize], nt: usize, n: usize, gamma: f64, seed: u64) -> MatrixProblem<f64> {
    let g = matrix_grid(extents, nt);
    let m = momt::generate::random_matrix(&g, n, seed).unwrap();
    MatrixProblem::new(g, OperatorBasis::default_for(n).unwrap(), gamma, m.rho0, m.rho1).unwrap()
}

pub fn small_vector_problem(
    extents: &[usize],
    nt: usize,
    graph: momt::Graph<f64>,
    gamma: f64,
    seed: u64,
) -> VectorProblem<f64> {
    let g = matrix_grid(extents, nt);
    let m = momt::generate::random_vector(&g, graph.nodes(), seed).unwrap();
    VectorProblem::new(g, graph, gamma, m.rho0, m.rho1).unwrap()
}

/// Central differences of the Lagrangian with respect to every stored scalar.
pub fn fd_lagrangian_gradient<P: TransportProblem<f64>>(
    prob: &P,
    w: &Primal<f64>,
    lambda: &StaggeredField<f64>,
) -> (Vec<f64>, Vec<f64>) {
    let mut wp = w.clone();
    let mut gw = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let x = *wp.flat_entry_mut(i);
        let h = 1e-6 * x.abs().max(1.0);
        *wp.flat_entry_mut(i) = x + h;
        let fp = lagrangian(prob, &wp, lambda);
        *wp.flat_entry_mut(i) = x - h;
        let fm = lagrangian(prob, &wp, lambda);
        *wp.flat_entry_mut(i) = x;
        gw.push((fp - fm) / (2.0 * h));
    }
    let mut lp = lambda.clone();
    let mut gl = Vec::with_capacity(lambda.data().len());
    for i in 0..lambda.data().len() {
        let x = lp.data()[i];
        lp.data_mut()[i] = x + 1.0;
        let fp = lagrangian(prob, w, &lp);
        lp.data_mut()[i] = x - 1.0;
        let fm = lagrangian(prob, w, &lp);
        lp.data_mut()[i] = x;
        gl.push((fp - fm) / 2.0);
    }
    (gw, gl)
}

/// Relative errors of the primal and dual residual fields against finite differences.
pub fn gradient_errors<P: TransportProblem<f64>>(prob: &P, seed: u64) -> (f64, f64) {
    let w = random_primal(prob, seed);
    let lambda = random_dual(prob, seed + 100);
    let res = prob.kkt_residual(&w, &lambda).unwrap();
    let (fd_w, fd_l) = fd_lagrangian_gradient(prob, &w, &lambda);
    let an_w = storage_gradient(res.grad_w.fields());
    let an_l = storage_gradient(std::slice::from_ref(&res.grad_lambda));
    (rel_err(&fd_w, &an_w), rel_err(&fd_l, &an_l))
}

/// `g δρ` recovered from the Hessian approximation (its density block minus the shift).
pub fn density_hessian_action<P: TransportProblem<f64>>(
    prob: &P,
    w: &Primal<f64>,
    drho: &StaggeredField<f64>,
) -> Vec<f64> {
    let hess = prob.hessian(w, ShiftPolicy::default()).unwrap();
    let mut dir = w.zeros_like();
    *dir.rho_mut() = drho.clone();
    let out = hess.apply(&dir);
    out.rho()
        .data()
        .iter()
        .zip(drho.data())
        .map(|(a, d)| a - hess.shift() * d)
        .collect()
}

/// Relative error of `g δρ` against differences of the density gradient.
pub fn density_hessian_error<P: TransportProblem<f64>>(prob: &P, seed: u64) -> f64 {
    let w = random_primal(prob, seed);
    let lambda = random_dual(prob, seed + 1);
    let mut drho = w.rho().zeros_like();
    fill_normal(drho.data_mut(), &mut rng(seed + 2), 1.0);
    let h = 1e-5;
    let grad_at = |s: f64| {
        let mut ws = w.clone();
        ws.rho_mut().axpy(s, &drho);
        prob.kkt_residual(&ws, &lambda).unwrap().grad_w.rho().data().to_vec()
    };
    let (gp, gm) = (grad_at(h), grad_at(-h));
    let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
    let an = density_hessian_action(prob, &w, &drho);
    rel_err(&fd, &an)
}
