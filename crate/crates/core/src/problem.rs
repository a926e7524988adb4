//! Interface shared by the matrix-valued and vector-valued problems.

use crate::error::Result;
use crate::grid::{BlockLayout, Grid, Primal, StaggeredField};
use crate::kkt::BlockStencil;
use crate::scalar::Real;

/// Rule for the diagonal shift added to the density block of the Hessian
/// approximation: `shift = max(floor, relative * mean diag(g))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftPolicy {
    pub floor: f64,
    pub relative: f64,
}

impl Default for ShiftPolicy {
    fn default() -> Self {
        Self {
            floor: 1e-8,
            relative: 1e-8,
        }
    }
}

impl ShiftPolicy {
    pub fn shift<T: Real>(&self, mean_diag: T) -> T {
        T::lit(self.floor).max(T::lit(self.relative) * mean_diag)
    }
}

/// Block-diagonal approximation `Â` of the objective Hessian.
pub trait HessianApprox<T: Real>: Send + Sync {
    fn apply(&self, x: &Primal<T>) -> Primal<T>;
    fn apply_inverse(&self, x: &Primal<T>) -> Primal<T>;
    /// Diagonal shift added to the density block.
    fn shift(&self) -> T;
}

/// Gradient of the Lagrangian with respect to the primal and dual variables.
#[derive(Clone, Debug)]
pub struct KktResidual<T> {
    pub grad_w: Primal<T>,
    pub grad_lambda: StaggeredField<T>,
}

impl<T: Real> KktResidual<T> {
    pub fn norm(&self) -> T {
        let w = self.grad_w.norm();
        let l = self.grad_lambda.norm();
        (w * w + l * l).sqrt()
    }
}

/// A discretized dynamic transport problem
/// `min f(w)  s.t.  D w = b` on a staggered grid.
///
/// The Lagrangian is `f(w)/(h_vol h_t) + <λ, D w - b>`.
pub trait TransportProblem<T: Real>: Sync {
    type Hessian: HessianApprox<T>;

    fn grid(&self) -> &Grid<T>;
    fn gamma(&self) -> T;
    /// Per-cell layout of the multiplier field.
    fn dual_layout(&self) -> BlockLayout;

    /// Densities interpolated linearly in time, zero momentum and flux.
    fn initial_primal(&self) -> Primal<T>;
    fn zero_primal(&self) -> Primal<T>;
    fn zero_dual(&self) -> StaggeredField<T>;

    /// `b`
    fn constraint_rhs(&self) -> &StaggeredField<T>;
    /// `D w` (without subtracting `b`).
    fn apply_constraint(&self, w: &Primal<T>) -> StaggeredField<T>;
    /// `D* λ`
    fn apply_constraint_adjoint(&self, lambda: &StaggeredField<T>) -> Primal<T>;

    /// Discrete objective `f(w)`, including cell volumes.
    fn cost(&self, w: &Primal<T>) -> Result<T>;
    fn kkt_residual(&self, w: &Primal<T>, lambda: &StaggeredField<T>) -> Result<KktResidual<T>>;
    fn hessian(&self, w: &Primal<T>, policy: ShiftPolicy) -> Result<Self::Hessian>;
    /// `D Â⁻¹ D*` in orthonormal coordinates of the multiplier blocks.
    fn assemble_schur(&self, hess: &Self::Hessian) -> Result<BlockStencil<T>>;

    /// Largest `α ≤ cap` (up to bisection accuracy) keeping `w + α dw` admissible.
    fn max_step(&self, w: &Primal<T>, dw: &Primal<T>, cap: T) -> T;
    /// Strict positivity of every density block.
    fn admissible(&self, w: &Primal<T>) -> bool;

    /// Total mass of every time slice: `ρ⁰`, each interior slice, `ρ¹`.
    fn slice_masses(&self, w: &Primal<T>) -> Vec<T>;
    fn marginal_mass(&self) -> T;

    fn dual_to_coords(&self, lambda: &StaggeredField<T>) -> Vec<T>;
    /// Coordinates of the multiplier that `D*` annihilates (constant in
    /// space and time); it spans the kernel of the Schur complement.
    fn dual_kernel(&self) -> Vec<T>;
    fn dual_from_coords(&self, coords: &[T]) -> StaggeredField<T>;
}
