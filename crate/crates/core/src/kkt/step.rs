use log::debug;

use super::ic::ic_factorize;
use super::ic::Preconditioner;
use super::pcg::{pcg, Deflated};
use crate::error::Result;
use crate::grid::{Primal, StaggeredField};
use crate::problem::{HessianApprox, KktResidual, TransportProblem};
use crate::scalar::Real;

/// Primal-dual step of one SQP iteration plus inner solver statistics.
#[derive(Clone, Debug)]
pub struct StepSolution<T> {
    pub dw: Primal<T>,
    pub dlambda: StaggeredField<T>,
    pub pcg_iterations: usize,
    pub pcg_converged: bool,
    pub pcg_residual: T,
    /// Relative diagonal shift the incomplete Cholesky factor needed.
    pub ic_shift: T,
}

/// `D Â⁻¹ D* δλ = ∇_λL − D Â⁻¹ ∇_wL`, solved by IC-preconditioned CG.
pub fn solve_reduced<T: Real, P: TransportProblem<T>>(
    prob: &P,
    hess: &P::Hessian,
    res: &KktResidual<T>,
    tol_inner: T,
    max_inner: usize,
) -> Result<StepSolution<T>> {
    let mut rhs = res.grad_lambda.clone();
    let ainv_gw = hess.apply_inverse(&res.grad_w);
    rhs.axpy(-T::one(), &prob.apply_constraint(&ainv_gw));
    let mut rhs_c = prob.dual_to_coords(&rhs);

    let schur = prob.assemble_schur(hess)?.to_sparse()?;
    let ic = ic_factorize(&schur)?;
    // the system is singular along constant multipliers; the right-hand
    // side is consistent up to rounding, so solve on the complement
    let precond = Deflated::new(&ic, prob.dual_kernel());
    precond.project(&mut rhs_c);
    let out = pcg(&schur, &precond, &rhs_c, tol_inner, max_inner)?;
    debug!(
        "reduced solve: dim {} nnz {} iters {} rel {:e}",
        schur.dim(),
        schur.nnz_lower(),
        out.iterations,
        out.rel_residual.to_f64_lossy()
    );
    let dlambda = prob.dual_from_coords(&out.solution);
    let dw = back_substitute(prob, hess, &dlambda, &res.grad_w);
    Ok(StepSolution {
        dw,
        dlambda,
        pcg_iterations: out.iterations,
        pcg_converged: out.converged,
        pcg_residual: out.rel_residual,
        ic_shift: ic.shift(),
    })
}

/// `δw = −Â⁻¹ (D* δλ + ∇_wL)`
pub fn back_substitute<T: Real, P: TransportProblem<T>>(
    prob: &P,
    hess: &P::Hessian,
    dlambda: &StaggeredField<T>,
    grad_w: &Primal<T>,
) -> Primal<T> {
    let mut r = prob.apply_constraint_adjoint(dlambda);
    r.axpy(T::one(), grad_w);
    let mut dw = hess.apply_inverse(&r);
    dw.scale(-T::one());
    dw
}
