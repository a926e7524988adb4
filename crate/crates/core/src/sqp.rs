//! Inexact SQP outer loop with a positivity-safeguarded line search on the
//! norm of the full KKT residual.

use log::{debug, info, warn};

use crate::error::{Error, Result};
use crate::grid::{Primal, StaggeredField};
use crate::kkt::{solve_reduced, DEFAULT_MAX_ITER};
use crate::problem::{KktResidual, ShiftPolicy, TransportProblem};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Target for `‖KKT residual‖ / ‖b‖` (or the absolute norm, see `absolute`).
    pub tol_outer: f64,
    /// Relative residual target of the inner conjugate gradient solve.
    pub tol_inner: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Step reduction factor applied on each backtrack.
    pub backtrack: f64,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Fraction-to-boundary factor.
    pub tau: f64,
    pub max_backtracks: usize,
    pub shift: ShiftPolicy,
    /// Test the absolute KKT norm instead of the one relative to `‖b‖`.
    pub absolute: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_outer: 1e-3,
            tol_inner: 1e-3,
            max_outer: 200,
            max_inner: DEFAULT_MAX_ITER,
            backtrack: 0.5,
            c1: 1e-4,
            tau: 0.995,
            max_backtracks: 30,
            shift: ShiftPolicy::default(),
            absolute: false,
        }
    }
}

impl SolverConfig {
    /// Defaults for matrix-valued problems.
    pub fn matrix() -> Self {
        Self::default()
    }

    /// Defaults for vector-valued problems (looser inner solve).
    pub fn vector() -> Self {
        Self {
            tol_inner: 1e-2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidProblem(format!("{name} must lie in (0, 1), got {v}")))
            }
        };
        unit("tol_outer", self.tol_outer)?;
        unit("tol_inner", self.tol_inner)?;
        unit("tau", self.tau)?;
        unit("backtrack", self.backtrack)?;
        unit("c1", self.c1)?;
        if self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::InvalidProblem("iteration caps must be positive".into()));
        }
        Ok(())
    }
}

/// Primal-dual iterate.
#[derive(Clone, Debug)]
pub struct SqpState<T> {
    pub w: Primal<T>,
    pub lambda: StaggeredField<T>,
    pub iteration: usize,
    /// Merit value of every accepted iterate, starting with the initial one.
    pub merit_history: Vec<T>,
}

/// One line of the convergence trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iter: usize,
    pub merit: f64,
    pub cost: f64,
    pub alpha: f64,
    pub pcg_iters: usize,
    pub shift: f64,
}

/// Diagnostics of one accepted step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub alpha: f64,
    pub alpha_max: f64,
    pub backtracks: usize,
    pub pcg_iters: usize,
    pub pcg_converged: bool,
    pub shift: f64,
    pub ic_shift: f64,
    pub merit_before: f64,
    pub merit_after: f64,
}

#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    pub state: SqpState<T>,
    /// Objective at the final iterate.
    pub distance2: T,
    pub converged: bool,
    /// Final value of the convergence metric.
    pub residual: f64,
    pub trace: Vec<TraceRecord>,
}

impl<T: Real> SolveResult<T> {
    pub fn iterations(&self) -> usize {
        self.state.iteration
    }
}

/// Linear-in-time densities, zero momentum, flux and multipliers.
pub fn initialize<T: Real, P: TransportProblem<T>>(prob: &P) -> Result<SqpState<T>> {
    if prob.grid().nt() < 2 {
        return Err(Error::InvalidProblem("at least two time steps are required".into()));
    }
    let w = prob.initial_primal();
    let lambda = prob.zero_dual();
    let merit = prob.kkt_residual(&w, &lambda)?.norm();
    Ok(SqpState {
        w,
        lambda,
        iteration: 0,
        merit_history: vec![merit],
    })
}

fn convergence_metric<T: Real, P: TransportProblem<T>>(prob: &P, merit: T, absolute: bool) -> T {
    if absolute {
        return merit;
    }
    let bn = prob.constraint_rhs().norm();
    if bn > T::zero() {
        merit / bn
    } else {
        merit
    }
}

/// Computes a step from `res` (the residual at `state`), line-searches it and
/// updates `state` in place. Returns the report and the residual at the new iterate.
pub fn sqp_step<T: Real, P: TransportProblem<T>>(
    prob: &P,
    state: &mut SqpState<T>,
    res: &KktResidual<T>,
    config: &SolverConfig,
) -> Result<(StepReport, KktResidual<T>)> {
    let merit = res.norm();
    let hess = prob.hessian(&state.w, config.shift)?;
    let step = solve_reduced(prob, &hess, res, T::lit(config.tol_inner), config.max_inner)?;

    // predicted decrease of the linearised residual: the primal rows hold
    // exactly, the constraint rows up to the inner solve residual
    let mut lin = prob.apply_constraint(&step.dw);
    lin.axpy(T::one(), &res.grad_lambda);
    let predicted = (merit - lin.norm()).max(T::zero());

    let tau = T::lit(config.tau);
    let cap = T::one() / tau;
    let alpha_max = prob.max_step(&state.w, &step.dw, cap);
    let mut alpha = if alpha_max >= cap { T::one() } else { tau * alpha_max };
    let c1 = T::lit(config.c1);
    let mut backtracks = 0;
    loop {
        let mut w = state.w.clone();
        w.axpy(alpha, &step.dw);
        let mut lambda = state.lambda.clone();
        lambda.axpy(alpha, &step.dlambda);
        if alpha > T::zero() && prob.admissible(&w) {
            if let Ok(new_res) = prob.kkt_residual(&w, &lambda) {
                let new_merit = new_res.norm();
                if new_merit < merit && new_merit <= merit - c1 * alpha * predicted {
                    if !prob.admissible(&w) {
                        return Err(Error::PositivityLost);
                    }
                    state.w = w;
                    state.lambda = lambda;
                    state.iteration += 1;
                    state.merit_history.push(new_merit);
                    let report = StepReport {
                        alpha: alpha.to_f64_lossy(),
                        alpha_max: alpha_max.to_f64_lossy(),
                        backtracks,
                        pcg_iters: step.pcg_iterations,
                        pcg_converged: step.pcg_converged,
                        shift: crate::problem::HessianApprox::shift(&hess).to_f64_lossy(),
                        ic_shift: step.ic_shift.to_f64_lossy(),
                        merit_before: merit.to_f64_lossy(),
                        merit_after: new_merit.to_f64_lossy(),
                    };
                    return Ok((report, new_res));
                }
            }
        }
        if backtracks == config.max_backtracks {
            return Err(Error::LineSearchFailed {
                backtracks,
                merit: merit.to_f64_lossy(),
                alpha_max: alpha_max.to_f64_lossy(),
            });
        }
        backtracks += 1;
        alpha *= T::lit(config.backtrack);
    }
}

/// Runs SQP iterations until the KKT residual meets `tol_outer` or the
/// iteration cap is reached (reported through `converged`).
pub fn solve<T: Real, P: TransportProblem<T>>(prob: &P, config: &SolverConfig) -> Result<SolveResult<T>> {
    config.validate()?;
    let mut state = initialize(prob)?;
    let mut res = prob.kkt_residual(&state.w, &state.lambda)?;
    let mut merit = res.norm();
    let mut metric = convergence_metric(prob, merit, config.absolute);
    let tol = T::lit(config.tol_outer);
    let mut trace = vec![TraceRecord {
        iter: 0,
        merit: merit.to_f64_lossy(),
        cost: prob.cost(&state.w)?.to_f64_lossy(),
        alpha: 0.0,
        pcg_iters: 0,
        shift: 0.0,
    }];
    let mut unconverged_inner = 0;
    while metric > tol && state.iteration < config.max_outer {
        let (report, new_res) = sqp_step(prob, &mut state, &res, config)?;
        res = new_res;
        merit = res.norm();
        metric = convergence_metric(prob, merit, config.absolute);
        if report.pcg_converged {
            unconverged_inner = 0;
        } else {
            unconverged_inner += 1;
            if unconverged_inner >= 2 {
                warn!(
                    "inner solve unconverged in {unconverged_inner} consecutive iterations; \
                     consider relaxing tol_inner ({:e}) or raising max_inner",
                    config.tol_inner
                );
            }
        }
        let cost = prob.cost(&state.w)?;
        debug!(
            "iter {} merit {:e} metric {:e} alpha {:.3e} (max {:.3e}, {} backtracks) pcg {} shift {:e}",
            state.iteration,
            report.merit_after,
            metric.to_f64_lossy(),
            report.alpha,
            report.alpha_max,
            report.backtracks,
            report.pcg_iters,
            report.shift
        );
        trace.push(TraceRecord {
            iter: state.iteration,
            merit: report.merit_after,
            cost: cost.to_f64_lossy(),
            alpha: report.alpha,
            pcg_iters: report.pcg_iters,
            shift: report.shift,
        });
    }
    let converged = metric <= tol;
    let distance2 = prob.cost(&state.w)?;
    if converged {
        info!(
            "converged in {} iterations, distance² {:e}",
            state.iteration,
            distance2.to_f64_lossy()
        );
    } else {
        warn!(
            "not converged after {} iterations (residual {:e})",
            state.iteration,
            metric.to_f64_lossy()
        );
    }
    Ok(SolveResult {
        state,
        distance2,
        converged,
        residual: metric.to_f64_lossy(),
        trace,
    })
}
