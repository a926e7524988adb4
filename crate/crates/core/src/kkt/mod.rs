//! Reduced (Schur complement) solve of one SQP step.

pub mod ic;
pub mod pcg;
pub mod sparse;
mod step;

pub use ic::{ic_factorize, IcFactor, IdentityPreconditioner, Preconditioner, IC_SHIFTS};
pub use pcg::{pcg, pcg_with, Deflated, PcgOutcome, DEFAULT_MAX_ITER};
pub use sparse::{BlockStencil, SparseSym};
pub use step::{back_substitute, solve_reduced, StepSolution};
