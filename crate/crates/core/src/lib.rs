//! Dynamic optimal mass transport for matrix-valued and vector-valued
//! densities.
//!
//! Both problems are discretized on a staggered space-time grid and solved
//! with an inexact SQP method: every step eliminates the primal update with
//! a block-diagonal Hessian approximation and solves the remaining Schur
//! complement system `D Â⁻¹ D*` by conjugate gradients preconditioned with a
//! zero fill-in incomplete Cholesky factor.
//!
//! The numerical core is generic over the scalar type (see [`scalar::Real`]);
//! the `*F64` aliases below cover the common case.
//!
//! ```no_run
//! use momt::{generate, sqp, Grid, MatrixProblem, OperatorBasis, SolverConfig};
//!
//! let grid = Grid::new(&[16, 16], 10)?;
//! let m = generate::matrix_disk_to_quarters(&grid, 10.0, &Default::default())?;
//! let prob = MatrixProblem::new(grid, OperatorBasis::default_for(3)?, 0.01, m.rho0, m.rho1)?;
//! let result = sqp::solve(&prob, &SolverConfig::matrix())?;
//! println!("distance² = {} after {} iterations", result.distance2, result.iterations());
//! # Ok::<(), momt::Error>(())
//! ```

pub mod bench;
pub mod block;
pub mod error;
pub mod export;
pub mod generate;
pub mod grid;
pub mod io;
pub mod kkt;
pub mod matrix;
pub mod problem;
pub mod scalar;
pub mod sqp;
pub mod stencil;
pub mod vector;

pub use block::{GenBlock, SymBlock};
pub use error::{Error, Result};
pub use grid::{BlockLayout, Grid, Primal, StaggerKind, StaggeredField};
pub use matrix::{MatrixHessian, MatrixProblem, OperatorBasis};
pub use problem::{HessianApprox, KktResidual, ShiftPolicy, TransportProblem};
pub use scalar::Real;
pub use sqp::{SolveResult, SolverConfig, SqpState, TraceRecord};
pub use vector::{Graph, VectorHessian, VectorProblem};

pub type GridF64 = Grid<f64>;
pub type FieldF64 = StaggeredField<f64>;
pub type PrimalF64 = Primal<f64>;
pub type SymBlockF64 = SymBlock<f64>;
pub type GenBlockF64 = GenBlock<f64>;
pub type OperatorBasisF64 = OperatorBasis<f64>;
pub type GraphF64 = Graph<f64>;
pub type MatrixProblemF64 = MatrixProblem<f64>;
pub type VectorProblemF64 = VectorProblem<f64>;
pub type SolveResultF64 = SolveResult<f64>;
