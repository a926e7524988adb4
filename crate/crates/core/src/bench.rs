//! Benchmark sweeps mirroring the published iteration-count tables.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::generate::{matrix_ball_to_octants, matrix_disk_to_quarters, vector_disk_to_quarters, ShapeParams};
use crate::grid::Grid;
use crate::matrix::{MatrixProblem, OperatorBasis};
use crate::problem::TransportProblem;
use crate::sqp::{solve, SolveResult, SolverConfig};
use crate::vector::{Graph, VectorProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Table1,
    Table2,
    Table3,
    Table4,
    Table5,
    Table6,
    Table7,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Table1,
        Suite::Table2,
        Suite::Table3,
        Suite::Table4,
        Suite::Table5,
        Suite::Table6,
        Suite::Table7,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Table1 => "table1",
            Suite::Table2 => "table2",
            Suite::Table3 => "table3",
            Suite::Table4 => "table4",
            Suite::Table5 => "table5",
            Suite::Table6 => "table6",
            Suite::Table7 => "table7-3d",
        }
    }

    /// Iteration counts reported in the reference tables, one per case.
    pub fn reference(self) -> [usize; 3] {
        match self {
            Suite::Table1 => [19, 27, 35],
            Suite::Table2 => [25, 31, 62],
            Suite::Table3 => [31, 52, 77],
            Suite::Table4 => [11, 12, 14],
            Suite::Table5 => [24, 27, 32],
            Suite::Table6 => [27, 42, 48],
            Suite::Table7 => [19, 25, 23],
        }
    }

    pub fn cases(self) -> Vec<BenchCase> {
        use BenchKind::*;
        let m = |ext: &[usize], nt, contrast, gamma, tol_outer, tol_inner| BenchCase {
            kind: if ext.len() == 3 { Matrix3d } else { Matrix },
            extents: ext.to_vec(),
            nt,
            contrast,
            gamma,
            tol_outer,
            tol_inner,
        };
        let v = |ext: &[usize], nt, contrast, gamma| BenchCase {
            kind: Vector,
            extents: ext.to_vec(),
            nt,
            contrast,
            gamma,
            tol_outer: 1e-3,
            tol_inner: 1e-2,
        };
        let matrix_grids = [([16, 16], 10), ([32, 32], 20), ([64, 64], 40)];
        let vector_grids = [([32, 32], 10), ([64, 64], 20), ([128, 128], 40)];
        match self {
            Suite::Table1 => matrix_grids
                .iter()
                .map(|(e, nt)| m(e, *nt, 10.0, 0.01, 1e-3, 1e-3))
                .collect(),
            Suite::Table2 => matrix_grids
                .iter()
                .map(|(e, nt)| m(e, *nt, 50.0, 0.01, 1e-2, 1e-3))
                .collect(),
            Suite::Table3 => [1.0, 0.1, 0.01]
                .iter()
                .map(|&g| m(&[32, 32], 20, 50.0, g, 1e-2, 1e-3))
                .collect(),
            Suite::Table4 => vector_grids.iter().map(|(e, nt)| v(e, *nt, 10.0, 0.01)).collect(),
            Suite::Table5 => vector_grids.iter().map(|(e, nt)| v(e, *nt, 100.0, 0.01)).collect(),
            Suite::Table6 => [1.0, 0.1, 0.01].iter().map(|&g| v(&[64, 64], 20, 100.0, g)).collect(),
            Suite::Table7 => [16, 32, 64]
                .iter()
                .map(|&s| m(&[s, s, s], 10, 30.0, 0.1, 1e-3, 1e-3))
                .collect(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|t| t.name() == s || (s == "table7" && *t == Suite::Table7))
            .ok_or_else(|| Error::InvalidProblem(format!("unknown bench suite '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchKind {
    Matrix,
    Matrix3d,
    Vector,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchCase {
    pub kind: BenchKind,
    pub extents: Vec<usize>,
    pub nt: usize,
    pub contrast: f64,
    pub gamma: f64,
    pub tol_outer: f64,
    pub tol_inner: f64,
}

impl BenchCase {
    pub fn grid_label(&self) -> String {
        let mut s: Vec<String> = self.extents.iter().map(|e| e.to_string()).collect();
        s.push(self.nt.to_string());
        s.join("x")
    }

    pub fn config(&self) -> SolverConfig {
        let mut c = match self.kind {
            BenchKind::Vector => SolverConfig::vector(),
            _ => SolverConfig::matrix(),
        };
        c.tol_outer = self.tol_outer;
        c.tol_inner = self.tol_inner;
        c
    }
}

/// Outcome of one case. Solver errors are recorded rather than propagated.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub case: BenchCase,
    pub reference: usize,
    pub iterations: usize,
    pub pcg_total: usize,
    pub seconds: f64,
    pub converged: bool,
    pub distance2: f64,
    /// Largest relative deviation of a slice mass from the marginal mass.
    pub mass_error: f64,
    pub error: Option<String>,
}

impl BenchRow {
    pub fn ok(&self) -> bool {
        self.error.is_none() && self.converged
    }
}

fn summarize<P: TransportProblem<f64>>(prob: &P, r: &SolveResult<f64>) -> (usize, f64, f64) {
    let pcg = r.trace.iter().map(|t| t.pcg_iters).sum();
    let m = prob.marginal_mass();
    let err = prob
        .slice_masses(&r.state.w)
        .iter()
        .map(|s| ((s - m) / m).abs())
        .fold(0.0, f64::max);
    (pcg, r.distance2, err)
}

/// Runs one case. Wall time covers problem setup and the solve.
pub fn run_case(case: &BenchCase, reference: usize) -> BenchRow {
    let start = Instant::now();
    let params = ShapeParams::default();
    let config = case.config();
    let outcome = (|| -> Result<(usize, bool, usize, f64, f64)> {
        let grid = Grid::new(&case.extents, case.nt)?;
        let (r, pcg, d2, err) = match case.kind {
            BenchKind::Matrix | BenchKind::Matrix3d => {
                let marg = if case.kind == BenchKind::Matrix3d {
                    matrix_ball_to_octants(&grid, case.contrast, &params)?
                } else {
                    matrix_disk_to_quarters(&grid, case.contrast, &params)?
                };
                let prob = MatrixProblem::new(grid, OperatorBasis::default_for(3)?, case.gamma, marg.rho0, marg.rho1)?;
                let r = solve(&prob, &config)?;
                let (pcg, d2, err) = summarize(&prob, &r);
                (r, pcg, d2, err)
            }
            BenchKind::Vector => {
                let marg = vector_disk_to_quarters(&grid, case.contrast, &params)?;
                let prob = VectorProblem::new(grid, Graph::complete(3)?, case.gamma, marg.rho0, marg.rho1)?;
                let r = solve(&prob, &config)?;
                let (pcg, d2, err) = summarize(&prob, &r);
                (r, pcg, d2, err)
            }
        };
        Ok((r.iterations(), r.converged, pcg, d2, err))
    })();
    let seconds = start.elapsed().as_secs_f64();
    match outcome {
        Ok((iterations, converged, pcg_total, distance2, mass_error)) => BenchRow {
            case: case.clone(),
            reference,
            iterations,
            pcg_total,
            seconds,
            converged,
            distance2,
            mass_error,
            error: None,
        },
        Err(e) => {
            log::warn!("bench case {} failed: {e}", case.grid_label());
            BenchRow {
                case: case.clone(),
                reference,
                iterations: 0,
                pcg_total: 0,
                seconds,
                converged: false,
                distance2: f64::NAN,
                mass_error: f64::NAN,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs the selected cases (all when `rows` is `None`) sequentially.
pub fn run_suite(suite: Suite, rows: Option<&[usize]>, mut progress: impl FnMut(&BenchRow)) -> Vec<BenchRow> {
    let refs = suite.reference();
    suite
        .cases()
        .iter()
        .enumerate()
        .filter(|(i, _)| rows.is_none_or(|r| r.contains(i)))
        .map(|(i, c)| {
            let row = run_case(c, refs[i]);
            progress(&row);
            row
        })
        .collect()
}

const COLUMNS: [&str; 12] = [
    "grid",
    "contrast",
    "gamma",
    "tol_outer",
    "iterations",
    "reference",
    "pcg_total",
    "seconds",
    "converged",
    "distance2",
    "mass_error",
    "error",
];

pub fn report_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.case.grid_label(),
            r.case.contrast.to_string(),
            r.case.gamma.to_string(),
            r.case.tol_outer.to_string(),
            r.iterations.to_string(),
            r.reference.to_string(),
            r.pcg_total.to_string(),
            format!("{:.3}", r.seconds),
            r.converged.to_string(),
            format!("{:e}", r.distance2),
            format!("{:e}", r.mass_error),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn report_table(suite: Suite, rows: &[BenchRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", suite.name()).ok();
    writeln!(
        s,
        "{:<14} {:>8} {:>6} {:>6} {:>5} {:>8} {:>9}  status",
        "grid", "contrast", "gamma", "iters", "ref", "pcg", "seconds"
    )
    .ok();
    for r in rows {
        let status = match (&r.error, r.converged) {
            (Some(e), _) => format!("FAILED: {e}"),
            (None, true) => "ok".to_string(),
            (None, false) => "not converged".to_string(),
        };
        writeln!(
            s,
            "{:<14} {:>8} {:>6} {:>6} {:>5} {:>8} {:>9.2}  {status}",
            r.case.grid_label(),
            r.case.contrast,
            r.case.gamma,
            r.iterations,
            r.reference,
            r.pcg_total,
            r.seconds
        )
        .ok();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_have_three_cases() {
        for s in Suite::ALL {
            assert_eq!(s.cases().len(), 3);
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("table9".parse::<Suite>().is_err());
        assert_eq!("table7".parse::<Suite>().unwrap(), Suite::Table7);
    }

    #[test]
    fn table_grids() {
        let labels: Vec<String> = Suite::Table1.cases().iter().map(|c| c.grid_label()).collect();
        assert_eq!(labels, ["16x16x10", "32x32x20", "64x64x40"]);
        let labels: Vec<String> = Suite::Table4.cases().iter().map(|c| c.grid_label()).collect();
        assert_eq!(labels, ["32x32x10", "64x64x20", "128x128x40"]);
        let gammas: Vec<f64> = Suite::Table3.cases().iter().map(|c| c.gamma).collect();
        assert_eq!(gammas, [1.0, 0.1, 0.01]);
        assert!(Suite::Table3.cases().iter().all(|c| c.grid_label() == "32x32x20"));
        assert!(Suite::Table6.cases().iter().all(|c| c.grid_label() == "64x64x20"));
        assert!(Suite::Table7
            .cases()
            .iter()
            .all(|c| c.kind == BenchKind::Matrix3d && c.contrast == 30.0));
    }

    #[test]
    fn failing_row_is_flagged() {
        let mut case = Suite::Table1.cases()[0].clone();
        case.contrast = 0.5;
        let row = run_case(&case, 19);
        assert!(!row.ok());
        assert!(row.error.is_some());
        let csv = report_csv(&[row]).unwrap();
        assert!(csv.lines().nth(1).unwrap().contains("contrast"));
    }
}
