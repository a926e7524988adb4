//! Binary problem files (`MOMT`) and solution archives (`MOMS`).
//!
//! All numbers are little-endian. Problem file layout:
//!
//! ```text
//! "MOMT" version:u8 kind:u8 dim:u8 reserved:u8 n:u32 extents:u32*dim nt:u32 gamma:f64
//! matrix: N:u32, N packed n x n blocks (f64)
//! vector: N:u32, N edges (source:u32 sink:u32 weight:f64)
//! contrast:f64 seed:u64 name_len:u16 name:utf8
//! rho0 payload, rho1 payload (cells x block size x f64)
//! ```

use std::fs;
use std::path::Path;

use crate::block::{packed_len, SymBlock};
use crate::error::{Error, Result};
use crate::generate::Marginals;
use crate::grid::{BlockLayout, Grid, StaggerKind, StaggeredField};
use crate::matrix::{MatrixProblem, OperatorBasis};
use crate::sqp::{SolveResult, TraceRecord};
use crate::vector::{Graph, VectorProblem};

const PROBLEM_MAGIC: &[u8; 4] = b"MOMT";
const SOLUTION_MAGIC: &[u8; 4] = b"MOMS";
const VERSION: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Matrix,
    Vector,
}

/// Operator basis (matrix kind) or graph edges (vector kind).
#[derive(Clone, Debug, PartialEq)]
pub enum Structure {
    Basis(Vec<Vec<f64>>),
    Edges(Vec<(u32, u32, f64)>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemFile {
    pub kind: ProblemKind,
    /// Block dimension (matrix) or node count (vector).
    pub n: usize,
    pub extents: Vec<usize>,
    pub nt: usize,
    pub gamma: f64,
    pub structure: Structure,
    pub contrast: f64,
    pub seed: u64,
    pub generator: String,
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
}

/// A problem loaded from disk.
#[derive(Clone, Debug)]
pub enum LoadedProblem {
    Matrix(MatrixProblem<f64>),
    Vector(VectorProblem<f64>),
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!("unexpected end of data at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| Error::Format("length overflow".into()))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit in 32 bits")))
}

impl ProblemFile {
    /// Scalars per spatial cell in each marginal payload.
    pub fn block_size(&self) -> usize {
        match self.kind {
            ProblemKind::Matrix => packed_len(self.n),
            ProblemKind::Vector => self.n,
        }
    }

    pub fn space_cells(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn grid(&self) -> Result<Grid<f64>> {
        Grid::new(&self.extents, self.nt)
    }

    pub fn matrix(
        grid: &Grid<f64>,
        basis: &OperatorBasis<f64>,
        gamma: f64,
        marginals: &Marginals<f64>,
        generator: &str,
        seed: u64,
    ) -> Self {
        let basis = basis
            .elements()
            .iter()
            .map(|b| b.sym_part().packed().to_vec())
            .collect();
        Self {
            kind: ProblemKind::Matrix,
            n: match marginals.rho0.layout() {
                BlockLayout::Sym { n } => n,
                _ => 0,
            },
            extents: grid.extents().to_vec(),
            nt: grid.nt(),
            gamma,
            structure: Structure::Basis(basis),
            contrast: marginals.contrast,
            seed,
            generator: generator.to_string(),
            rho0: marginals.rho0.data().to_vec(),
            rho1: marginals.rho1.data().to_vec(),
        }
    }

    pub fn vector(
        grid: &Grid<f64>,
        graph: &Graph<f64>,
        gamma: f64,
        marginals: &Marginals<f64>,
        generator: &str,
        seed: u64,
    ) -> Self {
        let edges = graph
            .edges()
            .iter()
            .zip(graph.weights())
            .map(|(&(a, b), &w)| (a as u32, b as u32, w))
            .collect();
        Self {
            kind: ProblemKind::Vector,
            n: graph.nodes(),
            extents: grid.extents().to_vec(),
            nt: grid.nt(),
            gamma,
            structure: Structure::Edges(edges),
            contrast: marginals.contrast,
            seed,
            generator: generator.to_string(),
            rho0: marginals.rho0.data().to_vec(),
            rho1: marginals.rho1.data().to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(PROBLEM_MAGIC);
        out.push(VERSION);
        out.push(match self.kind {
            ProblemKind::Matrix => 0,
            ProblemKind::Vector => 1,
        });
        out.push(u8::try_from(self.extents.len()).map_err(|_| Error::Format("dimension".into()))?);
        out.push(0);
        out.extend_from_slice(&to_u32(self.n, "n")?.to_le_bytes());
        for &e in &self.extents {
            out.extend_from_slice(&to_u32(e, "extent")?.to_le_bytes());
        }
        out.extend_from_slice(&to_u32(self.nt, "nt")?.to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        match (&self.structure, self.kind) {
            (Structure::Basis(blocks), ProblemKind::Matrix) => {
                out.extend_from_slice(&to_u32(blocks.len(), "basis size")?.to_le_bytes());
                for b in blocks {
                    if b.len() != packed_len(self.n) {
                        return Err(Error::Format("basis block has the wrong length".into()));
                    }
                    put_f64s(&mut out, b);
                }
            }
            (Structure::Edges(edges), ProblemKind::Vector) => {
                out.extend_from_slice(&to_u32(edges.len(), "edge count")?.to_le_bytes());
                for &(a, b, w) in edges {
                    out.extend_from_slice(&a.to_le_bytes());
                    out.extend_from_slice(&b.to_le_bytes());
                    out.extend_from_slice(&w.to_le_bytes());
                }
            }
            _ => return Err(Error::Format("structure does not match problem kind".into())),
        }
        out.extend_from_slice(&self.contrast.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        let name = self.generator.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Format("generator name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        let expect = self.space_cells() * self.block_size();
        if self.rho0.len() != expect || self.rho1.len() != expect {
            return Err(Error::Format(format!("marginal payloads must hold {expect} values")));
        }
        put_f64s(&mut out, &self.rho0);
        put_f64s(&mut out, &self.rho1);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != PROBLEM_MAGIC {
            return Err(Error::Format("not a problem file (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let kind = match r.u8()? {
            0 => ProblemKind::Matrix,
            1 => ProblemKind::Vector,
            k => return Err(Error::Format(format!("unknown problem kind {k}"))),
        };
        let dim = r.u8()? as usize;
        if !(1..=3).contains(&dim) {
            return Err(Error::Format(format!("spatial dimension {dim} out of range")));
        }
        r.u8()?;
        let n = r.u32()? as usize;
        let extents = (0..dim)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let nt = r.u32()? as usize;
        let gamma = r.f64()?;
        let count = r.u32()? as usize;
        let structure = match kind {
            ProblemKind::Matrix => {
                if n == 0 || n > crate::block::MAX_BLOCK_DIM {
                    return Err(Error::Format(format!("block dimension {n} out of range")));
                }
                Structure::Basis((0..count).map(|_| r.f64s(packed_len(n))).collect::<Result<_>>()?)
            }
            ProblemKind::Vector => Structure::Edges(
                (0..count)
                    .map(|_| Ok((r.u32()?, r.u32()?, r.f64()?)))
                    .collect::<Result<_>>()?,
            ),
        };
        let contrast = r.f64()?;
        let seed = r.u64()?;
        let len = r.u16()? as usize;
        let generator = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("generator name is not UTF-8".into()))?;
        let cells: usize = extents.iter().product();
        let bs = match kind {
            ProblemKind::Matrix => packed_len(n),
            ProblemKind::Vector => n,
        };
        let payload = cells * bs;
        if r.buf.len() - r.pos != 2 * payload * 8 {
            return Err(Error::Format(format!(
                "payload has {} bytes, expected {}",
                r.buf.len() - r.pos,
                2 * payload * 8
            )));
        }
        let rho0 = r.f64s(payload)?;
        let rho1 = r.f64s(payload)?;
        r.finish()?;
        Ok(Self {
            kind,
            n,
            extents,
            nt,
            gamma,
            structure,
            contrast,
            seed,
            generator,
            rho0,
            rho1,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Builds and validates the problem (positivity, unit mass, kernel).
    pub fn load(&self) -> Result<LoadedProblem> {
        let grid = self.grid()?;
        match &self.structure {
            Structure::Basis(blocks) => {
                let basis = OperatorBasis::new(blocks.iter().map(|b| SymBlock::from_packed(self.n, b)).collect())?;
                let layout = BlockLayout::Sym { n: self.n };
                let rho0 = StaggeredField::from_data(&grid, StaggerKind::SpaceCenter, layout, self.rho0.clone())?;
                let rho1 = StaggeredField::from_data(&grid, StaggerKind::SpaceCenter, layout, self.rho1.clone())?;
                Ok(LoadedProblem::Matrix(MatrixProblem::new(
                    grid, basis, self.gamma, rho0, rho1,
                )?))
            }
            Structure::Edges(edges) => {
                let graph = Graph::new(
                    self.n,
                    edges.iter().map(|&(a, b, _)| (a as usize, b as usize)).collect(),
                    edges.iter().map(|e| e.2).collect(),
                )?;
                let layout = BlockLayout::Vector { len: self.n };
                let rho0 = StaggeredField::from_data(&grid, StaggerKind::SpaceCenter, layout, self.rho0.clone())?;
                let rho1 = StaggeredField::from_data(&grid, StaggerKind::SpaceCenter, layout, self.rho1.clone())?;
                Ok(LoadedProblem::Vector(VectorProblem::new(
                    grid, graph, self.gamma, rho0, rho1,
                )?))
            }
        }
    }
}

/// Problem together with a solver result.
#[derive(Clone, Debug, PartialEq)]
pub struct SolutionArchive {
    pub problem: ProblemFile,
    pub distance2: f64,
    pub iterations: u32,
    pub converged: bool,
    /// Flattened primal fields followed by the multipliers.
    pub state: Vec<f64>,
}

impl SolutionArchive {
    pub fn new(problem: ProblemFile, result: &SolveResult<f64>) -> Self {
        let mut state = result.state.w.to_flat();
        state.extend_from_slice(result.state.lambda.data());
        Self {
            problem,
            distance2: result.distance2,
            iterations: result.iterations() as u32,
            converged: result.converged,
            state,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(SOLUTION_MAGIC);
        out.push(VERSION);
        let prob = self.problem.to_bytes()?;
        out.extend_from_slice(&(prob.len() as u64).to_le_bytes());
        out.extend_from_slice(&prob);
        out.extend_from_slice(&self.distance2.to_le_bytes());
        out.extend_from_slice(&self.iterations.to_le_bytes());
        out.push(self.converged as u8);
        out.extend_from_slice(&(self.state.len() as u64).to_le_bytes());
        put_f64s(&mut out, &self.state);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != SOLUTION_MAGIC {
            return Err(Error::Format("not a solution archive (bad magic)".into()));
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let len = usize::try_from(r.u64()?).map_err(|_| Error::Format("length overflow".into()))?;
        let problem = ProblemFile::from_bytes(r.take(len)?)?;
        let distance2 = r.f64()?;
        let iterations = r.u32()?;
        let converged = r.u8()? != 0;
        let n = usize::try_from(r.u64()?).map_err(|_| Error::Format("length overflow".into()))?;
        let state = r.f64s(n)?;
        r.finish()?;
        Ok(Self {
            problem,
            distance2,
            iterations,
            converged,
            state,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Convergence trace as CSV: `iter,merit,cost,alpha,pcg_iters,shift`.
pub fn trace_csv(trace: &[TraceRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    w.write_record(["iter", "merit", "cost", "alpha", "pcg_iters", "shift"])
        .map_err(csv_err)?;
    for r in trace {
        w.write_record([
            r.iter.to_string(),
            format!("{:e}", r.merit),
            format!("{:e}", r.cost),
            format!("{}", r.alpha),
            r.pcg_iters.to_string(),
            format!("{:e}", r.shift),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generate::{random_matrix, random_vector};

    fn sample_matrix() -> ProblemFile {
        let g = Grid::<f64>::new(&[3, 2], 4).unwrap();
        let m = random_matrix(&g, 2, 9).unwrap();
        ProblemFile::matrix(&g, &OperatorBasis::default_for(2).unwrap(), 0.1, &m, "random", 9)
    }

    #[test]
    fn problem_round_trip_is_byte_identical() {
        let f = sample_matrix();
        let bytes = f.to_bytes().unwrap();
        let back = ProblemFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert!(matches!(back.load().unwrap(), LoadedProblem::Matrix(_)));

        let g = Grid::<f64>::new(&[4], 3).unwrap();
        let m = random_vector(&g, 3, 2).unwrap();
        let v = ProblemFile::vector(&g, &Graph::complete(3).unwrap(), 0.5, &m, "random", 2);
        let bytes = v.to_bytes().unwrap();
        assert_eq!(ProblemFile::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn payload_length_is_checked() {
        let mut bytes = sample_matrix().to_bytes().unwrap();
        bytes.pop();
        assert!(matches!(ProblemFile::from_bytes(&bytes), Err(Error::Format(_))));
        bytes.extend_from_slice(&[0, 0]);
        assert!(ProblemFile::from_bytes(&bytes).is_err());
        assert!(ProblemFile::from_bytes(b"XXXX").is_err());
    }

    #[test]
    fn loader_rejects_wrong_mass() {
        let mut f = sample_matrix();
        f.rho0.iter_mut().for_each(|v| *v *= 2.0);
        assert!(matches!(f.load(), Err(Error::InvalidProblem(_))));
    }

    #[test]
    fn trace_has_fixed_columns() {
        let rec = TraceRecord {
            iter: 1,
            merit: 0.5,
            cost: 2.0,
            alpha: 1.0,
            pcg_iters: 12,
            shift: 1e-8,
        };
        let s = trace_csv(&[rec]).unwrap();
        let mut lines = s.lines();
        assert_eq!(lines.next().unwrap(), "iter,merit,cost,alpha,pcg_iters,shift");
        let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(cols.len(), 6);
        assert_eq!(cols[4], "12");
        assert_eq!(cols[1].parse::<f64>().unwrap(), 0.5);
    }

    #[test]
    fn solution_round_trip() {
        let a = SolutionArchive {
            problem: sample_matrix(),
            distance2: 0.25,
            iterations: 7,
            converged: true,
            state: vec![1.0, -2.0, 3.5],
        };
        let bytes = a.to_bytes().unwrap();
        assert_eq!(SolutionArchive::from_bytes(&bytes).unwrap(), a);
    }
}
