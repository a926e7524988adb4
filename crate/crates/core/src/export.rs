//! Interpolation frames: glyph CSV for tensor fields, binary P6 PPM images.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::block::{packed_len, SymBlock};
use crate::error::{Error, Result};
use crate::io::{LoadedProblem, ProblemKind, SolutionArchive};
use crate::problem::TransportProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameFormat {
    GlyphCsv,
    Ppm,
}

impl std::str::FromStr for FrameFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "glyph-csv" | "glyph" | "csv" => Ok(Self::GlyphCsv),
            "ppm" => Ok(Self::Ppm),
            _ => Err(Error::InvalidProblem(format!("unknown frame format '{s}'"))),
        }
    }
}

/// Density snapshots at `t = j / nt`, `j = 0..=nt`.
#[derive(Clone, Debug)]
pub struct FrameSet {
    pub kind: ProblemKind,
    /// Block dimension (matrix) or channel count (vector).
    pub n: usize,
    pub extents: Vec<usize>,
    pub times: Vec<f64>,
    /// One cell-centered field per time, `space_cells * block_size` values.
    pub frames: Vec<Vec<f64>>,
}

impl FrameSet {
    /// Marginals plus every interior density slice of the stored solution.
    pub fn from_archive(archive: &SolutionArchive) -> Result<Self> {
        let file = &archive.problem;
        let rho = match file.load()? {
            LoadedProblem::Matrix(p) => interior(&p, &archive.state)?,
            LoadedProblem::Vector(p) => interior(&p, &archive.state)?,
        };
        let per = file.space_cells() * file.block_size();
        let nt = file.nt;
        let mut frames = Vec::with_capacity(nt + 1);
        frames.push(file.rho0.clone());
        frames.extend(rho.chunks(per.max(1)).map(|c| c.to_vec()));
        frames.push(file.rho1.clone());
        debug_assert_eq!(frames.len(), nt + 1);
        Ok(Self {
            kind: file.kind,
            n: file.n,
            extents: file.extents.clone(),
            times: (0..=nt).map(|j| j as f64 / nt as f64).collect(),
            frames,
        })
    }

    fn space_cells(&self) -> usize {
        self.extents.iter().product()
    }

    /// Total mass (trace mass for tensors) of every frame.
    pub fn masses(&self) -> Vec<f64> {
        let h_vol: f64 = self.extents.iter().map(|&e| 1.0 / e as f64).product();
        self.frames
            .iter()
            .map(|f| match self.kind {
                ProblemKind::Vector => h_vol * f.iter().sum::<f64>(),
                ProblemKind::Matrix => {
                    h_vol
                        * f.chunks(packed_len(self.n))
                            .map(|b| SymBlock::from_packed(self.n, b).trace())
                            .sum::<f64>()
                }
            })
            .collect()
    }

    /// Writes the frames into `dir`. Returns the created files.
    pub fn write(&self, dir: impl AsRef<Path>, format: FrameFormat) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        match format {
            FrameFormat::GlyphCsv => {
                let path = dir.join("glyphs.csv");
                fs::write(&path, self.glyph_csv()?)?;
                Ok(vec![path])
            }
            FrameFormat::Ppm => {
                let images = self.ppm_images()?;
                let mut out = Vec::with_capacity(images.len());
                for (j, img) in images.iter().enumerate() {
                    let path = dir.join(format!("frame_{j:03}.ppm"));
                    fs::write(&path, img.to_bytes())?;
                    out.push(path);
                }
                Ok(out)
            }
        }
    }

    /// One row per cell and frame: index, time, eigenvalues (descending),
    /// angles of the principal eigenvector.
    pub fn glyph_csv(&self) -> Result<String> {
        if self.kind != ProblemKind::Matrix {
            return Err(Error::InvalidProblem(
                "glyph export needs a matrix-valued solution".into(),
            ));
        }
        let n = self.n;
        let axes = ["i", "j", "k"];
        let mut s = String::new();
        let mut header: Vec<String> = axes[..self.extents.len()].iter().map(|a| a.to_string()).collect();
        header.push("t".into());
        header.extend((0..n).map(|k| format!("eig{k}")));
        header.extend(angle_names(n).iter().map(|a| a.to_string()));
        s.push_str(&header.join(","));
        s.push('\n');
        for (frame, &t) in self.frames.iter().zip(&self.times) {
            for (cell, b) in frame.chunks(packed_len(n)).enumerate() {
                let (vals, vecs) = SymBlock::from_packed(n, b).eigen();
                let mut rem = cell;
                for &e in &self.extents {
                    write!(s, "{},", rem % e).expect("string write");
                    rem /= e;
                }
                write!(s, "{t}").expect("string write");
                for v in vals.iter().rev() {
                    write!(s, ",{v:e}").expect("string write");
                }
                let principal: Vec<f64> = (0..n).map(|r| vecs.get(r, n - 1)).collect();
                for a in principal_angles(&principal) {
                    write!(s, ",{a}").expect("string write");
                }
                s.push('\n');
            }
        }
        Ok(s)
    }

    /// One image per frame. Vector fields map the first three channels to
    /// RGB (a single channel renders gray); matrix fields render the trace.
    /// Every channel is scaled by its maximum over all frames. 3D grids show
    /// the middle slice along the last axis.
    pub fn ppm_images(&self) -> Result<Vec<Ppm>> {
        let (w, h) = match self.extents.len() {
            1 => (self.extents[0], 1),
            _ => (self.extents[0], self.extents[1]),
        };
        let plane = w * h;
        let offset = if self.extents.len() == 3 {
            plane * (self.extents[2] / 2)
        } else {
            0
        };
        let channels = match self.kind {
            ProblemKind::Vector => self.n.min(3),
            ProblemKind::Matrix => 1,
        };
        let value = |frame: &[f64], s: usize, c: usize| match self.kind {
            ProblemKind::Vector => frame[s * self.n + c],
            ProblemKind::Matrix => {
                let bs = packed_len(self.n);
                SymBlock::from_packed(self.n, &frame[s * bs..(s + 1) * bs]).trace()
            }
        };
        let mut scale = vec![0.0f64; channels];
        for f in &self.frames {
            for s in 0..self.space_cells() {
                for (c, m) in scale.iter_mut().enumerate() {
                    *m = m.max(value(f, s, c));
                }
            }
        }
        let quant = |v: f64, m: f64| {
            if m > 0.0 {
                (255.0 * v / m).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        };
        Ok(self
            .frames
            .iter()
            .map(|f| {
                let mut pixels = vec![0u8; plane * 3];
                for y in 0..h {
                    for x in 0..w {
                        // image rows run top to bottom, grid rows bottom to top
                        let px = ((h - 1 - y) * w + x) * 3;
                        let s = offset + y * w + x;
                        for c in 0..3 {
                            let src = if channels == 1 { 0 } else { c };
                            pixels[px + c] = if src < channels {
                                quant(value(f, s, src), scale[src])
                            } else {
                                0
                            };
                        }
                    }
                }
                Ppm {
                    width: w,
                    height: h,
                    pixels,
                }
            })
            .collect())
    }
}

fn interior<P: TransportProblem<f64>>(prob: &P, state: &[f64]) -> Result<Vec<f64>> {
    let mut w = prob.zero_primal();
    let len = w.len();
    if state.len() < len {
        return Err(Error::Format(
            "solution state is shorter than the primal variables".into(),
        ));
    }
    w.set_flat(&state[..len])?;
    Ok(w.rho().data().to_vec())
}

fn angle_names(n: usize) -> &'static [&'static str] {
    match n {
        1 => &[],
        2 => &["angle"],
        _ => &["azimuth", "elevation"],
    }
}

/// Angles of a unit axis with its sign fixed: `angle ∈ [0, π)` in 2D;
/// azimuth and elevation (upper hemisphere) of the first three components otherwise.
fn principal_angles(v: &[f64]) -> Vec<f64> {
    match v.len() {
        1 => vec![],
        2 => {
            let a = v[1].atan2(v[0]);
            vec![if a < 0.0 { a + std::f64::consts::PI } else { a }.min(std::f64::consts::PI - f64::EPSILON)]
        }
        _ => {
            let (mut x, mut y, mut z) = (v[0], v[1], v[2]);
            if z < 0.0 || (z == 0.0 && (y < 0.0 || (y == 0.0 && x < 0.0))) {
                x = -x;
                y = -y;
                z = -z;
            }
            let r = (x * x + y * y + z * z).sqrt().max(f64::MIN_POSITIVE);
            vec![y.atan2(x), (z / r).clamp(-1.0, 1.0).asin()]
        }
    }
}

/// An 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ppm {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples, top row first.
    pub pixels: Vec<u8>,
}

impl Ppm {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        // header: magic, width, height, maxval separated by whitespace, then one whitespace byte
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < buf.len() && buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < buf.len() && buf[pos] == b'#' {
                while pos < buf.len() && buf[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PPM header".into()));
            }
            fields.push(std::str::from_utf8(&buf[start..pos]).map_err(|_| Error::Format("bad PPM header".into()))?);
        }
        if fields[0] != "P6" {
            return Err(Error::Format("not a binary PPM".into()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM field '{s}'")))
        };
        let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("unsupported PPM maxval {maxval}")));
        }
        let pixels = buf.get(pos + 1..).unwrap_or(&[]).to_vec();
        if pixels.len() != width * height * 3 {
            return Err(Error::Format("PPM pixel data has the wrong length".into()));
        }
        Ok(Self { width, height, pixels })
    }

    /// RGB triple at grid position `(x, y)` with `y` pointing up.
    pub fn at(&self, x: usize, y: usize) -> [u8; 3] {
        let i = ((self.height - 1 - y) * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}
