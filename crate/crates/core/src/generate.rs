//! Synthetic marginals: a centered disk (ball) moving to corner quarter
//! disks (octant balls), identical marginals, and seeded random fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::block::{packed_index, packed_len, packed_pairs, SymBlock};
use crate::error::{Error, Result};
use crate::grid::{BlockLayout, Grid, StaggerKind, StaggeredField};
use crate::scalar::{kahan_sum, Real};

/// Shape parameters of the disk-to-quarters family.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShapeParams {
    /// Radius of the initial centered disk or ball.
    pub disk_radius: f64,
    /// Radius of the terminal corner pieces.
    pub quarter_radius: f64,
    /// Gaussian smoothing width in cells.
    pub sigma_cells: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            disk_radius: 0.25,
            quarter_radius: 0.4,
            sigma_cells: 2.0,
        }
    }
}

/// A pair of unit-mass marginals on a spatial grid.
#[derive(Clone, Debug)]
pub struct Marginals<T> {
    pub rho0: StaggeredField<T>,
    pub rho1: StaggeredField<T>,
    /// Measured density contrast (largest over the two marginals).
    pub contrast: f64,
}

fn check_contrast(c: f64) -> Result<()> {
    if c > 1.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidContrast(c))
    }
}

fn check_extents<T: Real>(grid: &Grid<T>, dim: usize) -> Result<()> {
    if grid.dim() != dim || grid.extents().iter().any(|&e| e < 8) {
        return Err(Error::InvalidProblem(format!(
            "generator needs a {dim}D grid with at least 8 cells per axis"
        )));
    }
    Ok(())
}

/// Cell centers of the spatial grid.
fn centers<T: Real>(grid: &Grid<T>) -> Vec<Vec<f64>> {
    (0..grid.space_cells())
        .map(|s| {
            grid.space_index(s)
                .iter()
                .zip(grid.extents())
                .map(|(&i, &e)| (i as f64 + 0.5) / e as f64)
                .collect()
        })
        .collect()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Separable Gaussian blur of a field with `stride` components per cell;
/// values outside the domain count as zero.
pub fn gaussian_smooth(data: &mut [f64], extents: &[usize], stride: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let kernel: Vec<f64> = kernel.iter().map(|k| k / norm).collect();
    let ncell: usize = extents.iter().product();
    let mut stride_axis = 1;
    for &e in extents {
        let src = data.to_vec();
        for cell in 0..ncell {
            let i = (cell / stride_axis) % e;
            for c in 0..stride {
                let mut acc = 0.0;
                for (kk, w) in kernel.iter().enumerate() {
                    let j = i as isize + kk as isize - radius;
                    if j < 0 || j >= e as isize {
                        continue;
                    }
                    let other = cell - i * stride_axis + j as usize * stride_axis;
                    acc += w * src[other * stride + c];
                }
                data[cell * stride + c] = acc;
            }
        }
        stride_axis *= e;
    }
}

/// Smallest and largest eigenvalue over all packed blocks.
fn eigen_extremes(data: &[f64], n: usize) -> (f64, f64) {
    let s = packed_len(n);
    data.chunks(s)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), blk| {
            let (vals, _) = SymBlock::from_packed(n, blk).eigen();
            (lo.min(vals[0]), hi.max(vals[n - 1]))
        })
}

/// Eigenvalue contrast `max λ / min λ` over all blocks of a matrix field.
pub fn matrix_contrast<T: Real>(field: &StaggeredField<T>) -> f64 {
    let n = match field.layout() {
        BlockLayout::Sym { n } => n,
        _ => return f64::NAN,
    };
    let data: Vec<f64> = field.data().iter().map(|v| v.to_f64_lossy()).collect();
    let (lo, hi) = eigen_extremes(&data, n);
    hi / lo
}

/// Channel contrast `max_k sup ρ_k / inf ρ_k` of a vector field.
pub fn vector_contrast<T: Real>(field: &StaggeredField<T>) -> f64 {
    let n = field.stride();
    (0..n)
        .map(|k| {
            let (lo, hi) = (0..field.len()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = field.at(i)[k].to_f64_lossy();
                (lo.min(v), hi.max(v))
            });
            hi / lo
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Floor `f ≥ 0` such that `contrast(f) = target`, by bisection on a
/// decreasing contrast function.
fn floor_for_contrast(contrast: impl Fn(f64) -> f64, target: f64) -> f64 {
    if contrast(0.0) <= target {
        return 0.0;
    }
    let mut hi = 1.0;
    while contrast(hi) > target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if contrast(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

fn to_field<T: Real>(grid: &Grid<T>, layout: BlockLayout, data: &[f64]) -> Result<StaggeredField<T>> {
    StaggeredField::from_data(
        grid,
        StaggerKind::SpaceCenter,
        layout,
        data.iter().map(|v| T::lit(*v)).collect(),
    )
}

/// Scales packed symmetric blocks to unit trace mass.
fn normalize_trace(data: &mut [f64], n: usize, h_vol: f64) {
    let s = packed_len(n);
    let total = h_vol
        * kahan_sum(
            data.chunks(s)
                .map(|b| (0..n).map(|i| b[packed_index(n, i, i)]).sum::<f64>()),
        );
    data.iter_mut().for_each(|v| *v /= total);
}

fn normalize_sum(data: &mut [f64], h_vol: f64) {
    let total = h_vol * kahan_sum(data.iter().copied());
    data.iter_mut().for_each(|v| *v /= total);
}

/// Smooths, floors to the target eigenvalue contrast and normalizes a raw
/// field of positive semidefinite packed blocks.
fn finish_matrix(raw: &mut [f64], extents: &[usize], n: usize, params: &ShapeParams, contrast: f64, h_vol: f64) {
    let s = packed_len(n);
    gaussian_smooth(raw, extents, s, params.sigma_cells);
    let (lo, hi) = eigen_extremes(raw, n);
    let f = floor_for_contrast(|f| (hi + f) / (lo + f), contrast);
    for blk in raw.chunks_mut(s) {
        for i in 0..n {
            blk[packed_index(n, i, i)] += f;
        }
    }
    normalize_trace(raw, n, h_vol);
}

fn finish_vector(raw: &mut [f64], extents: &[usize], n: usize, params: &ShapeParams, contrast: f64, h_vol: f64) {
    gaussian_smooth(raw, extents, n, params.sigma_cells);
    let extremes: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            raw.iter()
                .skip(k)
                .step_by(n)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(*v), hi.max(*v))
                })
        })
        .collect();
    let measure = |f: f64| {
        extremes
            .iter()
            .map(|(lo, hi)| (hi + f) / (lo + f))
            .fold(f64::NEG_INFINITY, f64::max)
    };
    let f = floor_for_contrast(measure, contrast);
    raw.iter_mut().for_each(|v| *v += f);
    normalize_sum(raw, h_vol);
}

/// `v vᵀ + (1/c)(I − v vᵀ)` packed: eigenvalue 1 along `v`, `1/c` across.
fn anisotropic_block(v: &[f64], n: usize, c: f64) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut full = vec![0.0; n];
    for (a, b) in full.iter_mut().zip(v) {
        *a = b / norm;
    }
    packed_pairs(n)
        .map(|(i, j)| {
            let vv = full[i] * full[j];
            let id = if i == j { 1.0 } else { 0.0 };
            vv + (id - vv) / c
        })
        .collect()
}

fn corners(dim: usize) -> Vec<Vec<f64>> {
    (0..1usize << dim)
        .map(|m| (0..dim).map(|d| ((m >> d) & 1) as f64).collect())
        .collect()
}

fn disk_to_corners_matrix<T: Real>(
    grid: &Grid<T>,
    n: usize,
    contrast: f64,
    params: &ShapeParams,
    directions: &[Vec<f64>],
) -> Result<Marginals<T>> {
    let s = packed_len(n);
    let pts = centers(grid);
    let dim = grid.dim();
    let mid = vec![0.5; dim];
    let corner_pts = corners(dim);
    let mut raw0 = vec![0.0; pts.len() * s];
    let mut raw1 = vec![0.0; pts.len() * s];
    let iso: Vec<f64> = packed_pairs(n).map(|(i, j)| if i == j { 1.0 } else { 0.0 }).collect();
    let aniso: Vec<Vec<f64>> = directions.iter().map(|v| anisotropic_block(v, n, contrast)).collect();
    for (c, x) in pts.iter().enumerate() {
        if dist(x, &mid) <= params.disk_radius {
            raw0[c * s..(c + 1) * s].copy_from_slice(&iso);
        }
        for (q, corner) in corner_pts.iter().enumerate() {
            if dist(x, corner) <= params.quarter_radius {
                raw1[c * s..(c + 1) * s].copy_from_slice(&aniso[q]);
            }
        }
    }
    let hv = grid.h_vol().to_f64_lossy();
    finish_matrix(&mut raw0, grid.extents(), n, params, contrast, hv);
    finish_matrix(&mut raw1, grid.extents(), n, params, contrast, hv);
    let layout = BlockLayout::Sym { n };
    let rho0 = to_field(grid, layout, &raw0)?;
    let rho1 = to_field(grid, layout, &raw1)?;
    let contrast = matrix_contrast(&rho0).max(matrix_contrast(&rho1));
    Ok(Marginals { rho0, rho1, contrast })
}

/// Isotropic 3x3 blocks on a centered disk moving to four corner quarter
/// disks with principal directions at 0°, 45°, 90° and 135°.
pub fn matrix_disk_to_quarters<T: Real>(grid: &Grid<T>, contrast: f64, params: &ShapeParams) -> Result<Marginals<T>> {
    check_contrast(contrast)?;
    check_extents(grid, 2)?;
    // corners are ordered (0,0), (1,0), (0,1), (1,1)
    let dirs: Vec<Vec<f64>> = [0.0f64, 45.0, 90.0, 135.0]
        .iter()
        .map(|deg| {
            let r = deg.to_radians();
            vec![r.cos(), r.sin(), 0.0]
        })
        .collect();
    disk_to_corners_matrix(grid, 3, contrast, params, &dirs)
}

/// 3D analogue: a centered ball moving to eight corner octants, each with
/// its own principal direction.
pub fn matrix_ball_to_octants<T: Real>(grid: &Grid<T>, contrast: f64, params: &ShapeParams) -> Result<Marginals<T>> {
    check_contrast(contrast)?;
    check_extents(grid, 3)?;
    let dirs = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
        vec![1.0, 1.0, 0.0],
        vec![1.0, 0.0, 1.0],
        vec![0.0, 1.0, 1.0],
        vec![1.0, 1.0, 1.0],
        vec![1.0, -1.0, 0.0],
    ];
    disk_to_corners_matrix(grid, 3, contrast, params, &dirs)
}

/// White (equal channel) disk moving to red, green, blue and yellow corner
/// quarter disks.
pub fn vector_disk_to_quarters<T: Real>(grid: &Grid<T>, contrast: f64, params: &ShapeParams) -> Result<Marginals<T>> {
    check_contrast(contrast)?;
    check_extents(grid, 2)?;
    let n = 3;
    let colors = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 0.0]];
    let pts = centers(grid);
    let mid = [0.5, 0.5];
    let corner_pts = corners(2);
    let mut raw0 = vec![0.0; pts.len() * n];
    let mut raw1 = vec![0.0; pts.len() * n];
    for (c, x) in pts.iter().enumerate() {
        if dist(x, &mid) <= params.disk_radius {
            raw0[c * n..(c + 1) * n].copy_from_slice(&[1.0; 3]);
        }
        for (q, corner) in corner_pts.iter().enumerate() {
            if dist(x, corner) <= params.quarter_radius {
                raw1[c * n..(c + 1) * n].copy_from_slice(&colors[q]);
            }
        }
    }
    let hv = grid.h_vol().to_f64_lossy();
    finish_vector(&mut raw0, grid.extents(), n, params, contrast, hv);
    finish_vector(&mut raw1, grid.extents(), n, params, contrast, hv);
    let layout = BlockLayout::Vector { len: n };
    let rho0 = to_field(grid, layout, &raw0)?;
    let rho1 = to_field(grid, layout, &raw1)?;
    let contrast = vector_contrast(&rho0).max(vector_contrast(&rho1));
    Ok(Marginals { rho0, rho1, contrast })
}

/// Both marginals equal to `rho`.
pub fn identical<T: Real>(rho: &StaggeredField<T>) -> Marginals<T> {
    let contrast = match rho.layout() {
        BlockLayout::Sym { .. } => matrix_contrast(rho),
        _ => vector_contrast(rho),
    };
    Marginals {
        rho0: rho.clone(),
        rho1: rho.clone(),
        contrast,
    }
}

/// Random SPD blocks `B Bᵀ + floor I` with unit trace mass.
pub fn random_matrix<T: Real>(grid: &Grid<T>, n: usize, seed: u64) -> Result<Marginals<T>> {
    crate::block::check_dim(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = packed_len(n);
    let hv = grid.h_vol().to_f64_lossy();
    let mut make = || {
        let mut data = vec![0.0; grid.space_cells() * s];
        for blk in data.chunks_mut(s) {
            let b: Vec<f64> = (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for (idx, (i, j)) in packed_pairs(n).enumerate() {
                let mut v: f64 = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum();
                if i == j {
                    v += 0.5;
                }
                blk[idx] = v;
            }
        }
        normalize_trace(&mut data, n, hv);
        data
    };
    let raw0 = make();
    let raw1 = make();
    let layout = BlockLayout::Sym { n };
    let rho0 = to_field(grid, layout, &raw0)?;
    let rho1 = to_field(grid, layout, &raw1)?;
    let contrast = matrix_contrast(&rho0).max(matrix_contrast(&rho1));
    Ok(Marginals { rho0, rho1, contrast })
}

/// Random positive vectors in `[0.5, 1.5)` with unit total mass.
pub fn random_vector<T: Real>(grid: &Grid<T>, n: usize, seed: u64) -> Result<Marginals<T>> {
    if n == 0 {
        return Err(Error::InvalidProblem("need at least one node".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hv = grid.h_vol().to_f64_lossy();
    let mut make = || {
        let mut data: Vec<f64> = (0..grid.space_cells() * n).map(|_| rng.gen_range(0.5..1.5)).collect();
        normalize_sum(&mut data, hv);
        data
    };
    let raw0 = make();
    let raw1 = make();
    let layout = BlockLayout::Vector { len: n };
    let rho0 = to_field(grid, layout, &raw0)?;
    let rho1 = to_field(grid, layout, &raw1)?;
    let contrast = vector_contrast(&rho0).max(vector_contrast(&rho1));
    Ok(Marginals { rho0, rho1, contrast })
}
