//! Cell geometry, plane-wave index sets and Brillouin-zone sampling.
//!
//! The unit cell is the cube `Q = (-l/2, l/2]^3` with a single nucleus at the
//! origin; the reciprocal cell is `Q* = [-pi/l, pi/l)^3`. All fibers share one
//! cube-truncated set of reciprocal-lattice indices `|k|_inf <= K`, so every
//! fiber operator has the same dimension `4 (2K+1)^3`.

use crate::error::ModelError;
use std::f64::consts::PI;

/// Physical inputs of a run. Units are relativistic (`hbar = m = c = 1`),
/// so the physical fine-structure constant is about 1/137 and a few-angstrom
/// cell has `ell` of order 1000.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrystalParams {
    pub ell: f64,
    pub z: f64,
    pub q: f64,
    pub alpha: f64,
}

impl CrystalParams {
    pub fn new(ell: f64, z: f64, q: f64, alpha: f64) -> Result<Self, ModelError> {
        if !(ell > 0.0) {
            return Err(ModelError::InvalidParams(format!("ell must be > 0, got {ell}")));
        }
        if !(z > 0.0) {
            return Err(ModelError::InvalidParams(format!("z must be > 0, got {z}")));
        }
        if !(q > 0.0) {
            return Err(ModelError::InvalidParams(format!("q must be > 0, got {q}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ModelError::InvalidParams(format!(
                "alpha must be in (0, 1), got {alpha}"
            )));
        }
        Ok(Self { ell, z, q, alpha })
    }

    /// `q+ = max(q, 1)`, the charge scale entering every coupling estimate.
    pub fn q_plus(&self) -> f64 {
        self.q.max(1.0)
    }

    /// Cell volume `l^3`.
    pub fn cell_volume(&self) -> f64 {
        self.ell.powi(3)
    }

    /// Reciprocal-cell volume `(2 pi / l)^3`.
    pub fn reciprocal_volume(&self) -> f64 {
        (2.0 * PI / self.ell).powi(3)
    }
}

/// Memory guard for `build_basis`: dense fiber matrices are `dim x dim`
/// complex, so anything past a few thousand plane waves is not desk scale.
const MAX_PLANE_WAVES: usize = 35_937; // kmax = 16

/// Cube-truncated plane-wave index set shared by every fiber.
///
/// `indices` is ordered lexicographically and closed under `k -> -k`, so
/// multiplication operators with real even symbols stay exactly Hermitian on
/// the truncated basis. The spinor dimension is `4 * n_pw`; the global index
/// of component `s` of plane wave `i` is `4 * i + s`.
#[derive(Debug, Clone)]
pub struct PlaneWaveBasis {
    kmax: i32,
    indices: Vec<[i32; 3]>,
}

impl PlaneWaveBasis {
    pub fn kmax(&self) -> i32 {
        self.kmax
    }

    pub fn indices(&self) -> &[[i32; 3]] {
        &self.indices
    }

    pub fn n_pw(&self) -> usize {
        self.indices.len()
    }

    /// Spinor dimension `4 n_pw` of one fiber.
    pub fn dim(&self) -> usize {
        4 * self.n_pw()
    }

    /// Position of `k` in the lexicographic ordering, if inside the cube.
    pub fn position(&self, k: [i32; 3]) -> Option<usize> {
        let kk = self.kmax;
        if k.iter().any(|c| c.abs() > kk) {
            return None;
        }
        let side = (2 * kk + 1) as usize;
        let off = |c: i32| (c + kk) as usize;
        Some((off(k[0]) * side + off(k[1])) * side + off(k[2]))
    }

    /// Momentum `xi + 2 pi k / l` carried by plane wave `i` at quasi-momentum `xi`.
    pub fn momentum(&self, i: usize, xi: [f64; 3], ell: f64) -> [f64; 3] {
        let k = self.indices[i];
        let g = 2.0 * PI / ell;
        [
            xi[0] + g * k[0] as f64,
            xi[1] + g * k[1] as f64,
            xi[2] + g * k[2] as f64,
        ]
    }
}

/// Build the cube-truncated basis `|k|_inf <= kmax`.
pub fn build_basis(kmax: i32) -> Result<PlaneWaveBasis, ModelError> {
    if kmax < 0 {
        return Err(ModelError::InvalidParams(format!("kmax must be >= 0, got {kmax}")));
    }
    let side = (2 * kmax + 1) as usize;
    let n = side * side * side;
    if n > MAX_PLANE_WAVES {
        return Err(ModelError::ResourceLimit(format!(
            "kmax = {kmax} requires {n} plane waves (limit {MAX_PLANE_WAVES})"
        )));
    }
    let mut indices = Vec::with_capacity(n);
    for kx in -kmax..=kmax {
        for ky in -kmax..=kmax {
            for kz in -kmax..=kmax {
                indices.push([kx, ky, kz]);
            }
        }
    }
    Ok(PlaneWaveBasis { kmax, indices })
}

/// Uniform Brillouin-zone quadrature grid with equal weights.
///
/// Points live in `Q* = [-pi/l, pi/l)^3`; weights sum to 1 so that sums over
/// the grid approximate the normalized integral over `Q*`.
#[derive(Debug, Clone)]
pub struct KGrid {
    ell: f64,
    n_per_axis: usize,
    shifted: bool,
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
}

impl KGrid {
    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn n_per_axis(&self) -> usize {
        self.n_per_axis
    }

    pub fn shifted(&self) -> bool {
        self.shifted
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }
}

/// Build the uniform `n^3` grid. Unshifted grids start at the zone corner
/// `-pi/l`, so `n = 1` pins the single point to `(-pi/l, -pi/l, -pi/l)` and
/// even `n` contains Gamma. With `shifted` the grid is offset by half a
/// step per axis, which keeps `xi = 0` off the grid (Gamma-avoiding).
pub fn build_kgrid(ell: f64, n_per_axis: usize, shifted: bool) -> Result<KGrid, ModelError> {
    if n_per_axis == 0 {
        return Err(ModelError::InvalidParams("kgrid needs n_per_axis >= 1".into()));
    }
    if !(ell > 0.0) {
        return Err(ModelError::InvalidParams(format!("ell must be > 0, got {ell}")));
    }
    let n = n_per_axis;
    let step = 2.0 * PI / ell / n as f64;
    let offset = if shifted { 0.5 } else { 0.0 };
    let mut axis = Vec::with_capacity(n);
    for i in 0..n {
        axis.push(-PI / ell + (i as f64 + offset) * step);
    }
    let mut points = Vec::with_capacity(n * n * n);
    for &x in &axis {
        for &y in &axis {
            for &z in &axis {
                points.push([x, y, z]);
            }
        }
    }
    let w = 1.0 / (points.len() as f64);
    let weights = vec![w; points.len()];
    Ok(KGrid { ell, n_per_axis, shifted, points, weights })
}
