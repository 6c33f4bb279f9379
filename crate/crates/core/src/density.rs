//! Discrete periodic one-particle density matrices in low-rank storage
//! (orbitals + occupations per fiber), their traces, electronic density,
//! kernels, diagnostic norms and checkpoint serialization.

use crate::error::ModelError;
use crate::lattice::{KGrid, PlaneWaveBasis};
use crate::linalg;
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One fiber of a density matrix: `gamma_xi = U diag(occ) U^H` with
/// orthonormal columns `U` and occupations in `[0, 1]`.
///
/// Occupations are stored as plain reals; algebraic intermediates (mixing
/// stacks, difference states used by derivative checks) temporarily carry
/// weights outside `[0, 1]` and are re-compressed before they re-enter the
/// constrained sets, which `validate` polices.
#[derive(Debug, Clone)]
pub struct FiberDensity {
    pub orbitals: Array2<Complex64>,
    pub occupations: Vec<f64>,
}

impl FiberDensity {
    pub fn empty(dim: usize) -> Self {
        Self { orbitals: Array2::from_elem((dim, 0), ZERO), occupations: Vec::new() }
    }

    pub fn rank(&self) -> usize {
        self.occupations.len()
    }

    pub fn trace(&self) -> f64 {
        self.occupations.iter().sum()
    }

    /// Dense `dim x dim` matrix; diagnostic-scale only.
    pub fn dense(&self) -> Array2<Complex64> {
        let dim = self.orbitals.nrows();
        let r = self.rank();
        let mut m = Array2::from_elem((dim, dim), ZERO);
        for n in 0..r {
            let u = self.orbitals.column(n);
            let w = self.occupations[n];
            for i in 0..dim {
                let ui = u[i] * w;
                if ui == ZERO {
                    continue;
                }
                for j in 0..dim {
                    m[(i, j)] += ui * u[j].conj();
                }
            }
        }
        m
    }
}

/// The discrete `gamma = avg over the k-grid of gamma_xi`.
#[derive(Debug, Clone)]
pub struct BlochDensityMatrix {
    pub basis: Arc<PlaneWaveBasis>,
    pub grid: Arc<KGrid>,
    pub fibers: Vec<FiberDensity>,
}

/// Diagnostic norms of a density matrix.
#[derive(Debug, Clone, Copy)]
pub struct NormsReport {
    /// Grid-averaged trace norm.
    pub s11: f64,
    /// Largest fiber trace norm.
    pub s1inf: f64,
    /// Grid-averaged trace norm of `|D|^(1/2) gamma |D|^(1/2)`.
    pub x: f64,
    /// Largest occupation (operator norm for eigen-stored fibers).
    pub y: f64,
}

/// Energy decomposition of the Dirac-Fock functional plus its penalized value.
#[derive(Debug, Clone, Copy, Default)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    pub nuclear: f64,
    pub hartree: f64,
    pub exchange: f64,
    pub total: f64,
    pub penalized: f64,
    pub eps_p: f64,
}

impl BlochDensityMatrix {
    pub fn zero(basis: Arc<PlaneWaveBasis>, grid: Arc<KGrid>) -> Self {
        let dim = basis.dim();
        let fibers = (0..grid.len()).map(|_| FiberDensity::empty(dim)).collect();
        Self { basis, grid, fibers }
    }

    /// Enforce the defining invariants: occupations in `[0, 1]`, orthonormal
    /// orbitals to 1e-10, and trace per cell at most `q_limit`.
    pub fn validate(&self, q_limit: f64) -> Result<(), ModelError> {
        for (i, f) in self.fibers.iter().enumerate() {
            for &occ in &f.occupations {
                if !(-1e-12..=1.0 + 1e-12).contains(&occ) {
                    return Err(ModelError::InvalidParams(format!(
                        "fiber {i}: occupation {occ} outside [0, 1]"
                    )));
                }
            }
            let r = f.rank();
            for a in 0..r {
                for b in a..r {
                    let s: Complex64 = f
                        .orbitals
                        .column(a)
                        .iter()
                        .zip(f.orbitals.column(b).iter())
                        .map(|(x, y)| x.conj() * y)
                        .sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    if (s - Complex64::new(want, 0.0)).norm() > 1e-10 {
                        return Err(ModelError::InvalidParams(format!(
                            "fiber {i}: orbitals not orthonormal (<{a}|{b}> = {s})"
                        )));
                    }
                }
            }
        }
        let tr = self.trace_per_cell();
        if tr < -1e-12 || tr > q_limit + 1e-10 {
            return Err(ModelError::InvalidParams(format!(
                "trace per cell {tr} outside [0, {q_limit}]"
            )));
        }
        Ok(())
    }

    /// `sum_i w_i sum_n occ_{i,n}`.
    pub fn trace_per_cell(&self) -> f64 {
        self.fibers
            .iter()
            .zip(self.grid.weights())
            .map(|(f, &w)| w * f.trace())
            .sum()
    }

    /// Fourier coefficients of the electronic density on `|p|_inf <= 2 K`.
    pub fn density_fourier(&self) -> DensityFourier {
        let kmax = self.basis.kmax();
        let kmax2 = 2 * kmax;
        let side = (2 * kmax2 + 1) as usize;
        let ell = self.grid.ell();
        let mut values = vec![ZERO; side * side * side];
        let cell = ell.powi(3);
        let idx = self.basis.indices();
        // compute the lexicographically positive half and mirror, so the
        // conjugate symmetry rho^(-p) = conj rho^(p) is exact by construction
        let mut half: Vec<[i32; 3]> = Vec::new();
        for px in 0..=kmax2 {
            let ry = if px == 0 { 0 } else { -kmax2 };
            for py in ry..=kmax2 {
                let rz = if px == 0 && py == 0 { 0 } else { -kmax2 };
                for pz in rz..=kmax2 {
                    half.push([px, py, pz]);
                }
            }
        }
        let df_pos = |p: [i32; 3]| {
            let off = |c: i32| (c + kmax2) as usize;
            (off(p[0]) * side + off(p[1])) * side + off(p[2])
        };
        for &p in &half {
            let mut acc = ZERO;
            for (fi, f) in self.fibers.iter().enumerate() {
                let w = self.grid.weight(fi);
                for n in 0..f.rank() {
                    let occ = f.occupations[n];
                    if occ == 0.0 {
                        continue;
                    }
                    let u = f.orbitals.column(n);
                    let mut s = ZERO;
                    for (i, &k) in idx.iter().enumerate() {
                        if let Some(j) = self.basis.position([k[0] + p[0], k[1] + p[1], k[2] + p[2]]) {
                            for sp in 0..4 {
                                s += u[4 * i + sp].conj() * u[4 * j + sp];
                            }
                        }
                    }
                    acc += w * occ * s;
                }
            }
            acc /= cell;
            values[df_pos(p)] = acc;
            values[df_pos([-p[0], -p[1], -p[2]])] = acc.conj();
        }
        // p = 0 is its own mirror; make it exactly real
        let z = df_pos([0, 0, 0]);
        values[z] = Complex64::new(values[z].re, 0.0);
        DensityFourier { kmax2, side, ell, values }
    }

    /// Kernel `gamma(x, y)` as a 4x4 complex matrix, by quadrature over the
    /// grid fibers.
    pub fn kernel_at(&self, x: [f64; 3], y: [f64; 3]) -> Array2<Complex64> {
        let mut out = Array2::from_elem((4, 4), ZERO);
        for (fi, f) in self.fibers.iter().enumerate() {
            let w = self.grid.weight(fi);
            for n in 0..f.rank() {
                let occ = f.occupations[n];
                if occ == 0.0 {
                    continue;
                }
                let ux = self.orbital_at(fi, n, x);
                let uy = self.orbital_at(fi, n, y);
                for s in 0..4 {
                    for t in 0..4 {
                        out[(s, t)] += w * occ * ux[s] * uy[t].conj();
                    }
                }
            }
        }
        out
    }

    /// Spinor value of orbital `n` of fiber `fi` at `x`, including the
    /// `l^{-3/2}` normalization and the quasi-momentum phase.
    pub fn orbital_at(&self, fi: usize, n: usize, x: [f64; 3]) -> [Complex64; 4] {
        let ell = self.grid.ell();
        let xi = self.grid.point(fi);
        let g = 2.0 * std::f64::consts::PI / ell;
        let u = self.fibers[fi].orbitals.column(n);
        let norm = ell.powf(-1.5);
        let mut out = [ZERO; 4];
        for (i, &k) in self.basis.indices().iter().enumerate() {
            let phase = (xi[0] + g * k[0] as f64) * x[0]
                + (xi[1] + g * k[1] as f64) * x[1]
                + (xi[2] + g * k[2] as f64) * x[2];
            let e = Complex64::from_polar(norm, phase);
            for s in 0..4 {
                out[s] += e * u[4 * i + s];
            }
        }
        out
    }

    /// Diagnostic norms (assumes the stored occupations are eigenvalues,
    /// which every constructor in this crate maintains).
    pub fn norms(&self) -> NormsReport {
        let ell = self.grid.ell();
        let mut s11 = 0.0;
        let mut s1inf: f64 = 0.0;
        let mut x = 0.0;
        let mut y: f64 = 0.0;
        for (fi, f) in self.fibers.iter().enumerate() {
            let w = self.grid.weight(fi);
            let xi = self.grid.point(fi);
            let tr: f64 = f.occupations.iter().map(|o| o.abs()).sum();
            s11 += w * tr;
            s1inf = s1inf.max(tr);
            for n in 0..f.rank() {
                let occ = f.occupations[n];
                if occ == 0.0 {
                    continue;
                }
                y = y.max(occ.abs());
                let u = f.orbitals.column(n);
                let mut kin = 0.0;
                for i in 0..self.basis.n_pw() {
                    let m = self.basis.momentum(i, xi, ell);
                    let weight = (1.0 + m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                    let mut a2 = 0.0;
                    for s in 0..4 {
                        a2 += u[4 * i + s].norm_sqr();
                    }
                    kin += weight * a2;
                }
                x += w * occ.abs() * kin;
            }
        }
        NormsReport { s11, s1inf, x, y }
    }

    /// Grid-averaged trace norm of `gamma |D0|^(1/2)` (the admissible-set
    /// size used by the retraction).
    pub fn droot_s11(&self) -> f64 {
        let ell = self.grid.ell();
        let mut acc = 0.0;
        for (fi, f) in self.fibers.iter().enumerate() {
            let r = f.rank();
            if r == 0 {
                continue;
            }
            let w = self.grid.weight(fi);
            let xi = self.grid.point(fi);
            // M = diag(occ) U^H |D| U diag(occ); trace norm of gamma |D|^{1/2}
            // is the sum of sqrt of its eigenvalues
            let mut udu = Array2::from_elem((r, r), ZERO);
            for a in 0..r {
                for b in a..r {
                    let mut s = ZERO;
                    for i in 0..self.basis.n_pw() {
                        let m = self.basis.momentum(i, xi, ell);
                        let dw = (1.0 + m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                        for sp in 0..4 {
                            s += f.orbitals[(4 * i + sp, a)].conj()
                                * f.orbitals[(4 * i + sp, b)]
                                * dw;
                        }
                    }
                    udu[(a, b)] = s;
                    udu[(b, a)] = s.conj();
                }
            }
            for a in 0..r {
                for b in 0..r {
                    udu[(a, b)] *= f.occupations[a] * f.occupations[b];
                }
            }
            if let Ok((vals, _)) = linalg::eigh(&udu.view(), 1e-8) {
                acc += w * vals.iter().map(|v| v.max(0.0).sqrt()).sum::<f64>();
            }
        }
        acc
    }
}

/// Fourier coefficients of the electronic density, on the transfer cube
/// `|p|_inf <= 2 K`.
#[derive(Debug, Clone)]
pub struct DensityFourier {
    kmax2: i32,
    side: usize,
    ell: f64,
    values: Vec<Complex64>,
}

impl DensityFourier {
    pub fn kmax2(&self) -> i32 {
        self.kmax2
    }

    pub fn get(&self, p: [i32; 3]) -> Complex64 {
        if p.iter().any(|c| c.abs() > self.kmax2) {
            return ZERO;
        }
        let off = |c: i32| (c + self.kmax2) as usize;
        self.values[(off(p[0]) * self.side + off(p[1])) * self.side + off(p[2])]
    }

    /// Real-space density reconstructed from the truncated series.
    pub fn real_space(&self, x: [f64; 3]) -> f64 {
        let g = 2.0 * std::f64::consts::PI / self.ell;
        let m = self.kmax2;
        let mut acc = ZERO;
        for px in -m..=m {
            for py in -m..=m {
                for pz in -m..=m {
                    let v = self.get([px, py, pz]);
                    if v == ZERO {
                        continue;
                    }
                    let phase = g * (px as f64 * x[0] + py as f64 * x[1] + pz as f64 * x[2]);
                    acc += v * Complex64::from_polar(1.0, phase);
                }
            }
        }
        acc.re
    }

    /// Integral of the density over the cell, `l^3 rho^(0)`.
    pub fn integral(&self) -> f64 {
        self.get([0, 0, 0]).re * self.ell.powi(3)
    }
}

/// Distance diagnostics between two states sharing basis and grid: the
/// grid-averaged trace norm, the `X` seminorm of the difference, and the
/// largest fiber operator norm.
pub struct StateDistance {
    pub s11: f64,
    pub x: f64,
    pub y: f64,
}

/// Compute trace/X/Y norms of `a - b` fiberwise through the compressed
/// small eigenproblem of the stacked low-rank representation.
pub fn state_distance(a: &BlochDensityMatrix, b: &BlochDensityMatrix) -> Result<StateDistance, ModelError> {
    assert_eq!(a.fibers.len(), b.fibers.len());
    let ell = a.grid.ell();
    let mut s11 = 0.0;
    let mut xn = 0.0;
    let mut yn: f64 = 0.0;
    for fi in 0..a.fibers.len() {
        let fa = &a.fibers[fi];
        let fb = &b.fibers[fi];
        let w = a.grid.weight(fi);
        let xi = a.grid.point(fi);
        let (ra, rb) = (fa.rank(), fb.rank());
        if ra + rb == 0 {
            continue;
        }
        let dim = fa.orbitals.nrows();
        let mut stack = Array2::from_elem((dim, ra + rb), ZERO);
        let mut weights = Vec::with_capacity(ra + rb);
        for n in 0..ra {
            stack.column_mut(n).assign(&fa.orbitals.column(n));
            weights.push(fa.occupations[n]);
        }
        for n in 0..rb {
            stack.column_mut(ra + n).assign(&fb.orbitals.column(n));
            weights.push(-fb.occupations[n]);
        }
        let (tr, op) = linalg::low_rank_trace_and_op_norm(&stack.view(), &weights)?;
        s11 += w * tr;
        yn = yn.max(op);
        // X seminorm: same small problem with |D|^{1/2}-scaled columns
        let mut dstack = stack.clone();
        for i in 0..a.basis.n_pw() {
            let m = a.basis.momentum(i, xi, ell);
            let dw = (1.0 + m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt().sqrt();
            for s in 0..4 {
                for c in 0..ra + rb {
                    dstack[(4 * i + s, c)] *= dw;
                }
            }
        }
        let (trx, _) = linalg::low_rank_trace_and_op_norm(&dstack.view(), &weights)?;
        xn += w * trx;
    }
    Ok(StateDistance { s11, x: xn, y: yn })
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"BDFCHK1\0";

/// Write a checkpoint: magic, JSON header (metadata and occupations, floats
/// with 17 significant digits), then the raw little-endian orbital blob.
pub fn save_checkpoint(gamma: &BlochDensityMatrix, path: &Path) -> Result<(), ModelError> {
    let mut header = String::new();
    header.push_str(&format!(
        "{{\"version\":1,\"ell\":{:.16e},\"kmax\":{},\"grid_n\":{},\"grid_shifted\":{},\"fibers\":[",
        gamma.grid.ell(),
        gamma.basis.kmax(),
        gamma.grid.n_per_axis(),
        gamma.grid.shifted()
    ));
    for (i, f) in gamma.fibers.iter().enumerate() {
        if i > 0 {
            header.push(',');
        }
        header.push_str(&format!("{{\"rank\":{},\"occupations\":[", f.rank()));
        for (n, occ) in f.occupations.iter().enumerate() {
            if n > 0 {
                header.push(',');
            }
            header.push_str(&format!("{occ:.16e}"));
        }
        header.push_str("]}");
    }
    header.push_str("]}");
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    file.write_all(&(header.len() as u64).to_le_bytes())?;
    file.write_all(header.as_bytes())?;
    for f in &gamma.fibers {
        for n in 0..f.rank() {
            for v in f.orbitals.column(n).iter() {
                file.write_all(&v.re.to_le_bytes())?;
                file.write_all(&v.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Read a checkpoint back; reconstructs the basis and grid from the header.
pub fn load_checkpoint(path: &Path) -> Result<BlochDensityMatrix, ModelError> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("bad magic".into()));
    }
    let mut lenb = [0u8; 8];
    file.read_exact(&mut lenb)?;
    let hlen = u64::from_le_bytes(lenb) as usize;
    let mut hbuf = vec![0u8; hlen];
    file.read_exact(&mut hbuf)?;
    let header: serde_json::Value = serde_json::from_slice(&hbuf)
        .map_err(|e| ModelError::Checkpoint(format!("bad header: {e}")))?;
    let ell = header["ell"].as_f64().ok_or_else(|| ModelError::Checkpoint("missing ell".into()))?;
    let kmax = header["kmax"].as_i64().ok_or_else(|| ModelError::Checkpoint("missing kmax".into()))? as i32;
    let grid_n = header["grid_n"].as_u64().ok_or_else(|| ModelError::Checkpoint("missing grid_n".into()))? as usize;
    let shifted = header["grid_shifted"].as_bool().unwrap_or(false);
    let basis = Arc::new(crate::lattice::build_basis(kmax)?);
    let grid = Arc::new(crate::lattice::build_kgrid(ell, grid_n, shifted)?);
    let dim = basis.dim();
    let fiber_meta = header["fibers"]
        .as_array()
        .ok_or_else(|| ModelError::Checkpoint("missing fibers".into()))?;
    if fiber_meta.len() != grid.len() {
        return Err(ModelError::Checkpoint(format!(
            "fiber count {} does not match grid {}",
            fiber_meta.len(),
            grid.len()
        )));
    }
    let mut fibers = Vec::with_capacity(fiber_meta.len());
    for meta in fiber_meta {
        let rank = meta["rank"].as_u64().unwrap_or(0) as usize;
        let occs: Vec<f64> = meta["occupations"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_f64()).collect())
            .unwrap_or_default();
        if occs.len() != rank {
            return Err(ModelError::Checkpoint("rank/occupation mismatch".into()));
        }
        let mut orbitals = Array2::from_elem((dim, rank), ZERO);
        let mut buf = vec![0u8; 16 * dim];
        for n in 0..rank {
            file.read_exact(&mut buf)?;
            for i in 0..dim {
                let re = f64::from_le_bytes(buf[16 * i..16 * i + 8].try_into().unwrap());
                let im = f64::from_le_bytes(buf[16 * i + 8..16 * i + 16].try_into().unwrap());
                orbitals[(i, n)] = Complex64::new(re, im);
            }
        }
        fibers.push(FiberDensity { orbitals, occupations: occs });
    }
    Ok(BlochDensityMatrix { basis, grid, fibers })
}

/// Build a fiber density from possibly non-orthonormal columns and real
/// weights by compressing to eigen-form: orthonormalize, solve the small
/// Hermitian problem, drop occupations below `drop_tol`.
pub fn compress_fiber(
    columns: &ArrayView2<Complex64>,
    weights: &[f64],
    drop_tol: f64,
) -> Result<FiberDensity, ModelError> {
    let dim = columns.nrows();
    let r = columns.ncols();
    assert_eq!(r, weights.len());
    if r == 0 {
        return Ok(FiberDensity::empty(dim));
    }
    let (q, rm) = linalg::orthonormalize(columns, 1e-13);
    let rp = q.ncols();
    if rp == 0 {
        return Ok(FiberDensity::empty(dim));
    }
    let mut small = Array2::from_elem((rp, rp), ZERO);
    for i in 0..rp {
        for j in 0..rp {
            let mut s = ZERO;
            for k in 0..r {
                s += rm[(i, k)] * weights[k] * rm[(j, k)].conj();
            }
            small[(i, j)] = s;
        }
    }
    let (vals, vecs) = linalg::eigh(&small.view(), 1e-8)?;
    let keep: Vec<usize> = (0..rp).filter(|&i| vals[i].abs() > drop_tol).collect();
    let mut orbitals = Array2::from_elem((dim, keep.len()), ZERO);
    let mut occupations = Vec::with_capacity(keep.len());
    for (col, &i) in keep.iter().enumerate() {
        // orbital = Q * (eigvec i)
        let mut o = Array1::from_elem(dim, ZERO);
        for k in 0..rp {
            let c = vecs[(k, i)];
            if c == ZERO {
                continue;
            }
            o.iter_mut().zip(q.column(k).iter()).for_each(|(x, y)| *x += c * y);
        }
        orbitals.column_mut(col).assign(&o);
        occupations.push(vals[i]);
    }
    Ok(FiberDensity { orbitals, occupations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_basis, build_kgrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_orbital_state(kmax: i32, ell: f64, k: [i32; 3], occ: f64) -> BlochDensityMatrix {
        let basis = Arc::new(build_basis(kmax).unwrap());
        let grid = Arc::new(build_kgrid(ell, 1, true).unwrap());
        let dim = basis.dim();
        let mut orbitals = Array2::from_elem((dim, 1), ZERO);
        let pos = basis.position(k).unwrap();
        orbitals[(4 * pos, 0)] = Complex64::new(1.0, 0.0);
        let fibers = vec![FiberDensity { orbitals, occupations: vec![occ] }];
        BlochDensityMatrix { basis, grid, fibers }
    }

    #[test]
    fn trace_per_cell_cases() {
        let basis = Arc::new(build_basis(1).unwrap());
        let grid = Arc::new(build_kgrid(1.0, 2, true).unwrap());
        let zero = BlochDensityMatrix::zero(basis.clone(), grid.clone());
        assert_eq!(zero.trace_per_cell(), 0.0);

        // two bands at every fiber, occupation 1 -> trace 2
        let dim = basis.dim();
        let mut full = BlochDensityMatrix::zero(basis.clone(), grid.clone());
        for f in &mut full.fibers {
            let mut orb = Array2::from_elem((dim, 2), ZERO);
            orb[(0, 0)] = Complex64::new(1.0, 0.0);
            orb[(5, 1)] = Complex64::new(1.0, 0.0);
            *f = FiberDensity { orbitals: orb, occupations: vec![1.0, 1.0] };
        }
        assert!((full.trace_per_cell() - 2.0).abs() < 1e-15);
        full.validate(2.0).unwrap();

        // half-occupied single band -> 1/2
        let mut half = BlochDensityMatrix::zero(basis, grid);
        for f in &mut half.fibers {
            let mut orb = Array2::from_elem((dim, 1), ZERO);
            orb[(8, 0)] = Complex64::new(1.0, 0.0);
            *f = FiberDensity { orbitals: orb, occupations: vec![0.5] };
        }
        assert!((half.trace_per_cell() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn density_fourier_single_plane_wave() {
        let ell = 1.9;
        let st = single_orbital_state(1, ell, [0, 0, 0], 1.0);
        let df = st.density_fourier();
        assert!((df.get([0, 0, 0]).re - 1.0 / ell.powi(3)).abs() < 1e-15);
        for p in [[1, 0, 0], [0, -1, 2], [2, 2, 2]] {
            assert!(df.get(p).norm() < 1e-16);
        }
        assert!((df.integral() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn density_fourier_symmetry_and_positivity() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let basis = Arc::new(build_basis(1).unwrap());
        let grid = Arc::new(build_kgrid(1.4, 2, true).unwrap());
        let dim = basis.dim();
        let mut st = BlochDensityMatrix::zero(basis, grid);
        for f in &mut st.fibers {
            let mut col = Array1::from_elem(dim, ZERO);
            for i in 0..dim {
                col[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            col.mapv_inplace(|z| z / norm);
            let mut orb = Array2::from_elem((dim, 1), ZERO);
            orb.column_mut(0).assign(&col);
            *f = FiberDensity { orbitals: orb, occupations: vec![rng.gen_range(0.1..1.0)] };
        }
        let df = st.density_fourier();
        for p in [[1, 0, 0], [1, -2, 0], [2, 1, -1]] {
            let a = df.get(p);
            let b = df.get([-p[0], -p[1], -p[2]]);
            assert_eq!(a, b.conj());
        }
        assert!((df.integral() - st.trace_per_cell()).abs() < 1e-12);
        // reconstructed density is non-negative on a sample grid
        for ix in 0..5 {
            for iy in 0..5 {
                let x = [
                    -0.7 + 0.35 * ix as f64,
                    -0.7 + 0.35 * iy as f64,
                    0.23,
                ];
                assert!(df.real_space(x) >= -1e-8);
            }
        }
    }

    #[test]
    fn kernel_zero_state() {
        let basis = Arc::new(build_basis(0).unwrap());
        let grid = Arc::new(build_kgrid(1.0, 1, false).unwrap());
        let z = BlochDensityMatrix::zero(basis, grid);
        let k = z.kernel_at([0.1, 0.0, 0.0], [0.0, 0.2, 0.0]);
        assert!(linalg::frobenius(&k.view()) == 0.0);
    }

    #[test]
    fn kernel_cauchy_schwarz() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ell = 1.3;
        let basis = Arc::new(build_basis(1).unwrap());
        let grid = Arc::new(build_kgrid(ell, 2, false).unwrap());
        let dim = basis.dim();
        let mut st = BlochDensityMatrix::zero(basis, grid);
        for f in &mut st.fibers {
            let mut col = Array1::from_elem(dim, ZERO);
            for i in 0..dim {
                col[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            col.mapv_inplace(|z| z / norm);
            let mut orb = Array2::from_elem((dim, 1), ZERO);
            orb.column_mut(0).assign(&col);
            *f = FiberDensity { orbitals: orb, occupations: vec![0.8] };
        }
        // |gamma(x,y)|^2 <= rho(x) rho(y) with rho(x) = tr4 gamma(x,x)
        for _ in 0..100 {
            let mut rx = || rng.gen_range(-0.65..0.65);
            let x = [rx(), rx(), rx()];
            let y = [rx(), rx(), rx()];
            let kxy = st.kernel_at(x, y);
            let rho_x: f64 = (0..4).map(|s| st.kernel_at(x, x)[(s, s)].re).sum();
            let rho_y: f64 = (0..4).map(|s| st.kernel_at(y, y)[(s, s)].re).sum();
            let m2: f64 = kxy.iter().map(|z| z.norm_sqr()).sum();
            assert!(m2 <= rho_x * rho_y * (1.0 + 1e-10) + 1e-14);
        }
    }

    #[test]
    fn kernel_diagonal_matches_density() {
        let ell = 1.1;
        let st = single_orbital_state(1, ell, [1, 0, 0], 0.7);
        let df = st.density_fourier();
        for x in [[0.0, 0.0, 0.0], [0.2, -0.1, 0.4]] {
            let tr: f64 = (0..4).map(|s| st.kernel_at(x, x)[(s, s)].re).sum();
            assert!((tr - df.real_space(x)).abs() < 1e-12);
        }
    }

    #[test]
    fn norms_zero_and_rank_one() {
        let basis = Arc::new(build_basis(1).unwrap());
        let grid = Arc::new(build_kgrid(2.0, 2, true).unwrap());
        let z = BlochDensityMatrix::zero(basis.clone(), grid.clone());
        let n = z.norms();
        assert_eq!((n.s11, n.s1inf, n.x, n.y), (0.0, 0.0, 0.0, 0.0));

        // lowest free positive band at every fiber: S11 = 1, Y = 1,
        // X = avg of d_1^+(xi)
        let ell = 2.0;
        let mut st = BlochDensityMatrix::zero(basis.clone(), grid.clone());
        let mut want_x = 0.0;
        for (fi, f) in st.fibers.iter_mut().enumerate() {
            let xi = grid.point(fi);
            let eig = crate::dirac::diagonalize(&crate::dirac::assemble_free_dirac(&basis, xi, ell)).unwrap();
            // first positive eigenvalue
            let pos = eig.eigenvalues.iter().position(|&v| v > 0.0).unwrap();
            let mut orb = Array2::from_elem((basis.dim(), 1), ZERO);
            orb.column_mut(0).assign(&eig.eigenvectors.column(pos));
            *f = FiberDensity { orbitals: orb, occupations: vec![1.0] };
            want_x += grid.weight(fi) * eig.eigenvalues[pos];
        }
        let n = st.norms();
        assert!((n.s11 - 1.0).abs() < 1e-12);
        assert!((n.y - 1.0).abs() < 1e-14);
        assert!((n.x - want_x).abs() < 1e-10);
        assert!(n.s11 <= n.s1inf + 1e-15);
    }

    #[test]
    fn projection_property_integer_occupations() {
        let st = single_orbital_state(1, 1.0, [0, 1, 0], 1.0);
        let f = &st.fibers[0];
        let dense = f.dense();
        let sq = dense.dot(&dense);
        let d = &sq - &dense;
        assert!(linalg::frobenius(&d.view()) <= 1e-10);
    }

    #[test]
    fn compress_fiber_recovers_eigenform() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let dim = 12;
        let mut cols = Array2::from_elem((dim, 3), ZERO);
        for j in 0..3 {
            for i in 0..dim {
                cols[(i, j)] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let w = [0.6, 0.3, 0.9];
        let f = compress_fiber(&cols.view(), &w, 1e-14).unwrap();
        // compare dense forms
        let mut want = Array2::from_elem((dim, dim), ZERO);
        for k in 0..3 {
            for i in 0..dim {
                for j in 0..dim {
                    want[(i, j)] += cols[(i, k)] * w[k] * cols[(j, k)].conj();
                }
            }
        }
        let have = f.dense();
        let d = &have - &want;
        assert!(linalg::frobenius(&d.view()) < 1e-10 * linalg::frobenius(&want.view()));
        // occupations are genuine eigenvalues: orthonormal orbitals
        for a in 0..f.rank() {
            for b in 0..f.rank() {
                let s: Complex64 = f
                    .orbitals
                    .column(a)
                    .iter()
                    .zip(f.orbitals.column(b).iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((s - Complex64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let st = single_orbital_state(1, 1.7, [1, -1, 0], 0.9);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.ckpt");
        save_checkpoint(&st, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.basis.kmax(), 1);
        assert_eq!(back.grid.len(), 1);
        assert_eq!(back.fibers[0].occupations, vec![0.9]);
        let d = &back.fibers[0].orbitals - &st.fibers[0].orbitals;
        assert!(linalg::frobenius(&d.view()) == 0.0);
    }

    #[test]
    fn validate_rejects_bad_occupation() {
        let mut st = single_orbital_state(1, 1.0, [0, 0, 0], 1.0);
        st.fibers[0].occupations[0] = 1.7;
        assert!(st.validate(5.0).is_err());
    }
}
