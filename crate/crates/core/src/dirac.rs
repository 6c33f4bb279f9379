//! Dirac gamma algebra, assembly of the free Bloch fiber operator and its
//! exact spectrum, diagonalization with a reproducible gauge in degenerate
//! subspaces, and spectral projectors.

use crate::error::ModelError;
use crate::lattice::PlaneWaveBasis;
use crate::linalg;
use ndarray::{Array1, Array2};
use num_complex::Complex64;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative tolerance accepted for Hermiticity of fiber operators.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Default relative width used to split degenerate clusters and to refuse
/// ambiguous spectral cuts.
pub const DEGENERACY_TOL: f64 = 1e-9;

/// The three alpha matrices in the standard (Dirac) representation.
pub fn alpha_matrices() -> [Array2<Complex64>; 3] {
    let mut a1 = Array2::from_elem((4, 4), ZERO);
    let mut a2 = Array2::from_elem((4, 4), ZERO);
    let mut a3 = Array2::from_elem((4, 4), ZERO);
    // alpha_k = [[0, sigma_k], [sigma_k, 0]]
    a1[(0, 3)] = ONE;
    a1[(1, 2)] = ONE;
    a1[(2, 1)] = ONE;
    a1[(3, 0)] = ONE;
    a2[(0, 3)] = -I;
    a2[(1, 2)] = I;
    a2[(2, 1)] = -I;
    a2[(3, 0)] = I;
    a3[(0, 2)] = ONE;
    a3[(1, 3)] = -ONE;
    a3[(2, 0)] = ONE;
    a3[(3, 1)] = -ONE;
    [a1, a2, a3]
}

/// beta = diag(1, 1, -1, -1).
pub fn beta_matrix() -> Array2<Complex64> {
    let mut b = Array2::from_elem((4, 4), ZERO);
    b[(0, 0)] = ONE;
    b[(1, 1)] = ONE;
    b[(2, 2)] = -ONE;
    b[(3, 3)] = -ONE;
    b
}

/// Check the Clifford relations on the integer-valued matrices; meant to run
/// once at startup (and in tests).
pub fn check_clifford_relations() -> bool {
    let alphas = alpha_matrices();
    let beta = beta_matrix();
    let id = Array2::<Complex64>::eye(4);
    let anti = |x: &Array2<Complex64>, y: &Array2<Complex64>| x.dot(y) + y.dot(x);
    for j in 0..3 {
        for k in 0..3 {
            let expect = if j == k { id.mapv(|z| z * 2.0) } else { Array2::from_elem((4, 4), ZERO) };
            if anti(&alphas[j], &alphas[k]) != expect {
                return false;
            }
        }
        if anti(&alphas[j], &beta) != Array2::from_elem((4, 4), ZERO) {
            return false;
        }
    }
    beta.dot(&beta) == id
}

/// The 4x4 symbol `sum_j m_j alpha_j + beta` for momentum `m`.
pub fn dirac_symbol(m: [f64; 3]) -> Array2<Complex64> {
    // [[ I2, sigma.m], [sigma.m, -I2]] written out directly
    let (mx, my, mz) = (m[0], m[1], m[2]);
    let mut b = Array2::from_elem((4, 4), ZERO);
    b[(0, 0)] = ONE;
    b[(1, 1)] = ONE;
    b[(2, 2)] = -ONE;
    b[(3, 3)] = -ONE;
    // sigma.m = [[mz, mx - i my], [mx + i my, -mz]]
    b[(0, 2)] = Complex64::new(mz, 0.0);
    b[(0, 3)] = Complex64::new(mx, -my);
    b[(1, 2)] = Complex64::new(mx, my);
    b[(1, 3)] = Complex64::new(-mz, 0.0);
    b[(2, 0)] = Complex64::new(mz, 0.0);
    b[(2, 1)] = Complex64::new(mx, -my);
    b[(3, 0)] = Complex64::new(mx, my);
    b[(3, 1)] = Complex64::new(-mz, 0.0);
    b
}

/// One Bloch fiber operator: a dense Hermitian matrix over the shared
/// plane-wave spinor basis.
#[derive(Debug, Clone)]
pub struct FiberOperator {
    pub xi: [f64; 3],
    pub matrix: Array2<Complex64>,
}

/// Diagonalized fiber: ascending eigenvalues and a unitary eigenvector set
/// (column `n` belongs to `eigenvalues[n]`).
#[derive(Debug, Clone)]
pub struct FiberEigensystem {
    pub xi: [f64; 3],
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<Complex64>,
}

/// Assemble the free Dirac fiber operator. Block-diagonal over plane waves:
/// the block of index `k` is the symbol at momentum `xi + 2 pi k / l`.
pub fn assemble_free_dirac(basis: &PlaneWaveBasis, xi: [f64; 3], ell: f64) -> FiberOperator {
    let dim = basis.dim();
    let mut matrix = Array2::from_elem((dim, dim), ZERO);
    for i in 0..basis.n_pw() {
        let m = basis.momentum(i, xi, ell);
        let block = dirac_symbol(m);
        for s in 0..4 {
            for t in 0..4 {
                matrix[(4 * i + s, 4 * i + t)] = block[(s, t)];
            }
        }
    }
    FiberOperator { xi, matrix }
}

/// Closed-form spectrum of the free fiber operator: for every plane wave `k`
/// the pair `+-sqrt(1 + |xi + 2 pi k / l|^2)`, each twofold degenerate.
pub fn free_spectrum(basis: &PlaneWaveBasis, xi: [f64; 3], ell: f64) -> Vec<([i32; 3], f64)> {
    let mut out = Vec::with_capacity(2 * basis.n_pw());
    for i in 0..basis.n_pw() {
        let m = basis.momentum(i, xi, ell);
        let e = (1.0 + m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
        let k = basis.indices()[i];
        out.push((k, e));
        out.push((k, -e));
    }
    out
}

/// Ascending positive free eigenvalues with the twofold degeneracy written
/// out, i.e. the discrete `d_k^+(xi)` sequence.
pub fn free_positive_bands(basis: &PlaneWaveBasis, xi: [f64; 3], ell: f64) -> Vec<f64> {
    let mut bands = Vec::with_capacity(2 * basis.n_pw());
    for (_, e) in free_spectrum(basis, xi, ell) {
        if e > 0.0 {
            bands.push(e);
            bands.push(e);
        }
    }
    bands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    bands
}

/// The full free spectrum with multiplicities, ascending (each `(k, +-e)`
/// entry of `free_spectrum` is twofold degenerate).
pub fn free_spectrum_with_multiplicity(basis: &PlaneWaveBasis, xi: [f64; 3], ell: f64) -> Vec<f64> {
    let mut all = Vec::with_capacity(4 * basis.n_pw());
    for (_, e) in free_spectrum(basis, xi, ell) {
        all.push(e);
        all.push(e);
    }
    all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    all
}

/// Diagonalize a Hermitian fiber operator.
///
/// Degenerate clusters (eigenvalues within `DEGENERACY_TOL * scale` of each
/// other) are re-gauged deterministically: the cluster basis is rebuilt by
/// Gram-Schmidt applied to the projections of the standard basis vectors in
/// their natural order, so repeated runs and different LAPACK builds agree.
pub fn diagonalize(op: &FiberOperator) -> Result<FiberEigensystem, ModelError> {
    let (vals, mut vecs) = linalg::eigh(&op.matrix.view(), HERMITIAN_TOL)?;
    let scale = linalg::inf_norm(&op.matrix.view()).max(1.0);
    let tol = DEGENERACY_TOL * scale;
    let n = vals.len();
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (vals[end] - vals[end - 1]).abs() <= tol {
            end += 1;
        }
        if end - start > 1 {
            regauge_cluster(&mut vecs, start, end);
        }
        start = end;
    }
    Ok(FiberEigensystem { xi: op.xi, eigenvalues: vals, eigenvectors: vecs })
}

/// Replace the eigenvector columns `[start, end)` (an orthonormal basis of a
/// degenerate subspace) by the Gram-Schmidt basis of the projections
/// `P e_0, P e_1, ...` taken in standard order.
fn regauge_cluster(vecs: &mut Array2<Complex64>, start: usize, end: usize) {
    let n = vecs.nrows();
    let r = end - start;
    let v = vecs.slice(ndarray::s![.., start..end]).to_owned();
    // P e_j = V (V^H e_j) = V * conj(row j of V); try standard basis vectors in
    // order, keep those with a significant residual.
    let mut accepted: Vec<Array1<Complex64>> = Vec::with_capacity(r);
    for j in 0..n {
        if accepted.len() == r {
            break;
        }
        let coeff: Vec<Complex64> = (0..r).map(|c| v[(j, c)].conj()).collect();
        let mut w = Array1::from_elem(n, ZERO);
        for (c, &cc) in coeff.iter().enumerate() {
            if cc != ZERO {
                w.iter_mut().zip(v.column(c).iter()).for_each(|(x, y)| *x += cc * y);
            }
        }
        for q in &accepted {
            let c: Complex64 = q.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
            w.iter_mut().zip(q.iter()).for_each(|(x, y)| *x -= c * y);
        }
        let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 1e-8 {
            w.mapv_inplace(|z| z / norm);
            accepted.push(w);
        }
    }
    if accepted.len() == r {
        for (c, w) in accepted.iter().enumerate() {
            vecs.column_mut(start + c).assign(w);
        }
    }
    // If the greedy pass failed to span the cluster (pathological), the LAPACK
    // basis is kept as-is.
}

/// Spectral projector `P = sum_{lambda in [a, b)} v v^H`.
///
/// Eigenvalues within `degeneracy_tol * scale` of either endpoint make the
/// split ambiguous and are refused.
pub fn spectral_projector(
    eig: &FiberEigensystem,
    interval: (f64, f64),
    degeneracy_tol: f64,
) -> Result<Array2<Complex64>, ModelError> {
    let (a, b) = interval;
    assert!(a < b, "spectral_projector needs a < b");
    let n = eig.eigenvalues.len();
    let scale = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1.0);
    let tol = degeneracy_tol * scale;
    for &lam in eig.eigenvalues.iter() {
        for cut in [a, b] {
            if cut.is_finite() && (lam - cut).abs() < tol {
                return Err(ModelError::AmbiguousSplit { cut, eigenvalue: lam, tolerance: tol });
            }
        }
    }
    let sel: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] >= a && eig.eigenvalues[i] < b).collect();
    let mut p = Array2::from_elem((n, n), ZERO);
    for &idx in &sel {
        let v = eig.eigenvectors.column(idx);
        for i in 0..n {
            let vi = v[i];
            if vi == ZERO {
                continue;
            }
            for j in 0..n {
                p[(i, j)] += vi * v[j].conj();
            }
        }
    }
    Ok(p)
}

/// Indices of eigenvectors with eigenvalue in `[0, inf)`, refusing eigenvalues
/// within tolerance of the cut at 0.
pub fn positive_indices(eig: &FiberEigensystem, degeneracy_tol: f64) -> Result<Vec<usize>, ModelError> {
    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = degeneracy_tol * scale;
    for &lam in eig.eigenvalues.iter() {
        if lam.abs() < tol {
            return Err(ModelError::AmbiguousSplit { cut: 0.0, eigenvalue: lam, tolerance: tol });
        }
    }
    Ok((0..eig.eigenvalues.len()).filter(|&i| eig.eigenvalues[i] > 0.0).collect())
}
