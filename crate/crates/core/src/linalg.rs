//! Dense complex Hermitian linear algebra on top of LAPACK's divide-and-conquer
//! eigensolver, plus the small helpers the solver needs (Frobenius norms,
//! Gram-Schmidt, trace norms of low-rank Hermitian forms).

use crate::error::ModelError;
use ndarray::{Array1, Array2, ArrayView2};
use num_complex::Complex64;

extern crate openblas_src;

extern "C" {
    fn openblas_set_num_threads(n: i32);
}

/// Cap the number of OpenBLAS threads (global, process-wide). Used by the
/// single-threaded acceptance runs; harmless to call repeatedly.
pub fn set_blas_threads(n: usize) {
    unsafe { openblas_set_num_threads(n.max(1) as i32) }
}

/// Hermitian deviation `max |A - A^H|` (max-abs entry).
pub fn hermitian_deviation(a: &ArrayView2<Complex64>) -> f64 {
    let n = a.nrows();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            if d > dev {
                dev = d;
            }
        }
    }
    dev
}

pub fn frobenius(a: &ArrayView2<Complex64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Largest row sum of absolute values; cheap scale estimate for tolerances.
pub fn inf_norm(a: &ArrayView2<Complex64>) -> f64 {
    let mut best = 0.0f64;
    for row in a.rows() {
        let s: f64 = row.iter().map(|z| z.norm()).sum();
        if s > best {
            best = s;
        }
    }
    best
}

/// Eigendecomposition of a Hermitian matrix via `zheevd`.
///
/// Returns ascending eigenvalues and the unitary matrix whose column `j` is
/// the eigenvector of eigenvalue `j`. The input is validated against
/// `hermitian_tol` (absolute, on top of the matrix scale) and symmetrized
/// before the call so LAPACK sees an exactly Hermitian lower triangle.
pub fn eigh(a: &ArrayView2<Complex64>, hermitian_tol: f64) -> Result<(Array1<f64>, Array2<Complex64>), ModelError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigh needs a square matrix");
    let scale = inf_norm(a).max(1.0);
    let dev = hermitian_deviation(a);
    if dev > hermitian_tol * scale {
        return Err(ModelError::NotHermitian { deviation: dev, tolerance: hermitian_tol * scale });
    }
    // Column-major buffer, symmetrized.
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            buf[i + j * n] = 0.5 * (a[(i, j)] + a[(j, i)].conj());
        }
    }
    let mut w = vec![0.0f64; n];
    let nn = n as i32;
    let mut info = 0i32;
    unsafe {
        // workspace query
        let (mut lwork, mut lrwork, mut liwork) = (-1i32, -1i32, -1i32);
        let mut wq = [Complex64::new(0.0, 0.0)];
        let mut rwq = [0.0f64];
        let mut iwq = [0i32];
        lapack_sys::zheevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            wq.as_mut_ptr() as *mut _,
            &lwork,
            rwq.as_mut_ptr(),
            &lrwork,
            iwq.as_mut_ptr(),
            &liwork,
            &mut info,
        );
        if info != 0 {
            return Err(ModelError::EigensolverFailure(info));
        }
        lwork = wq[0].re as i32;
        lrwork = rwq[0] as i32;
        liwork = iwq[0];
        let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
        let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::zheevd_(
            b"V".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(ModelError::EigensolverFailure(info));
    }
    let mut vecs = Array2::<Complex64>::zeros((n, n));
    for j in 0..n {
        for i in 0..n {
            vecs[(i, j)] = buf[i + j * n];
        }
    }
    Ok((Array1::from_vec(w), vecs))
}

/// Eigenvalues only (ascending), via `zheevd` with the no-vectors job.
pub fn eigvalsh(a: &ArrayView2<Complex64>, hermitian_tol: f64) -> Result<Array1<f64>, ModelError> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "eigvalsh needs a square matrix");
    let scale = inf_norm(a).max(1.0);
    let dev = hermitian_deviation(a);
    if dev > hermitian_tol * scale {
        return Err(ModelError::NotHermitian { deviation: dev, tolerance: hermitian_tol * scale });
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..n {
        for i in 0..n {
            buf[i + j * n] = 0.5 * (a[(i, j)] + a[(j, i)].conj());
        }
    }
    let mut w = vec![0.0f64; n];
    let nn = n as i32;
    let mut info = 0i32;
    unsafe {
        let (mut lwork, mut lrwork, mut liwork) = (-1i32, -1i32, -1i32);
        let mut wq = [Complex64::new(0.0, 0.0)];
        let mut rwq = [0.0f64];
        let mut iwq = [0i32];
        lapack_sys::zheevd_(
            b"N".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            wq.as_mut_ptr() as *mut _,
            &lwork,
            rwq.as_mut_ptr(),
            &lrwork,
            iwq.as_mut_ptr(),
            &liwork,
            &mut info,
        );
        if info != 0 {
            return Err(ModelError::EigensolverFailure(info));
        }
        lwork = wq[0].re as i32;
        lrwork = rwq[0] as i32;
        liwork = iwq[0];
        let mut work = vec![Complex64::new(0.0, 0.0); lwork.max(1) as usize];
        let mut rwork = vec![0.0f64; lrwork.max(1) as usize];
        let mut iwork = vec![0i32; liwork.max(1) as usize];
        lapack_sys::zheevd_(
            b"N".as_ptr() as *const _,
            b"L".as_ptr() as *const _,
            &nn,
            buf.as_mut_ptr() as *mut _,
            &nn,
            w.as_mut_ptr(),
            work.as_mut_ptr() as *mut _,
            &lwork,
            rwork.as_mut_ptr(),
            &lrwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(ModelError::EigensolverFailure(info));
    }
    Ok(Array1::from_vec(w))
}

/// Modified Gram-Schmidt with column pivoting and a drop tolerance.
///
/// Returns `(Q, R)` with `Q` (n x r) orthonormal and `R = Q^H A` (r x m),
/// where `r` is the numerical rank of `A` at `tol` relative to the largest
/// column norm. Columns are visited greedily by remaining norm, so the result
/// is deterministic for a given `A`.
pub fn orthonormalize(a: &ArrayView2<Complex64>, tol: f64) -> (Array2<Complex64>, Array2<Complex64>) {
    let (n, m) = (a.nrows(), a.ncols());
    let mut cols: Vec<Array1<Complex64>> = (0..m).map(|j| a.column(j).to_owned()).collect();
    let mut q: Vec<Array1<Complex64>> = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let scale = cols
        .iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut alive: Vec<bool> = vec![true; m];
    loop {
        // next pivot: largest remaining column
        let mut best = (0usize, 0.0f64);
        for j in 0..m {
            if !alive[j] {
                continue;
            }
            let norm = cols[j].iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm > best.1 {
                best = (j, norm);
            }
        }
        if best.1 <= tol * scale {
            break;
        }
        let j = best.0;
        let mut v = cols[j].clone();
        // second orthogonalization pass for stability
        for qi in &q {
            let c: Complex64 = qi.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum();
            v.iter_mut().zip(qi.iter()).for_each(|(x, y)| *x -= c * y);
        }
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm <= tol * scale {
            alive[j] = false;
            continue;
        }
        v.mapv_inplace(|z| z / norm);
        alive[j] = false;
        // deflate remaining columns
        for k in 0..m {
            if !alive[k] {
                continue;
            }
            let c: Complex64 = v.iter().zip(cols[k].iter()).map(|(a, b)| a.conj() * b).sum();
            let vv = v.clone();
            cols[k].iter_mut().zip(vv.iter()).for_each(|(x, y)| *x -= c * y);
        }
        q.push(v);
        order.push(j);
        if q.len() == n.min(m) {
            break;
        }
    }
    let r = q.len();
    let mut qm = Array2::<Complex64>::zeros((n, r));
    for (jq, col) in q.iter().enumerate() {
        qm.column_mut(jq).assign(col);
    }
    let mut rm = Array2::<Complex64>::zeros((r, m));
    for i in 0..r {
        for jm in 0..m {
            rm[(i, jm)] = qm.column(i).iter().zip(a.column(jm).iter()).map(|(x, y)| x.conj() * y).sum();
        }
    }
    (qm, rm)
}

/// Eigenvalues of the low-rank Hermitian operator `B diag(w) B^H` (columns of
/// `B` need not be orthonormal, weights may be negative). Only the nonzero
/// part of the spectrum is returned, as eigenvalues of the compressed r x r
/// problem.
pub fn low_rank_eigenvalues(b: &ArrayView2<Complex64>, w: &[f64]) -> Result<Vec<f64>, ModelError> {
    let r = b.ncols();
    assert_eq!(r, w.len());
    if r == 0 {
        return Ok(Vec::new());
    }
    // Orthonormalize the columns, compress, and diagonalize r' x r'.
    let (q, rm) = orthonormalize(b, 1e-13);
    let rp = q.ncols();
    if rp == 0 {
        return Ok(Vec::new());
    }
    let mut small = Array2::<Complex64>::zeros((rp, rp));
    for i in 0..rp {
        for j in 0..rp {
            let mut s = Complex64::new(0.0, 0.0);
            for k in 0..r {
                s += rm[(i, k)] * w[k] * rm[(j, k)].conj();
            }
            small[(i, j)] = s;
        }
    }
    let (vals, _) = eigh(&small.view(), 1e-8)?;
    Ok(vals.to_vec())
}

/// Trace norm and operator norm of `B diag(w) B^H`.
pub fn low_rank_trace_and_op_norm(b: &ArrayView2<Complex64>, w: &[f64]) -> Result<(f64, f64), ModelError> {
    let vals = low_rank_eigenvalues(b, w)?;
    let tr: f64 = vals.iter().map(|v| v.abs()).sum();
    let op = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok((tr, op))
}
