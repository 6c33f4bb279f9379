//! Periodic Coulomb potential `G` and the quasi-periodic exchange kernel
//! `W^inf` as Fourier data, their m-split, and truncated real-space
//! evaluations used only for validation sampling.

use crate::error::ModelError;
use crate::lattice::PlaneWaveBasis;
use ndarray::Array2;
use num_complex::Complex64;
use std::f64::consts::PI;

/// Fourier side of the zero-mean periodic Coulomb potential:
/// `G(x) = (1/ pi l) sum_{p != 0} e^{2 i pi p x / l} / |p|^2`.
#[derive(Debug, Clone, Copy)]
pub struct PeriodicCoulomb {
    pub ell: f64,
}

impl PeriodicCoulomb {
    pub fn new(ell: f64) -> Self {
        Self { ell }
    }

    /// `G^(p) = 1 / (pi l |p|^2)` for `p != 0`, and 0 at `p = 0` (zero-mean
    /// gauge, which also encodes the neutralizing background).
    pub fn fourier(&self, p: [i32; 3]) -> f64 {
        let n2 = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]) as f64;
        if n2 == 0.0 {
            0.0
        } else {
            1.0 / (PI * self.ell * n2)
        }
    }
}

/// A truncated real-space sample of `G`, flagged when the requested point is
/// too close to a lattice point for the sample to mean anything.
#[derive(Debug, Clone, Copy)]
pub struct RealSpaceSample {
    pub value: f64,
    pub imag_residual: f64,
    pub near_singularity: bool,
}

/// Truncated Fourier partial sum of `G` at `x` (real part; the imaginary part
/// cancels in +-p pairs and is returned as a residual diagnostic).
pub fn coulomb_realspace(ell: f64, x: [f64; 3], pmax: i32) -> RealSpaceSample {
    assert!(pmax >= 1, "coulomb_realspace needs pmax >= 1");
    let near_singularity = {
        let tol = 1e-6 * ell;
        let frac = |c: f64| {
            let t = c / ell - (c / ell).round();
            (t * ell).abs()
        };
        frac(x[0]) < tol && frac(x[1]) < tol && frac(x[2]) < tol
    };
    let g = 2.0 * PI / ell;
    let mut acc = Complex64::new(0.0, 0.0);
    for px in -pmax..=pmax {
        for py in -pmax..=pmax {
            for pz in -pmax..=pmax {
                let n2 = (px * px + py * py + pz * pz) as f64;
                if n2 == 0.0 {
                    continue;
                }
                let phase = g * (px as f64 * x[0] + py as f64 * x[1] + pz as f64 * x[2]);
                acc += Complex64::from_polar(1.0 / n2, phase);
            }
        }
    }
    let v = acc / (PI * ell);
    RealSpaceSample { value: v.re, imag_residual: v.im.abs(), near_singularity }
}

/// Multiplication-operator matrix of `G` on the truncated basis: entry for
/// `(k, k')` is `G^(k - k')`, tensored with the 4x4 identity.
pub fn coulomb_matrix(basis: &PlaneWaveBasis, ell: f64) -> Array2<Complex64> {
    let coul = PeriodicCoulomb::new(ell);
    let n = basis.n_pw();
    let dim = basis.dim();
    let mut m = Array2::from_elem((dim, dim), Complex64::new(0.0, 0.0));
    let idx = basis.indices();
    for i in 0..n {
        for j in 0..n {
            let d = [idx[i][0] - idx[j][0], idx[i][1] - idx[j][1], idx[i][2] - idx[j][2]];
            let v = coul.fourier(d);
            if v != 0.0 {
                let vz = Complex64::new(v, 0.0);
                for s in 0..4 {
                    m[(4 * i + s, 4 * j + s)] = vz;
                }
            }
        }
    }
    m
}

/// One entry of the exchange kernel table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExchangeCoefficient {
    Value(f64),
    /// Vanishing denominator: `2 pi p / l` hits the momentum transfer exactly
    /// (on uniform grids only possible for `p = 0`, `xi = xi'`). The caller
    /// decides what stands in for the integrable singularity.
    Singular,
}

/// The exchange kernel `W^inf` in Fourier form, with the `m`-split used by
/// the constants estimates.
#[derive(Debug, Clone, Copy)]
pub struct ExchangeKernel {
    pub ell: f64,
    pub msplit: i32,
}

impl ExchangeKernel {
    pub fn new(ell: f64, msplit: i32) -> Result<Self, ModelError> {
        if msplit < 2 {
            return Err(ModelError::InvalidParams(format!("msplit must be >= 2, got {msplit}")));
        }
        Ok(Self { ell, msplit })
    }

    /// `(4 pi / l^3) / |2 pi k / l - eta|^2`, or `Singular` when the
    /// denominator vanishes to machine precision.
    pub fn coefficient(&self, k: [i32; 3], eta: [f64; 3]) -> ExchangeCoefficient {
        let g = 2.0 * PI / self.ell;
        let dx = g * k[0] as f64 - eta[0];
        let dy = g * k[1] as f64 - eta[1];
        let dz = g * k[2] as f64 - eta[2];
        let d2 = dx * dx + dy * dy + dz * dz;
        if d2 <= 1e-18 * g * g {
            ExchangeCoefficient::Singular
        } else {
            ExchangeCoefficient::Value(4.0 * PI / (self.ell.powi(3) * d2))
        }
    }
}

/// Truncated real-space difference `W_{>=m}(eta, x) - G(x)` with matched
/// truncation of both Fourier series, so the shared slowly-decaying part
/// cancels coefficient-wise. Used to validate the `C_{>=m}` bound.
pub fn w_ge_m_minus_coulomb(ell: f64, msplit: i32, eta: [f64; 3], x: [f64; 3], pmax: i32) -> Complex64 {
    let g = 2.0 * PI / ell;
    let pref = 4.0 * PI / ell.powi(3);
    let mut acc = Complex64::new(0.0, 0.0);
    for kx in -pmax..=pmax {
        for ky in -pmax..=pmax {
            for kz in -pmax..=pmax {
                let inf = kx.abs().max(ky.abs()).max(kz.abs());
                // W_{>=m} term
                if inf >= msplit {
                    let dx = g * kx as f64 - eta[0];
                    let dy = g * ky as f64 - eta[1];
                    let dz = g * kz as f64 - eta[2];
                    let d2 = dx * dx + dy * dy + dz * dz;
                    let phase = dx * x[0] + dy * x[1] + dz * x[2];
                    acc += Complex64::from_polar(pref / d2, phase);
                }
                // matching -G term
                if inf > 0 {
                    let qx = g * kx as f64;
                    let qy = g * ky as f64;
                    let qz = g * kz as f64;
                    let q2 = qx * qx + qy * qy + qz * qz;
                    let phase = qx * x[0] + qy * x[1] + qz * x[2];
                    acc -= Complex64::from_polar(pref / q2, phase);
                }
            }
        }
    }
    acc
}

/// Table of kernel coefficients for all fiber pairs of a grid and all
/// momentum transfers reachable inside the basis (`|p|_inf <= 2 K`).
/// Entry `(i, j, p)` holds the coefficient at `eta = xi_i - xi_j`.
#[derive(Debug, Clone)]
pub struct ExchangeTable {
    n_k: usize,
    transfers: Vec<[i32; 3]>,
    side: usize,
    kmax2: i32,
    values: Vec<Option<f64>>,
}

impl ExchangeTable {
    pub fn transfers(&self) -> &[[i32; 3]] {
        &self.transfers
    }

    fn transfer_pos(&self, p: [i32; 3]) -> Option<usize> {
        let m = self.kmax2;
        if p.iter().any(|c| c.abs() > m) {
            return None;
        }
        let off = |c: i32| (c + m) as usize;
        Some((off(p[0]) * self.side + off(p[1])) * self.side + off(p[2]))
    }

    /// Coefficient for fiber pair `(i, j)` and transfer `p`; `None` marks the
    /// singular entry.
    pub fn get(&self, i: usize, j: usize, p: [i32; 3]) -> Option<f64> {
        let t = self.transfer_pos(p).expect("transfer outside table");
        self.values[(i * self.n_k + j) * self.transfers.len() + t]
    }
}

/// Precompute the kernel table for a grid/basis pair.
pub fn exchange_coefficients(
    points: &[[f64; 3]],
    basis: &PlaneWaveBasis,
    ell: f64,
    msplit: i32,
) -> Result<ExchangeTable, ModelError> {
    let kernel = ExchangeKernel::new(ell, msplit)?;
    let kmax2 = 2 * basis.kmax();
    let side = (2 * kmax2 + 1) as usize;
    let mut transfers = Vec::with_capacity(side * side * side);
    for px in -kmax2..=kmax2 {
        for py in -kmax2..=kmax2 {
            for pz in -kmax2..=kmax2 {
                transfers.push([px, py, pz]);
            }
        }
    }
    let n_k = points.len();
    let nt = transfers.len();
    let mut values = vec![None; n_k * n_k * nt];
    for i in 0..n_k {
        for j in 0..n_k {
            let eta = [
                points[i][0] - points[j][0],
                points[i][1] - points[j][1],
                points[i][2] - points[j][2],
            ];
            for (t, &p) in transfers.iter().enumerate() {
                values[(i * n_k + j) * nt + t] = match kernel.coefficient(p, eta) {
                    ExchangeCoefficient::Value(v) => Some(v),
                    ExchangeCoefficient::Singular => None,
                };
            }
        }
    }
    Ok(ExchangeTable { n_k, transfers, side, kmax2, values })
}
