//! The penalized ground-state solver: aufbau filling through the counting
//! function and a Fermi bisection, the fixed-point SCF loop with mixing, the
//! retraction `T` and its iterate `theta`, and the converged-state checks.

use crate::constants;
use crate::density::{compress_fiber, state_distance, BlochDensityMatrix, EnergyBreakdown, FiberDensity};
use crate::dirac::{diagonalize, positive_indices, FiberEigensystem, FiberOperator, DEGENERACY_TOL};
use crate::error::ModelError;
use crate::lattice::KGrid;
use crate::meanfield::{MeanFieldContext, MeanFieldOperator};
use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Output of one linear (aufbau) subproblem.
#[derive(Debug)]
pub struct LinearSolveResult {
    pub gamma_new: BlochDensityMatrix,
    /// Fermi level `nu = min(nu_1, eps_P)`.
    pub nu: f64,
    pub filled_charge: f64,
    /// Occupations placed on the nu-shell (uniform by construction).
    pub delta_occupations: Vec<f64>,
}

/// One SCF iteration record (also the line format of the iteration log).
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iter: usize,
    pub e_total: f64,
    pub e_pen: f64,
    pub residual: f64,
    pub nu: f64,
    pub charge: f64,
}

/// Solver state carried across iterations.
#[derive(Debug)]
pub struct ScfState {
    pub iterate: BlochDensityMatrix,
    pub energy: EnergyBreakdown,
    pub residual_fixedpoint: f64,
    pub residual_retraction: Option<f64>,
    pub iteration: usize,
    pub log: Vec<IterationRecord>,
}

/// Measured behaviour of the iterated retraction.
#[derive(Debug, Clone)]
pub struct RetractionReport {
    pub steps: usize,
    pub final_residual: f64,
    pub measured_ratios: Vec<f64>,
    pub contraction_bound: Option<f64>,
    pub admissible: bool,
    pub converged: bool,
}

/// Checks evaluated on the converged state.
#[derive(Debug, Clone)]
pub struct FinalChecks {
    pub charge: f64,
    pub nu: f64,
    pub nu_ceiling: Option<f64>,
    pub min_abs_eigenvalue: f64,
    pub lambda0: Option<f64>,
    pub kappa: f64,
    pub max_rank: usize,
    pub rank_ceiling: Option<usize>,
    pub rank_ceiling_truncated: bool,
    pub s1inf: f64,
    pub selfconsistency_residual: f64,
}

/// Full outcome of `solve_penalized`.
#[derive(Debug)]
pub struct ScfOutcome {
    pub converged: bool,
    pub state: ScfState,
    pub checks: FinalChecks,
    pub eps_p: f64,
    pub warnings: Vec<String>,
}

/// Solver knobs; `Default` matches the documented defaults.
#[derive(Debug, Clone, Copy)]
pub struct ScfConfig {
    /// Penalization level; `None` resolves to `1.05 (1 - kappa)^-1 c*(q+1)`.
    pub eps_p: Option<f64>,
    pub tol_scf: f64,
    pub tol_e: f64,
    pub max_iter: usize,
    pub mixing: f64,
    /// Apply the retraction every this many iterations; 0 disables it inside
    /// the loop (the converged aufbau fixed point is a retraction fixed point
    /// on its own, which the final checks verify).
    pub retract_every: usize,
    /// Two-point extrapolated mixing on top of the plain damped update.
    pub anderson: bool,
}

impl Default for ScfConfig {
    fn default() -> Self {
        Self {
            eps_p: None,
            tol_scf: 1e-8,
            tol_e: 1e-10,
            max_iter: 100,
            mixing: 0.3,
            retract_every: 1,
            anderson: false,
        }
    }
}

/// Diagonalize every fiber of an assembled operator.
pub fn diagonalize_all(op: &MeanFieldOperator, grid: &KGrid) -> Result<Vec<FiberEigensystem>, ModelError> {
    let n = op.fibers.len();
    let run = |i: usize| {
        diagonalize(&FiberOperator { xi: grid.point(i), matrix: op.fibers[i].clone() })
    };
    if n <= 1 {
        (0..n).map(run).collect()
    } else {
        (0..n).into_par_iter().map(run).collect()
    }
}

/// Discrete counting function `C(s) = sum_i w_i #{n : 0 <= lambda_n(xi_i) <= s}`.
pub fn counting_function(spectra: &[FiberEigensystem], grid: &KGrid, s: f64) -> f64 {
    let mut acc = 0.0;
    for (i, eig) in spectra.iter().enumerate() {
        let c = eig.eigenvalues.iter().filter(|&&l| l >= 0.0 && l <= s).count();
        acc += grid.weight(i) * c as f64;
    }
    acc
}

/// Bisect for the aufbau level `nu_1` with `C(nu_1^-) <= q <= C(nu_1^+)`.
/// Returns `None` when the whole discrete positive spectrum carries less
/// charge than `q`.
pub fn fermi_bisect(spectra: &[FiberEigensystem], grid: &KGrid, q: f64) -> Option<f64> {
    let top = spectra
        .iter()
        .flat_map(|e| e.eigenvalues.iter())
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    if !top.is_finite() {
        return None;
    }
    let mut hi = top + 1.0;
    if counting_function(spectra, grid, hi) < q - 1e-14 {
        return None;
    }
    let mut lo = 0.0;
    let scale = hi.abs().max(1.0);
    for _ in 0..200 {
        if hi - lo <= 1e-12 * scale {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if counting_function(spectra, grid, mid) >= q {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Aufbau filling of diagonalized fibers: everything strictly below
/// `nu = min(nu_1, eps_p)` at occupation 1, the residual charge spread
/// uniformly over the nu-shell.
pub fn linear_solve_from(
    spectra: &[FiberEigensystem],
    gamma_template: &BlochDensityMatrix,
    q: f64,
    eps_p: f64,
) -> Result<LinearSolveResult, ModelError> {
    let grid = &gamma_template.grid;
    let any_positive = spectra.iter().any(|e| e.eigenvalues.iter().any(|&l| l > 0.0));
    if !any_positive {
        return Err(ModelError::ModelFailure(
            "no positive spectrum to fill (coupling outside the model regime)".into(),
        ));
    }
    let scale = spectra
        .iter()
        .flat_map(|e| e.eigenvalues.iter())
        .fold(1.0f64, |m, &v| m.max(v.abs()));
    let shell_tol = DEGENERACY_TOL * scale;
    let nu1 = fermi_bisect(spectra, grid, q);
    let nu = match nu1 {
        Some(v) => v.min(eps_p),
        None => eps_p,
    };
    // classify states
    let mut filled = 0.0;
    let mut shell_weight = 0.0;
    for (i, eig) in spectra.iter().enumerate() {
        let w = grid.weight(i);
        for &l in eig.eigenvalues.iter() {
            if l >= 0.0 {
                if l < nu - shell_tol {
                    filled += w;
                } else if (l - nu).abs() <= shell_tol {
                    shell_weight += w;
                }
            }
        }
    }
    let delta = if shell_weight > 0.0 {
        ((q - filled) / shell_weight).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let mut fibers = Vec::with_capacity(spectra.len());
    let mut delta_occupations = Vec::new();
    let mut charge = 0.0;
    for (i, eig) in spectra.iter().enumerate() {
        let w = grid.weight(i);
        let dim = eig.eigenvectors.nrows();
        let mut cols: Vec<usize> = Vec::new();
        let mut occs: Vec<f64> = Vec::new();
        for (n, &l) in eig.eigenvalues.iter().enumerate() {
            if l >= 0.0 {
                if l < nu - shell_tol {
                    cols.push(n);
                    occs.push(1.0);
                } else if (l - nu).abs() <= shell_tol && delta > 0.0 {
                    cols.push(n);
                    occs.push(delta);
                    delta_occupations.push(delta);
                }
            }
        }
        let mut orbitals = Array2::from_elem((dim, cols.len()), ZERO);
        for (c, &n) in cols.iter().enumerate() {
            orbitals.column_mut(c).assign(&eig.eigenvectors.column(n));
        }
        charge += w * occs.iter().sum::<f64>();
        fibers.push(FiberDensity { orbitals, occupations: occs });
    }
    debug_assert!(charge <= q + 1e-12);
    Ok(LinearSolveResult {
        gamma_new: BlochDensityMatrix {
            basis: gamma_template.basis.clone(),
            grid: gamma_template.grid.clone(),
            fibers,
        },
        nu,
        filled_charge: charge,
        delta_occupations,
    })
}

/// Assemble-and-fill wrapper matching the operation-level signature.
pub fn linear_solve(
    ctx: &MeanFieldContext,
    gamma: &BlochDensityMatrix,
    q: f64,
    eps_p: f64,
) -> Result<LinearSolveResult, ModelError> {
    let op = ctx.assemble(gamma)?;
    let spectra = diagonalize_all(&op, &ctx.grid)?;
    linear_solve_from(&spectra, gamma, q, eps_p)
}

/// Brute-force optimality oracle for a single fiber: enumerate every 0/1
/// occupation vector with at most `q` electrons and compare the minimum of
/// `sum (lambda_k - eps_p) occ_k` with the aufbau value.
#[derive(Debug, Clone, Copy)]
pub struct BruteForceVerdict {
    pub brute_minimum: f64,
    pub aufbau_value: f64,
    pub agrees: bool,
}

pub fn aufbau_optimality_bruteforce(levels: &[f64], q: usize, eps_p: f64) -> BruteForceVerdict {
    let positive: Vec<f64> = levels.iter().copied().filter(|&l| l >= 0.0).collect();
    let n = positive.len();
    assert!(n <= 20, "brute-force oracle is for small spectra");
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        if (mask.count_ones() as usize) > q {
            continue;
        }
        let mut v = 0.0;
        for (k, &l) in positive.iter().enumerate() {
            if mask & (1 << k) != 0 {
                v += l - eps_p;
            }
        }
        best = best.min(v);
    }
    // aufbau on the same spectrum: fill ascending while below min(nu1, eps_p)
    let mut sorted = positive.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = sorted.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let shell_tol = DEGENERACY_TOL * scale;
    let nu1 = if sorted.len() >= q {
        sorted.get(q.saturating_sub(1)).copied().map(|v| v + 2.0 * shell_tol)
    } else {
        None
    };
    let nu = nu1.map(|v| v.min(eps_p)).unwrap_or(eps_p);
    let mut filled = 0usize;
    let mut aufbau = 0.0;
    for &l in &sorted {
        if filled >= q {
            break;
        }
        if l < nu {
            aufbau += l - eps_p;
            filled += 1;
        }
    }
    let agrees = (best - aufbau).abs() <= 1e-12 * scale.max(eps_p.abs());
    BruteForceVerdict { brute_minimum: best, aufbau_value: aufbau, agrees }
}

/// One retraction step `T(gamma) = P+_gamma gamma P+_gamma`, re-compressed to
/// eigen-form (rank can only shrink).
pub fn retract_t(ctx: &MeanFieldContext, gamma: &BlochDensityMatrix) -> Result<BlochDensityMatrix, ModelError> {
    let op = ctx.assemble(gamma)?;
    let spectra = diagonalize_all(&op, &ctx.grid)?;
    retract_t_from(&spectra, gamma)
}

/// `T` given the already-diagonalized fibers of `D_gamma`.
pub fn retract_t_from(
    spectra: &[FiberEigensystem],
    gamma: &BlochDensityMatrix,
) -> Result<BlochDensityMatrix, ModelError> {
    let mut fibers = Vec::with_capacity(gamma.fibers.len());
    for (i, f) in gamma.fibers.iter().enumerate() {
        let dim = f.orbitals.nrows();
        let r = f.rank();
        if r == 0 {
            fibers.push(FiberDensity::empty(dim));
            continue;
        }
        let eig = &spectra[i];
        let pos = positive_indices(eig, DEGENERACY_TOL)?;
        // P+ U = V+ (V+^H U)
        let np = pos.len();
        let mut inner = Array2::from_elem((np, r), ZERO);
        for (a, &pi) in pos.iter().enumerate() {
            let v = eig.eigenvectors.column(pi);
            for b in 0..r {
                let mut s = ZERO;
                for k in 0..dim {
                    s += v[k].conj() * f.orbitals[(k, b)];
                }
                inner[(a, b)] = s;
            }
        }
        let mut proj = Array2::from_elem((dim, r), ZERO);
        for b in 0..r {
            for (a, &pi) in pos.iter().enumerate() {
                let c = inner[(a, b)];
                if c == ZERO {
                    continue;
                }
                let v = eig.eigenvectors.column(pi);
                for k in 0..dim {
                    proj[(k, b)] += v[k] * c;
                }
            }
        }
        let mut nf = compress_fiber(&proj.view(), &f.occupations, 1e-14)?;
        for o in &mut nf.occupations {
            *o = o.clamp(0.0, 1.0);
        }
        fibers.push(nf);
    }
    Ok(BlochDensityMatrix { basis: gamma.basis.clone(), grid: gamma.grid.clone(), fibers })
}

/// Iterate `T` to its fixed point, recording per-step contraction ratios.
/// The admissibility inequality is evaluated first; violations only warn
/// (flagged in the report), the iteration is attempted regardless.
pub fn retract_theta(
    ctx: &MeanFieldContext,
    gamma: &BlochDensityMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<(BlochDensityMatrix, RetractionReport), ModelError> {
    let assumption = constants::check_assumption(&ctx.params, None);
    let mut current = gamma.clone();
    let mut t_current = retract_t(ctx, &current)?;
    let mut residual = distance_xy(&current, &t_current)?;
    // admissible-set inequality: max{||g |D|^(1/2)||_S11, ||g||_Y} + M ||T(g)-g|| < tau
    let admissible = match (assumption.tau, assumption.m_ret) {
        (Some(tau), Some(m)) => {
            let size = current.droot_s11().max(current.norms().y);
            size + m * residual < tau
        }
        _ => false,
    };
    let mut ratios = Vec::new();
    let mut steps = 0usize;
    while residual >= tol && steps < max_iter {
        let next = retract_t(ctx, &t_current)?;
        let new_residual = distance_xy(&t_current, &next)?;
        if residual > 0.0 {
            ratios.push(new_residual / residual);
        }
        current = std::mem::replace(&mut t_current, next);
        residual = new_residual;
        steps += 1;
    }
    let converged = residual < tol;
    let out = if steps == 0 { current } else { t_current };
    Ok((
        out,
        RetractionReport {
            steps,
            final_residual: residual,
            measured_ratios: ratios,
            contraction_bound: assumption.contraction_bound,
            admissible,
            converged,
        },
    ))
}

/// `max(X, Y)` distance between two states (the intersected norm the
/// retraction analysis contracts in).
pub fn distance_xy(a: &BlochDensityMatrix, b: &BlochDensityMatrix) -> Result<f64, ModelError> {
    let d = state_distance(a, b)?;
    Ok(d.x.max(d.y))
}

/// Convex mixing `(1 - beta) a + beta b`, re-compressed fiberwise.
pub fn mix_states(
    a: &BlochDensityMatrix,
    b: &BlochDensityMatrix,
    beta: f64,
) -> Result<BlochDensityMatrix, ModelError> {
    let mut fibers = Vec::with_capacity(a.fibers.len());
    for (fa, fb) in a.fibers.iter().zip(&b.fibers) {
        let dim = fa.orbitals.nrows();
        let (ra, rb) = (fa.rank(), fb.rank());
        let mut cols = Array2::from_elem((dim, ra + rb), ZERO);
        let mut w = Vec::with_capacity(ra + rb);
        for n in 0..ra {
            cols.column_mut(n).assign(&fa.orbitals.column(n));
            w.push((1.0 - beta) * fa.occupations[n]);
        }
        for n in 0..rb {
            cols.column_mut(ra + n).assign(&fb.orbitals.column(n));
            w.push(beta * fb.occupations[n]);
        }
        let mut nf = compress_fiber(&cols.view(), &w, 1e-13)?;
        for o in &mut nf.occupations {
            *o = o.clamp(0.0, 1.0);
        }
        fibers.push(nf);
    }
    Ok(BlochDensityMatrix { basis: a.basis.clone(), grid: a.grid.clone(), fibers })
}

/// Frobenius-type inner product of two states, `avg_i w_i Tr[a_i b_i]`.
fn state_inner(a: &BlochDensityMatrix, b: &BlochDensityMatrix) -> f64 {
    let mut acc = 0.0;
    for (i, (fa, fb)) in a.fibers.iter().zip(&b.fibers).enumerate() {
        let w = a.grid.weight(i);
        for n in 0..fa.rank() {
            for m in 0..fb.rank() {
                let ov: Complex64 = fa
                    .orbitals
                    .column(n)
                    .iter()
                    .zip(fb.orbitals.column(m).iter())
                    .map(|(x, y)| x.conj() * y)
                    .sum();
                acc += w * fa.occupations[n] * fb.occupations[m] * ov.norm_sqr();
            }
        }
    }
    acc
}

/// Penalized ground-state solve. Initialization is the aufbau filling of the
/// reference operator (`gamma = 0`); each iteration assembles `D_gamma`,
/// solves the linear subproblem, and damps with the configured mixing.
pub fn solve_penalized(ctx: &MeanFieldContext, cfg: &ScfConfig) -> Result<ScfOutcome, ModelError> {
    let mut warnings = Vec::new();
    let assumption = constants::check_assumption(&ctx.params, None);
    let q = ctx.params.q;
    let qplus1 = (q.floor() as u32).saturating_add(1).max(2);
    let nu_ceiling = (!assumption.infeasible)
        .then(|| constants::c_star_upper(qplus1, ctx.params.ell) / (1.0 - assumption.kappa));
    let eps_p = match cfg.eps_p {
        Some(v) => v,
        None => match nu_ceiling {
            Some(c) => 1.05 * c,
            None => {
                return Err(ModelError::Infeasible(
                    "cannot resolve eps_P automatically: kappa >= 1".into(),
                ))
            }
        },
    };
    if let Some(c) = nu_ceiling {
        if eps_p <= c {
            warnings.push(format!(
                "eps_P = {eps_p:.6} does not exceed (1 - kappa)^-1 c*(q+1) = {c:.6}; the \
                 minimizer may carry charge below q"
            ));
        }
    } else {
        warnings.push("assumption infeasible (kappa >= 1); proceeding without guarantees".into());
    }

    let zero = BlochDensityMatrix::zero(ctx.basis.clone(), ctx.grid.clone());
    let init = linear_solve(ctx, &zero, q, eps_p)?;
    let mut gamma = init.gamma_new;
    let mut energy = ctx.energy(&gamma, eps_p);
    let mut log: Vec<IterationRecord> = Vec::new();
    let mut residual = f64::INFINITY;
    let mut converged = false;
    let mut iteration = 0usize;
    // two-point history for the extrapolated mixing
    let mut prev_pair: Option<(BlochDensityMatrix, BlochDensityMatrix)> = None;

    while iteration < cfg.max_iter {
        iteration += 1;
        let op = ctx.assemble(&gamma)?;
        let spectra = diagonalize_all(&op, &ctx.grid)?;
        let ls = linear_solve_from(&spectra, &gamma, q, eps_p)?;
        residual = state_distance(&gamma, &ls.gamma_new)?.s11;
        let mut next = mix_states(&gamma, &ls.gamma_new, cfg.mixing)?;
        if cfg.anderson {
            if let Some((pg, pout)) = &prev_pair {
                // two-point extrapolation: theta minimizes the interpolated
                // fixed-point residual, with r = out - in per step
                let inner_rr = state_inner(&ls.gamma_new, &ls.gamma_new)
                    - 2.0 * state_inner(&ls.gamma_new, &gamma)
                    + state_inner(&gamma, &gamma);
                let inner_rp = state_inner(&ls.gamma_new, pout) - state_inner(&ls.gamma_new, pg)
                    - state_inner(&gamma, pout)
                    + state_inner(&gamma, pg);
                let inner_pp =
                    state_inner(pout, pout) - 2.0 * state_inner(pout, pg) + state_inner(pg, pg);
                let denom = inner_rr - 2.0 * inner_rp + inner_pp;
                if denom > 1e-30 {
                    let theta = ((inner_rr - inner_rp) / denom).clamp(0.0, 1.0);
                    if theta > 0.0 {
                        let prev_mix = mix_states(pg, pout, cfg.mixing)?;
                        next = mix_states(&next, &prev_mix, theta)?;
                    }
                }
            }
            prev_pair = Some((gamma.clone(), ls.gamma_new.clone()));
        }
        if cfg.retract_every > 0 && iteration % cfg.retract_every == 0 {
            let (retracted, _rep) = retract_theta(ctx, &next, cfg.tol_scf.max(1e-12), 8)?;
            next = retracted;
        }
        let new_energy = ctx.energy(&next, eps_p);
        let de = (new_energy.penalized - energy.penalized).abs();
        gamma = next;
        energy = new_energy;
        log.push(IterationRecord {
            iter: iteration,
            e_total: energy.total,
            e_pen: energy.penalized,
            residual,
            nu: ls.nu,
            charge: gamma.trace_per_cell(),
        });
        if residual < cfg.tol_scf && de < cfg.tol_e {
            converged = true;
            break;
        }
    }

    // converged-state diagnostics from one final assembly
    let op = ctx.assemble(&gamma)?;
    let spectra = diagonalize_all(&op, &ctx.grid)?;
    let ls = linear_solve_from(&spectra, &gamma, q, eps_p)?;
    let sc_residual = state_distance(&gamma, &ls.gamma_new)?.s11;
    let t_gamma = retract_t_from(&spectra, &gamma)?;
    let residual_retraction = Some(state_distance(&gamma, &t_gamma)?.s11);
    let min_abs = spectra
        .iter()
        .flat_map(|e| e.eigenvalues.iter())
        .fold(f64::INFINITY, |m, &v| m.min(v.abs()));
    let (rank_ceiling, rank_truncated) = if assumption.infeasible {
        (None, false)
    } else {
        let (m, truncated) =
            constants::band_count_margin(&ctx.basis, &ctx.grid, &ctx.params, assumption.kappa);
        (Some(q.ceil() as usize + m), truncated)
    };
    let checks = FinalChecks {
        charge: gamma.trace_per_cell(),
        nu: ls.nu,
        nu_ceiling,
        min_abs_eigenvalue: min_abs,
        lambda0: assumption.lambda0,
        kappa: assumption.kappa,
        max_rank: gamma.fibers.iter().map(|f| f.rank()).max().unwrap_or(0),
        rank_ceiling,
        rank_ceiling_truncated: rank_truncated,
        s1inf: gamma.norms().s1inf,
        selfconsistency_residual: sc_residual,
    };
    let state = ScfState {
        iterate: gamma,
        energy,
        residual_fixedpoint: if converged { sc_residual } else { residual },
        residual_retraction,
        iteration,
        log,
    };
    Ok(ScfOutcome { converged, state, checks, eps_p, warnings })
}
