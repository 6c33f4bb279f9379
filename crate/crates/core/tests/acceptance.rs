//! Acceptance suite: one test per criterion, each printing a single
//! `criterion NN: PASS/FAIL` line (visible under `--nocapture`, and in the
//! failure output otherwise).
//!
//! Criterion 1 is expected to stay red: the reference value 16.512 for the
//! `1/|k|^4` lattice sum is a truncation artifact (the sum is 16.53232,
//! confirmed here by two independent routes), so an honest evaluation cannot
//! land in the stated window. See the failure message for the analysis.

use blochdf::constants::*;
use blochdf::density::{state_distance, BlochDensityMatrix, FiberDensity};
use blochdf::dirac::{assemble_free_dirac, free_positive_bands, free_spectrum_with_multiplicity, FiberEigensystem};
use blochdf::lattice::{build_basis, build_kgrid, CrystalParams};
use blochdf::linalg::{eigvalsh, set_blas_threads};
use blochdf::meanfield::{ExchangeScheme, MeanFieldContext};
use blochdf::scf::{
    aufbau_optimality_bruteforce, linear_solve_from, mix_states, retract_theta, solve_penalized,
    ScfConfig, ScfOutcome,
};
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

fn verdict(n: u32, ok: bool, detail: &str) {
    println!("criterion {n:02}: {} — {detail}", if ok { "PASS" } else { "FAIL" });
}

#[test]
fn criterion_01_lattice_sum() {
    let t = Instant::now();
    let v = lattice_sum_inv4(1e-3);
    let secs = t.elapsed().as_secs_f64();
    let in_window = (v - 16.512).abs() <= 0.005;
    let fast = secs < 1.0;
    verdict(1, in_window && fast, &format!("sum = {v:.6} (window 16.512 +- 0.005), {secs:.3} s"));
    assert!(fast, "lattice sum took {secs} s");
    assert!(
        in_window,
        "sum_{{k != 0}} 1/|k|^4 evaluates to {v:.6}, outside 16.512 +- 0.005. The true value \
         is 16.532316 (cross-checked by shell sums with integral-comparison tails at several \
         cuts and by an exponentially convergent theta-function route); 16.512 matches a cube \
         partial sum truncated near |k|_inf = 512 with its 0.0204 tail dropped, so the stated \
         window cannot be reached by a correct evaluation."
    );
}

#[test]
fn criterion_02_c0_bound() {
    let (c0, r) = c0_bound();
    let ok = (c0 - 5.019).abs() <= 0.05 && r > 0.4;
    verdict(2, ok, &format!("C0 = {c0:.6} (window 5.019 +- 0.05), argmin R = {r:.6}"));
    assert!(ok);
}

#[test]
fn criterion_03_cg_values() {
    let v = cg_constant(1000.0);
    let v_inf = cg_constant(1e8);
    let ok = (v - 2.011).abs() <= 0.005 && (v_inf - 2.0).abs() <= 1e-3;
    verdict(3, ok, &format!("C_G(1000) = {v:.6}, C_G(1e8) = {v_inf:.9}"));
    assert!(ok);
}

#[test]
fn criterion_04_kernel_split_constants() {
    let (c_ge2, _) = c_ge_m_bound(2);
    let c_le = c_le_m_ell(2, 1000.0);
    let qa = cube_integral_inv_square_spherical();
    let qb = cube_integral_inv_square_duffy();
    let cross = (qa - qb).abs() <= 1e-5 * qa;
    let ok = (c_ge2 - 20.912).abs() <= 0.2 && (c_le - 0.010).abs() <= 0.001 && cross;
    verdict(
        4,
        ok,
        &format!(
            "C_>=2 = {c_ge2:.6} (20.912 +- 0.2), C_<=2,1000 = {c_le:.6} (0.010 +- 0.001), \
             quadratures {qa:.9} vs {qb:.9}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_05_exchange_constants() {
    let e = ee_constants(1000.0);
    let ok = (e.c_w - 2.042).abs() <= 0.01
        && (e.c_ee - 2.052).abs() <= 0.01
        && (e.c_ee_prime - 2.052).abs() <= 0.01
        && (e.c_ee_dblprime - 0.041).abs() <= 0.005;
    verdict(
        5,
        ok,
        &format!(
            "C_W = {:.6}, C_EE = {:.6}, C_EE' = {:.6}, C_EE'' = {:.6}",
            e.c_w, e.c_ee, e.c_ee_prime, e.c_ee_dblprime
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_06_assumption_boundary() {
    let t = Instant::now();
    let p17 = CrystalParams::new(1000.0, 17.0, 17.0, 1.0 / 137.0).unwrap();
    let a17 = check_assumption(&p17, None);
    let p18 = CrystalParams::new(1000.0, 18.0, 18.0, 1.0 / 137.0).unwrap();
    let a18 = check_assumption(&p18, None);
    let secs = t.elapsed().as_secs_f64();
    let c2_17 = a17.cond2.unwrap_or(f64::INFINITY);
    let c2_18 = a18.cond2.unwrap_or(f64::INFINITY);
    let ok = (a17.cond1 - 0.630).abs() <= 0.01
        && (c2_17 - 0.973).abs() <= 0.02
        && a17.holds
        && c2_18 > 1.0
        && !a18.holds
        && secs < 1.0;
    verdict(
        6,
        ok,
        &format!(
            "q = 17: cond1 = {:.6}, cond2 = {:.6} (holds); q = 18: cond2 = {:.6} (fails); {secs:.3} s",
            a17.cond1, c2_17, c2_18
        ),
    );
    assert!(ok, "q17 cond1 {} cond2 {}, q18 cond2 {}, {} s", a17.cond1, c2_17, c2_18, secs);
}

#[test]
fn criterion_07_band_ceiling() {
    let v = c_star_upper(17, 1000.0);
    let ok = v <= 1.0065 && v >= 1.006;
    verdict(7, ok, &format!("c*(17) bound = {v:.7}"));
    assert!(ok);
}

#[test]
fn criterion_08_free_spectrum_oracle() {
    set_blas_threads(1);
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let ell = 7.0;
    let basis = build_basis(2).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let xi = [
            rng.gen_range(-1.0..1.0) * std::f64::consts::PI / ell,
            rng.gen_range(-1.0..1.0) * std::f64::consts::PI / ell,
            rng.gen_range(-1.0..1.0) * std::f64::consts::PI / ell,
        ];
        let op = assemble_free_dirac(&basis, xi, ell);
        let vals = eigvalsh(&op.matrix.view(), 1e-12).unwrap();
        let oracle = free_spectrum_with_multiplicity(&basis, xi, ell);
        assert_eq!(vals.len(), oracle.len());
        for (have, want) in vals.iter().zip(oracle) {
            worst = worst.max((have - want).abs());
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let ok = worst <= 1e-12 && secs < 10.0;
    verdict(8, ok, &format!("50 random fibers at K = 2: max |error| = {worst:.3e}, {secs:.2} s"));
    assert!(ok, "max error {worst:.3e}, {secs:.2} s");
}

#[test]
fn criterion_09_aufbau_bruteforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let basis = Arc::new(build_basis(0).unwrap());
    let grid = Arc::new(build_kgrid(1.0, 1, true).unwrap());
    let mut worst = 0.0f64;
    for trial in 0..200 {
        let n = rng.gen_range(4..=12usize);
        let mut levels: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..4.0)).collect();
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = rng.gen_range(1..=6usize);
        let eps = rng.gen_range(0.5..4.5);
        // brute force on the raw levels
        let brute = aufbau_optimality_bruteforce(&levels, q, eps);
        // the real solver path on a synthetic single-fiber eigensystem
        let dim = n;
        let eig = FiberEigensystem {
            xi: [0.0; 3],
            eigenvalues: Array1::from_vec(levels.clone()),
            eigenvectors: Array2::<Complex64>::eye(dim),
        };
        // template state with the right dimensions
        let mut template = BlochDensityMatrix::zero(basis.clone(), grid.clone());
        template.fibers[0] = FiberDensity::empty(dim);
        let ls = linear_solve_from(&[eig], &template, q as f64, eps).unwrap();
        let mut value = 0.0;
        let f = &ls.gamma_new.fibers[0];
        for (col, occ) in f.occupations.iter().enumerate() {
            // occupied eigen-column: find its level by the unit entry
            let v = f.orbitals.column(col);
            let idx = (0..dim).find(|&i| (v[i].norm() - 1.0).abs() < 1e-9).unwrap();
            value += occ * (levels[idx] - eps);
        }
        let diff = (value - brute.brute_minimum).abs();
        worst = worst.max(diff);
        assert!(
            diff <= 1e-12 * (1.0 + eps.abs()),
            "trial {trial}: solver {value} vs brute {} (levels {levels:?}, q {q}, eps {eps})",
            brute.brute_minimum
        );
        assert!(brute.agrees);
    }
    verdict(9, true, &format!("200 spectra: max |solver - brute| = {worst:.3e}"));
}

#[test]
fn criterion_10_free_limit_end_to_end() {
    set_blas_threads(1);
    // alpha -> 0 limit: one-iteration convergence, energy = sum of the q
    // lowest positive free bands over the grid
    let ell = 10.0;
    let params = CrystalParams::new(ell, 1e-13, 2.0, 1e-13).unwrap();
    let basis = Arc::new(build_basis(2).unwrap());
    let grid = Arc::new(build_kgrid(ell, 2, true).unwrap());
    let ctx = MeanFieldContext::new(params, basis.clone(), grid.clone(), ExchangeScheme::Omit, 1).unwrap();
    let cfg = ScfConfig { mixing: 1.0, retract_every: 0, ..Default::default() };
    let out = solve_penalized(&ctx, &cfg).unwrap();
    let mut want = 0.0;
    for (i, &xi) in grid.points().iter().enumerate() {
        let bands = free_positive_bands(&basis, xi, ell);
        want += grid.weight(i) * (bands[0] + bands[1]);
    }
    let de = (out.state.energy.total - want).abs();
    let ok = out.converged && out.state.iteration == 1 && de <= 1e-10;
    verdict(
        10,
        ok,
        &format!(
            "converged in {} iteration(s), E = {:.12}, free-band sum = {want:.12}, |diff| = {de:.3e}",
            out.state.iteration, out.state.energy.total
        ),
    );
    assert!(ok);
}

// ---------------------------------------------------------------------------
// the interacting desk run, shared by criteria 11, 13 and 15
// ---------------------------------------------------------------------------

struct DeskRun {
    outcome: ScfOutcome,
    secs: f64,
}

fn desk_params() -> CrystalParams {
    CrystalParams::new(10.0, 2.0, 2.0, 1.0 / 137.0).unwrap()
}

fn desk_ctx(scheme: ExchangeScheme, n_grid: usize) -> MeanFieldContext {
    let params = desk_params();
    let basis = Arc::new(build_basis(2).unwrap());
    let grid = Arc::new(build_kgrid(params.ell, n_grid, true).unwrap());
    MeanFieldContext::new(params, basis, grid, scheme, 1).unwrap()
}

fn desk_cfg() -> ScfConfig {
    ScfConfig {
        mixing: 0.6,
        retract_every: 0,
        tol_scf: 1e-8,
        tol_e: 1e-10,
        max_iter: 100,
        ..Default::default()
    }
}

fn run_desk(scheme: ExchangeScheme, n_grid: usize, cfg: &ScfConfig) -> DeskRun {
    set_blas_threads(1);
    let ctx = desk_ctx(scheme, n_grid);
    let t = Instant::now();
    let outcome = solve_penalized(&ctx, cfg).expect("desk SCF failed");
    DeskRun { outcome, secs: t.elapsed().as_secs_f64() }
}

fn probe_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| run_desk(ExchangeScheme::ProbeCorrection, 2, &desk_cfg()))
}

fn check_desk_outcome(run: &DeskRun, golden_total: f64) -> (bool, String) {
    let o = &run.outcome;
    let c = &o.checks;
    let lambda0 = c.lambda0.unwrap_or(0.0);
    let nu_ceiling = c.nu_ceiling.unwrap_or(f64::INFINITY);
    let rank_ceiling = c.rank_ceiling.unwrap_or(usize::MAX);
    let checks = [
        o.converged && o.state.iteration <= 100,
        (c.charge - 2.0).abs() <= 1e-10,
        c.selfconsistency_residual < 1e-6,
        c.min_abs_eigenvalue >= lambda0,
        c.nu <= nu_ceiling,
        c.max_rank <= rank_ceiling,
        run.secs < 300.0,
        (o.state.energy.total - golden_total).abs() <= 1e-9 * golden_total.abs(),
    ];
    let ok = checks.iter().all(|&b| b);
    let detail = format!(
        "converged in {} iters ({:.1} s), E = {:.12} (golden {golden_total:.12}), charge = {:.12}, \
         sc-residual = {:.2e}, min|eig| = {:.4} >= lambda0 = {lambda0:.4}, nu = {:.4} <= {nu_ceiling:.4}, \
         rank {} <= {rank_ceiling}",
        o.state.iteration,
        run.secs,
        o.state.energy.total,
        c.charge,
        c.selfconsistency_residual,
        c.min_abs_eigenvalue,
        c.nu,
        c.max_rank
    );
    (ok, detail)
}

#[test]
fn criterion_11_interacting_desk_run() {
    // golden totals recorded from the first verified build of this
    // discretization (regression baseline)
    let omit = run_desk(ExchangeScheme::Omit, 2, &desk_cfg());
    let (ok_omit, detail_omit) = check_desk_outcome(&omit, 2.072134083026264);
    let probe = probe_run();
    let (ok_probe, detail_probe) = check_desk_outcome(probe, 2.071242568570860);
    verdict(11, ok_omit && ok_probe, &format!("omit: {detail_omit}; probe-correction: {detail_probe}"));
    assert!(ok_omit, "omit scheme: {detail_omit}");
    assert!(ok_probe, "probe-correction scheme: {detail_probe}");
}

#[test]
fn criterion_12_directional_derivative_order() {
    set_blas_threads(1);
    // moderate-size interacting state and a random valid direction
    let params = CrystalParams::new(8.0, 2.0, 2.0, 1.0 / 137.0).unwrap();
    let basis = Arc::new(build_basis(1).unwrap());
    let grid = Arc::new(build_kgrid(8.0, 2, true).unwrap());
    let ctx = MeanFieldContext::new(params, basis.clone(), grid.clone(), ExchangeScheme::Omit, 1).unwrap();
    let zero = BlochDensityMatrix::zero(basis.clone(), grid.clone());
    let gamma = blochdf::scf::linear_solve(&ctx, &zero, 2.0, 10.0).unwrap().gamma_new;
    // direction: random low-rank perturbation
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = basis.dim();
    let mut h = BlochDensityMatrix::zero(basis.clone(), grid.clone());
    for f in &mut h.fibers {
        let mut col = Array1::from_elem(dim, Complex64::new(0.0, 0.0));
        for i in 0..dim {
            col[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.mapv_inplace(|z| z / norm);
        let mut orb = Array2::from_elem((dim, 1), Complex64::new(0.0, 0.0));
        orb.column_mut(0).assign(&col);
        *f = FiberDensity { orbitals: orb, occupations: vec![0.5] };
    }
    let ts = [1e-2, 1e-3, 1e-4];
    let errs = ctx.directional_derivative_check(&gamma, &h, &ts).unwrap();
    let slope = (errs[0].ln() - errs[2].ln()) / (ts[0].ln() - ts[2].ln());
    let ok = (slope - 1.0).abs() <= 0.2;
    verdict(
        12,
        ok,
        &format!("errors {:.3e} / {:.3e} / {:.3e}, observed order {slope:.3}", errs[0], errs[1], errs[2]),
    );
    assert!(ok, "errors {errs:?}, slope {slope}");
}

#[test]
fn criterion_13_retraction_contraction() {
    set_blas_threads(1);
    let run = probe_run();
    assert!(run.outcome.converged);
    let gamma = &run.outcome.state.iterate;
    let ctx = desk_ctx(ExchangeScheme::ProbeCorrection, 2);
    // rank-1 noise of size 1e-3: convex-mix with a noise state
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let dim = gamma.basis.dim();
    let mut noise = BlochDensityMatrix::zero(gamma.basis.clone(), gamma.grid.clone());
    {
        let mut col = Array1::from_elem(dim, Complex64::new(0.0, 0.0));
        for i in 0..dim {
            col[i] = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        let norm = col.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        col.mapv_inplace(|z| z / norm);
        let mut orb = Array2::from_elem((dim, 1), Complex64::new(0.0, 0.0));
        orb.column_mut(0).assign(&col);
        noise.fibers[0] = FiberDensity { orbitals: orb, occupations: vec![1.0] };
    }
    let perturbed = mix_states(gamma, &noise, 1e-3).unwrap();
    let moved = state_distance(gamma, &perturbed).unwrap().s11;
    assert!(moved > 1e-5, "perturbation too small: {moved}");
    let (fixed, report) = retract_theta(&ctx, &perturbed, 1e-10, 30).unwrap();
    let bound = report.contraction_bound.unwrap_or(1.0);
    let khat = report.measured_ratios.first().copied().unwrap_or(0.0);
    let ok = report.converged
        && report.final_residual < 1e-10
        && khat < 1.0
        && khat <= bound + 0.1
        && fixed.trace_per_cell() <= 2.0 + 1e-9;
    verdict(
        13,
        ok,
        &format!(
            "perturbation {moved:.2e}, measured ratio {khat:.3e} vs bound 2 A tau = {bound:.3} (+0.1), \
             reconverged in {} steps to residual {:.2e}",
            report.steps, report.final_residual
        ),
    );
    assert!(ok, "ratios {:?}, residual {:.3e}", report.measured_ratios, report.final_residual);
}

#[test]
fn criterion_14_hardy_cube() {
    let report = hardy_cube_validate(1.0, 100, 4242).unwrap();
    let ok = report.worst_ratio <= 1.0 && !report.note.is_empty();
    println!("note: {}", report.note);
    verdict(
        14,
        ok,
        &format!("100 trials, worst LHS/RHS = {:.6}; stated {:?} vs derivation {:?}",
            report.worst_ratio, report.stated_coefficients, report.proof_coefficients),
    );
    assert!(ok, "worst ratio {}", report.worst_ratio);
}

#[test]
fn criterion_15_exchange_grid_consistency() {
    set_blas_threads(1);
    let coarse = probe_run();
    let fine_cfg = ScfConfig { tol_scf: 1e-6, mixing: 0.85, ..desk_cfg() };
    let fine = run_desk(ExchangeScheme::ProbeCorrection, 3, &fine_cfg);
    assert!(fine.outcome.converged, "3^3 run did not converge");
    let ex2 = coarse.outcome.state.energy.exchange;
    let ex3 = fine.outcome.state.energy.exchange;
    let rel = (ex2 - ex3).abs() / ex3.abs();
    let ok = rel < 0.05;
    verdict(
        15,
        ok,
        &format!("exchange energy: 2^3 grid {ex2:.9e}, 3^3 grid {ex3:.9e}, relative difference {rel:.4}"),
    );
    assert!(ok, "relative difference {rel}");
}
