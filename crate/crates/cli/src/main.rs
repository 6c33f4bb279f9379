//! Command-line surface of the periodic Dirac-Fock solver.
//!
//! Exit codes are a stable contract:
//!   0  success
//!   2  `constants`: the smallness assumption fails
//!   3  `solve`: SCF did not converge (partial log still written)
//!   4  model failure (no positive spectrum to fill)
//!   64 usage or configuration error
//!   65 checkpoint/config mismatch

mod config;

use blochdf::constants::{hardy_note, ConstantsReport};
use blochdf::density::{load_checkpoint, save_checkpoint};
use blochdf::lattice::{build_basis, build_kgrid};
use blochdf::linalg::set_blas_threads;
use blochdf::scf::solve_penalized;
use blochdf::{BlochDensityMatrix, CrystalParams, MeanFieldContext, ModelError};
use clap::{Args, Parser, Subcommand};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

const EXIT_OK: u8 = 0;
const EXIT_ASSUMPTION_FAIL: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_MODEL_FAILURE: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA_MISMATCH: u8 = 65;

#[derive(Parser)]
#[command(name = "blochdf", about = "Periodic Dirac-Fock mean-field solver", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate every feasibility constant and the smallness assumption.
    Constants(ConstantsArgs),
    /// Run the penalized self-consistent field solver from a config file.
    Solve(SolveArgs),
    /// Sample the mean-field band structure along a zone path.
    Bands(BandsArgs),
}

#[derive(Args)]
struct ConstantsArgs {
    #[arg(long)]
    ell: f64,
    #[arg(long)]
    z: f64,
    #[arg(long)]
    q: f64,
    #[arg(long)]
    alpha: f64,
    /// Also write the full report as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override the checkpoint output path from the config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// BLAS/assembly threads (default from the config, which defaults to 1).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct BandsArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Zone path through the letters G (Gamma), X, M, R, e.g. "G-X-M-R".
    #[arg(long, default_value = "G-X-M-R")]
    path: String,
    /// Total sample count along the path.
    #[arg(long, default_value_t = 40)]
    samples: usize,
    /// Number of positive (and negative) bands per sample.
    #[arg(long, default_value_t = 4)]
    bands: usize,
    #[arg(long)]
    csv: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap's own exit code conventions do not match this tool's
            // contract; usage problems are 64, plain help/version are 0
            let is_help = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return ExitCode::from(if is_help { EXIT_OK } else { EXIT_USAGE });
        }
    };
    match cli.command {
        Command::Constants(a) => cmd_constants(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Bands(a) => cmd_bands(a),
    }
}

fn cmd_constants(args: ConstantsArgs) -> ExitCode {
    let params = match CrystalParams::new(args.ell, args.z, args.q, args.alpha) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let report = ConstantsReport::compute(params);
    print!("{}", report.to_table());
    println!("note: {}", hardy_note(params.ell));
    if let Some(path) = args.json {
        if let Err(e) = std::fs::write(&path, report.to_json()) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if report.assumption.holds {
        ExitCode::from(EXIT_OK)
    } else {
        ExitCode::from(EXIT_ASSUMPTION_FAIL)
    }
}

fn jnum(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

fn jopt(v: Option<f64>) -> String {
    v.map(jnum).unwrap_or_else(|| "null".into())
}

fn jstr(s: &str) -> String {
    format!("\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""))
}

fn cmd_solve(args: SolveArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let mut cfg = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(t) = args.threads {
        cfg.threads = t.max(1);
    }
    if let Some(p) = args.checkpoint {
        cfg.out_checkpoint = Some(p);
    }
    set_blas_threads(cfg.threads);
    let basis = match build_basis(cfg.kmax) {
        Ok(b) => Arc::new(b),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let grid = match build_kgrid(cfg.crystal.ell, cfg.kgrid_n, cfg.kgrid_shifted) {
        Ok(g) => Arc::new(g),
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let ctx = match MeanFieldContext::new(cfg.crystal, basis, grid, cfg.scheme, cfg.threads) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let outcome = match solve_penalized(&ctx, &cfg.scf) {
        Ok(o) => o,
        Err(ModelError::ModelFailure(msg)) => {
            eprintln!("model failure: {msg}");
            return ExitCode::from(EXIT_MODEL_FAILURE);
        }
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(path) = &cfg.out_log {
        let mut out = String::new();
        for rec in &outcome.state.log {
            out.push_str(&format!(
                "{{\"iter\":{},\"E_total\":{},\"E_pen\":{},\"residual\":{},\"nu\":{},\"charge\":{}}}\n",
                rec.iter,
                jnum(rec.e_total),
                jnum(rec.e_pen),
                jnum(rec.residual),
                jnum(rec.nu),
                jnum(rec.charge)
            ));
        }
        if let Err(e) = std::fs::write(path, out) {
            eprintln!("cannot write {}: {e}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if let Some(path) = &cfg.out_energy {
        let e = &outcome.state.energy;
        let c = &outcome.checks;
        let warnings = outcome
            .warnings
            .iter()
            .map(|w| jstr(w))
            .collect::<Vec<_>>()
            .join(",");
        let json = format!(
            concat!(
                "{{\"converged\":{},\"iterations\":{},\"eps_p\":{},\"charge\":{},\"nu\":{},",
                "\"energy\":{{\"kinetic\":{},\"nuclear\":{},\"hartree\":{},\"exchange\":{},",
                "\"total\":{},\"penalized\":{}}},",
                "\"residual_fixedpoint\":{},\"residual_retraction\":{},",
                "\"selfconsistency_residual\":{},\"min_abs_eigenvalue\":{},\"nu_ceiling\":{},",
                "\"max_rank\":{},\"rank_ceiling\":{},\"s1inf\":{},\"warnings\":[{}]}}"
            ),
            outcome.converged,
            outcome.state.iteration,
            jnum(outcome.eps_p),
            jnum(c.charge),
            jnum(c.nu),
            jnum(e.kinetic),
            jnum(e.nuclear),
            jnum(e.hartree),
            jnum(e.exchange),
            jnum(e.total),
            jnum(e.penalized),
            jnum(outcome.state.residual_fixedpoint),
            jopt(outcome.state.residual_retraction),
            jnum(c.selfconsistency_residual),
            jnum(c.min_abs_eigenvalue),
            jopt(c.nu_ceiling),
            c.max_rank,
            c.rank_ceiling.map(|r| r.to_string()).unwrap_or_else(|| "null".into()),
            jnum(c.s1inf),
            warnings
        );
        if let Err(err) = std::fs::write(path, json) {
            eprintln!("cannot write {}: {err}", path.display());
            return ExitCode::from(EXIT_USAGE);
        }
    }
    if let Some(path) = &cfg.out_checkpoint {
        if let Err(e) = save_checkpoint(&outcome.state.iterate, path) {
            eprintln!("cannot write checkpoint: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    println!(
        "{} after {} iterations: E = {:.6}, charge = {:.6}, residual = {:.3e}",
        if outcome.converged { "converged" } else { "NOT converged" },
        outcome.state.iteration,
        outcome.state.energy.total,
        outcome.checks.charge,
        outcome.state.residual_fixedpoint
    );
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if outcome.converged {
        ExitCode::from(EXIT_OK)
    } else {
        ExitCode::from(EXIT_NOT_CONVERGED)
    }
}

fn zone_point(letter: &str, ell: f64) -> Option<[f64; 3]> {
    let b = std::f64::consts::PI / ell;
    match letter {
        "G" | "g" | "Γ" => Some([0.0, 0.0, 0.0]),
        "X" | "x" => Some([b, 0.0, 0.0]),
        "M" | "m" => Some([b, b, 0.0]),
        "R" | "r" => Some([b, b, b]),
        _ => None,
    }
}

fn cmd_bands(args: BandsArgs) -> ExitCode {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {}: {e}", args.config.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cfg = match config::parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let gamma: BlochDensityMatrix = match load_checkpoint(&args.checkpoint) {
        Ok(g) => g,
        Err(e) => {
            eprintln!("cannot load checkpoint: {e}");
            return ExitCode::from(EXIT_DATA_MISMATCH);
        }
    };
    // checkpoint must match the configured discretization
    let ell = cfg.crystal.ell;
    if gamma.basis.kmax() != cfg.kmax
        || gamma.grid.n_per_axis() != cfg.kgrid_n
        || gamma.grid.shifted() != cfg.kgrid_shifted
        || (gamma.grid.ell() - ell).abs() > 1e-12 * ell
    {
        eprintln!(
            "checkpoint mismatch: checkpoint has kmax {}, grid {}{}, ell {}; config wants kmax {}, grid {}{}, ell {}",
            gamma.basis.kmax(),
            gamma.grid.n_per_axis(),
            if gamma.grid.shifted() { " shifted" } else { "" },
            gamma.grid.ell(),
            cfg.kmax,
            cfg.kgrid_n,
            if cfg.kgrid_shifted { " shifted" } else { "" },
            ell
        );
        return ExitCode::from(EXIT_DATA_MISMATCH);
    }
    if args.samples < 2 {
        eprintln!("need at least 2 samples");
        return ExitCode::from(EXIT_USAGE);
    }
    let mut corners = Vec::new();
    for letter in args.path.split('-') {
        match zone_point(letter.trim(), ell) {
            Some(p) => corners.push(p),
            None => {
                eprintln!("unknown zone point '{letter}' (expected G, X, M or R)");
                return ExitCode::from(EXIT_USAGE);
            }
        }
    }
    if corners.len() < 2 {
        eprintln!("path needs at least two corners");
        return ExitCode::from(EXIT_USAGE);
    }
    set_blas_threads(cfg.threads);
    let ctx = match MeanFieldContext::new(
        cfg.crystal,
        gamma.basis.clone(),
        gamma.grid.clone(),
        cfg.scheme,
        cfg.threads,
    ) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    // arc-length parametrization of the polyline
    let seg_len: Vec<f64> = corners
        .windows(2)
        .map(|w| {
            ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2) + (w[1][2] - w[0][2]).powi(2))
                .sqrt()
        })
        .collect();
    let total: f64 = seg_len.iter().sum();
    let rho = gamma.density_fourier();
    let mut csv = String::new();
    csv.push_str("path_coordinate,xi1,xi2,xi3");
    for b in (1..=args.bands).rev() {
        csv.push_str(&format!(",band_neg{b}"));
    }
    for b in 1..=args.bands {
        csv.push_str(&format!(",band_pos{b}"));
    }
    csv.push('\n');
    for s in 0..args.samples {
        let target = total * s as f64 / (args.samples - 1) as f64;
        // locate the segment
        let mut acc = 0.0;
        let mut xi = *corners.last().unwrap();
        for (i, &len) in seg_len.iter().enumerate() {
            if target <= acc + len || i == seg_len.len() - 1 {
                let t = if len > 0.0 { ((target - acc) / len).clamp(0.0, 1.0) } else { 0.0 };
                xi = [
                    corners[i][0] + t * (corners[i + 1][0] - corners[i][0]),
                    corners[i][1] + t * (corners[i + 1][1] - corners[i][1]),
                    corners[i][2] + t * (corners[i + 1][2] - corners[i][2]),
                ];
                break;
            }
            acc += len;
        }
        let d = ctx.assemble_at(&gamma, &rho, xi);
        let eig = match blochdf::dirac::diagonalize(&blochdf::dirac::FiberOperator { xi, matrix: d }) {
            Ok(e) => e,
            Err(e) => {
                eprintln!("diagonalization failed along the path: {e}");
                return ExitCode::from(EXIT_USAGE);
            }
        };
        let pos: Vec<f64> = eig
            .eigenvalues
            .iter()
            .copied()
            .filter(|&v| v >= 0.0)
            .take(args.bands)
            .collect();
        let mut neg: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&v| v < 0.0).collect();
        neg.reverse(); // closest to zero first
        neg.truncate(args.bands);
        csv.push_str(&format!(
            "{},{},{},{}",
            jnum(target),
            jnum(xi[0]),
            jnum(xi[1]),
            jnum(xi[2])
        ));
        for b in (0..args.bands).rev() {
            csv.push_str(&format!(
                ",{}",
                neg.get(b).map(|&v| jnum(v)).unwrap_or_else(|| "nan".into())
            ));
        }
        for b in 0..args.bands {
            csv.push_str(&format!(
                ",{}",
                pos.get(b).map(|&v| jnum(v)).unwrap_or_else(|| "nan".into())
            ));
        }
        csv.push('\n');
    }
    let mut file = match std::fs::File::create(&args.csv) {
        Ok(f) => f,
        Err(e) => {
            eprintln!("cannot create {}: {e}", args.csv.display());
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Err(e) = file.write_all(csv.as_bytes()) {
        eprintln!("cannot write {}: {e}", args.csv.display());
        return ExitCode::from(EXIT_USAGE);
    }
    ExitCode::from(EXIT_OK)
}
