//! Flat key = value run configuration.
//!
//! One setting per line, `#` starts a comment, keys mirror the solver knobs:
//!
//! ```text
//! ell = 10.0
//! z = 2.0
//! q = 2.0
//! alpha = 0.00729927
//! kmax = 2
//! kgrid_n = 2
//! kgrid_shifted = true
//! eps_p = auto            # or a number
//! tol_scf = 1e-8
//! tol_e = 1e-10
//! max_iter = 100
//! mixing = 0.3
//! retract_every = 1
//! anderson = false
//! exchange_scheme = probe-correction
//! threads = 1
//! out_energy = energy.json
//! out_log = iterations.jsonl
//! out_checkpoint = state.ckpt
//! ```

use blochdf::{CrystalParams, ExchangeScheme, ScfConfig};
use std::collections::HashMap;
use std::path::PathBuf;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub crystal: CrystalParams,
    pub kmax: i32,
    pub kgrid_n: usize,
    pub kgrid_shifted: bool,
    pub scf: ScfConfig,
    pub scheme: ExchangeScheme,
    pub threads: usize,
    pub out_energy: Option<PathBuf>,
    pub out_log: Option<PathBuf>,
    pub out_checkpoint: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut map: HashMap<String, String> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError(format!("line {}: expected key = value", lineno + 1)));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(ConfigError(format!("line {}: duplicate key '{key}'", lineno + 1)));
        }
    }
    let known = [
        "ell", "z", "q", "alpha", "kmax", "kgrid_n", "kgrid_shifted", "eps_p", "tol_scf",
        "tol_e", "max_iter", "mixing", "retract_every", "anderson", "exchange_scheme",
        "threads", "out_energy", "out_log", "out_checkpoint",
    ];
    for key in map.keys() {
        if !known.contains(&key.as_str()) {
            return Err(ConfigError(format!("unknown key '{key}'")));
        }
    }
    let req_f64 = |key: &str| -> Result<f64, ConfigError> {
        map.get(key)
            .ok_or_else(|| ConfigError(format!("missing required key '{key}'")))?
            .parse()
            .map_err(|_| ConfigError(format!("key '{key}' is not a number")))
    };
    let opt_f64 = |key: &str, default: f64| -> Result<f64, ConfigError> {
        match map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("key '{key}' is not a number"))),
        }
    };
    let opt_usize = |key: &str, default: usize| -> Result<usize, ConfigError> {
        match map.get(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| ConfigError(format!("key '{key}' is not an integer"))),
        }
    };
    let opt_bool = |key: &str, default: bool| -> Result<bool, ConfigError> {
        match map.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(ConfigError(format!("key '{key}' must be true/false, got '{v}'"))),
        }
    };

    let crystal = CrystalParams::new(req_f64("ell")?, req_f64("z")?, req_f64("q")?, req_f64("alpha")?)
        .map_err(|e| ConfigError(e.to_string()))?;
    let kmax: i32 = map
        .get("kmax")
        .ok_or_else(|| ConfigError("missing required key 'kmax'".into()))?
        .parse()
        .map_err(|_| ConfigError("key 'kmax' is not an integer".into()))?;
    let kgrid_n = opt_usize("kgrid_n", 1)?;
    if kgrid_n == 0 {
        return Err(ConfigError("kgrid_n must be >= 1".into()));
    }
    let eps_p = match map.get("eps_p").map(String::as_str) {
        None | Some("auto") => None,
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| ConfigError("key 'eps_p' must be a number or 'auto'".into()))?,
        ),
    };
    let tol_scf = opt_f64("tol_scf", 1e-8)?;
    let tol_e = opt_f64("tol_e", 1e-10)?;
    let max_iter = opt_usize("max_iter", 100)?;
    let mixing = opt_f64("mixing", 0.3)?;
    if !(tol_scf > 0.0 && tol_e > 0.0) {
        return Err(ConfigError("tolerances must be > 0".into()));
    }
    if max_iter == 0 {
        return Err(ConfigError("max_iter must be >= 1".into()));
    }
    if !(0.0 < mixing && mixing <= 1.0) {
        return Err(ConfigError("mixing must be in (0, 1]".into()));
    }
    let scheme: ExchangeScheme = map
        .get("exchange_scheme")
        .map(String::as_str)
        .unwrap_or("probe-correction")
        .parse()
        .map_err(|e: blochdf::ModelError| ConfigError(e.to_string()))?;
    let scf = ScfConfig {
        eps_p,
        tol_scf,
        tol_e,
        max_iter,
        mixing,
        retract_every: opt_usize("retract_every", 1)?,
        anderson: opt_bool("anderson", false)?,
    };
    Ok(RunConfig {
        crystal,
        kmax,
        kgrid_n,
        kgrid_shifted: opt_bool("kgrid_shifted", false)?,
        scf,
        scheme,
        threads: opt_usize("threads", 1)?,
        out_energy: map.get("out_energy").map(PathBuf::from),
        out_log: map.get("out_log").map(PathBuf::from),
        out_checkpoint: map.get("out_checkpoint").map(PathBuf::from),
    })
}
