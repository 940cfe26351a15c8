//! Flat `key = value` run configuration.
//!
//! Values are numbers (`1e-4`, `pi/2`, `-3*pi/4`), bare words, or comma
//! lists of numbers. `linspace(a, b, n)` and `logspace(a, b, n)` (base-10
//! exponents) expand to grids. `#` starts a comment.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{basis_index, Qubit, SystemParams, DEFAULT_N_MAX};
use crate::settings::{Numerics, SteadyStateMethod};
use crate::trajectories::{SweepVariable, DEFAULT_WINDOW_KAPPA};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ExperimentKind {
    Spectrum,
    Rabi,
    Trajectories,
    PuritySweep,
    G2Tau,
    OmegaEff,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Spectrum,
        ExperimentKind::Rabi,
        ExperimentKind::Trajectories,
        ExperimentKind::PuritySweep,
        ExperimentKind::G2Tau,
        ExperimentKind::OmegaEff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Spectrum => "spectrum",
            ExperimentKind::Rabi => "rabi",
            ExperimentKind::Trajectories => "trajectories",
            ExperimentKind::PuritySweep => "purity-sweep",
            ExperimentKind::G2Tau => "g2tau",
            ExperimentKind::OmegaEff => "omega-eff",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("kind", format!("unknown experiment kind '{s}'")))
    }
}

/// How the drive frequency is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum DriveFrequency {
    Fixed(f64),
    /// Locate the two-photon resonance by closed-system search.
    TwoPhotonResonance,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub kind: ExperimentKind,
    pub params: SystemParams,
    pub drive_frequency: DriveFrequency,
    pub numerics: Numerics,
    pub seed: u64,
    pub n_traj: usize,
    pub t_end: f64,
    pub dt_out: f64,
    /// Bare states reported by `rabi` and `trajectories`, as basis indices.
    pub states: Vec<usize>,
    /// Δ_q/ω_r grid for `spectrum`.
    pub detuning_grid: Vec<f64>,
    /// Delay grid for `g2tau`.
    pub tau_grid: Vec<f64>,
    /// Bundle size for `g2tau` (1 gives the photon correlation).
    pub order: u32,
    /// θ grid for `omega-eff` and θ purity sweeps.
    pub theta_grid: Vec<f64>,
    /// κ grid for κ purity sweeps.
    pub kappa_grid: Vec<f64>,
    pub sweep: SweepVariable,
    /// Bundle window in units of 1/κ.
    pub window_kappa: f64,
    /// Closed-system run length for the resonance search; `None` picks a default.
    pub horizon: Option<f64>,
    pub resonance_rel_tol: f64,
}

impl RunConfig {
    /// Reference parameters with the grids each experiment needs by default.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let params = SystemParams::reference(PI / 2.0);
        let tau_min = 1.0 / params.kappa;
        Self {
            kind,
            drive_frequency: DriveFrequency::Fixed(params.omega_l),
            params,
            numerics: Numerics::default(),
            seed: 0,
            n_traj: 25,
            t_end: 2e4,
            dt_out: 50.0,
            states: vec![
                basis_index(0, Qubit::Ground),
                basis_index(1, Qubit::Excited),
                basis_index(2, Qubit::Excited),
                basis_index(3, Qubit::Excited),
            ],
            detuning_grid: linspace(0.5, 4.5, 81),
            tau_grid: linspace(tau_min, 20.0 * tau_min, 20),
            order: 2,
            theta_grid: linspace(0.0, PI / 2.0, 7),
            kappa_grid: logspace(-3.0, -1.0, 9),
            sweep: SweepVariable::Kappa,
            window_kappa: DEFAULT_WINDOW_KAPPA,
            horizon: None,
            resonance_rel_tol: 1e-7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate().map_err(|e| match e {
            Error::InvalidParameter { name, reason } => Error::config(name, reason),
            other => other,
        })?;
        self.numerics.validate()?;
        let nonempty = |key: &str, g: &[f64]| {
            if g.is_empty() {
                Err(Error::config(key, "grid is empty"))
            } else if g.iter().any(|v| !v.is_finite()) {
                Err(Error::config(key, "grid has non-finite entries"))
            } else {
                Ok(())
            }
        };
        match self.kind {
            ExperimentKind::Spectrum => nonempty("detuning_grid", &self.detuning_grid)?,
            ExperimentKind::G2Tau => nonempty("tau_grid", &self.tau_grid)?,
            ExperimentKind::OmegaEff => nonempty("theta_grid", &self.theta_grid)?,
            ExperimentKind::PuritySweep => match self.sweep {
                SweepVariable::Kappa => nonempty("kappa_grid", &self.kappa_grid)?,
                SweepVariable::Theta => nonempty("theta_grid", &self.theta_grid)?,
            },
            ExperimentKind::Rabi | ExperimentKind::Trajectories => {
                if self.states.is_empty() {
                    return Err(Error::config("states", "no states to report"));
                }
            }
        }
        if matches!(self.kind, ExperimentKind::Rabi | ExperimentKind::Trajectories) {
            if !(self.t_end > 0.0 && self.t_end.is_finite()) {
                return Err(Error::config("t_end", "must be finite and > 0"));
            }
            if !(self.dt_out > 0.0 && self.dt_out.is_finite()) {
                return Err(Error::config("dt_out", "must be finite and > 0"));
            }
        }
        if self.kind == ExperimentKind::PuritySweep && !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::config("t_end", "must be finite and > 0"));
        }
        if let Some(&s) = self.states.iter().find(|&&s| s >= self.params.dim()) {
            return Err(Error::config("states", format!("state index {s} beyond the truncation")));
        }
        if matches!(self.kind, ExperimentKind::Trajectories | ExperimentKind::PuritySweep) && self.n_traj == 0 {
            return Err(Error::config("n_traj", "must be >= 1"));
        }
        if !(self.window_kappa > 0.0) {
            return Err(Error::config("window", "must be > 0"));
        }
        if self.order == 0 {
            return Err(Error::config("order", "must be >= 1"));
        }
        if let DriveFrequency::Fixed(w) = self.drive_frequency {
            if !(w > 0.0) {
                return Err(Error::config("omega_l", "must be > 0"));
            }
        }
        Ok(())
    }

    /// `key = value` lines describing the configuration, for output headers.
    pub fn describe(&self) -> Vec<(String, String)> {
        let p = &self.params;
        let n = &self.numerics;
        let mut out: Vec<(String, String)> = vec![
            ("kind".into(), self.kind.to_string()),
            ("omega_r".into(), fmt_num(p.omega_r)),
            ("omega_q".into(), fmt_num(p.omega_q)),
            ("lambda".into(), fmt_num(p.lambda)),
            ("theta".into(), fmt_num(p.theta)),
            ("drive".into(), fmt_num(p.drive)),
            (
                "omega_l".into(),
                match self.drive_frequency {
                    DriveFrequency::Fixed(w) => fmt_num(w),
                    DriveFrequency::TwoPhotonResonance => "resonance".into(),
                },
            ),
            ("kappa".into(), fmt_num(p.kappa)),
            ("gamma".into(), fmt_num(p.gamma_q)),
            ("n_max".into(), p.n_max.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("substeps".into(), n.substeps_per_period.to_string()),
            ("level_margin".into(), fmt_num(n.level_margin)),
            (
                "dynamics_levels".into(),
                n.dynamics_levels.map_or("auto".into(), |l| l.to_string()),
            ),
            ("retained_fraction".into(), fmt_num(n.retained_fraction)),
            ("harmonics".into(), n.harmonics.to_string()),
            ("n_phase".into(), n.n_phase.to_string()),
            (
                "steady_state".into(),
                match n.steady_state {
                    SteadyStateMethod::HarmonicBalance => "harmonic-balance".into(),
                    SteadyStateMethod::PeriodMap => "period-map".into(),
                },
            ),
            ("steady_tolerance".into(), fmt_num(n.steady_tolerance)),
            ("max_periods".into(), n.max_periods.to_string()),
            ("horizon".into(), self.horizon.map_or("auto".into(), fmt_num)),
            ("resonance_rel_tol".into(), fmt_num(self.resonance_rel_tol)),
        ];
        let list = |g: &[f64]| g.iter().map(|v| fmt_num(*v)).collect::<Vec<_>>().join(",");
        match self.kind {
            ExperimentKind::Spectrum => out.push(("detuning_grid".into(), list(&self.detuning_grid))),
            ExperimentKind::Rabi | ExperimentKind::Trajectories => {
                out.push(("t_end".into(), fmt_num(self.t_end)));
                out.push(("dt_out".into(), fmt_num(self.dt_out)));
                let labels: Vec<String> = self.states.iter().map(|&s| state_label(s)).collect();
                out.push(("states".into(), labels.join(",")));
                if self.kind == ExperimentKind::Trajectories {
                    out.push(("n_traj".into(), self.n_traj.to_string()));
                    out.push(("window".into(), fmt_num(self.window_kappa)));
                }
            }
            ExperimentKind::PuritySweep => {
                out.push(("sweep".into(), self.sweep.name().into()));
                let grid = match self.sweep {
                    SweepVariable::Kappa => ("kappa_grid", &self.kappa_grid),
                    SweepVariable::Theta => ("theta_grid", &self.theta_grid),
                };
                out.push((grid.0.into(), list(grid.1)));
                out.push(("n_traj".into(), self.n_traj.to_string()));
                out.push(("t_end".into(), fmt_num(self.t_end)));
                out.push(("window".into(), fmt_num(self.window_kappa)));
            }
            ExperimentKind::G2Tau => {
                out.push(("tau_grid".into(), list(&self.tau_grid)));
                out.push(("order".into(), self.order.to_string()));
            }
            ExperimentKind::OmegaEff => out.push(("theta_grid".into(), list(&self.theta_grid))),
        }
        out
    }
}

/// Shortest round-trip representation.
fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

fn state_label(index: usize) -> String {
    let (n, q) = crate::hilbert::basis_state(index);
    format!("{n}{}", q.label())
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

pub fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a, b, n).into_iter().map(|e| 10f64.powf(e)).collect()
}

/// A number like `2.5`, `-1e-3`, `pi`, `pi/6` or `3*pi/4`.
fn parse_number(key: &str, text: &str) -> Result<f64> {
    let bad = || Error::config(key, format!("cannot read '{text}' as a number"));
    let s = text.trim();
    if s.is_empty() {
        return Err(bad());
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s.strip_prefix('+').unwrap_or(s)),
    };
    let mut value = 1.0;
    let mut divide = false;
    let mut rest = body;
    loop {
        let end = rest.find(['*', '/']).unwrap_or(rest.len());
        let factor = rest[..end].trim();
        let x = if factor.eq_ignore_ascii_case("pi") {
            PI
        } else {
            factor.parse::<f64>().map_err(|_| bad())?
        };
        value = if divide { value / x } else { value * x };
        if end == rest.len() {
            break;
        }
        divide = rest.as_bytes()[end] == b'/';
        rest = &rest[end + 1..];
    }
    let v = sign * value;
    if v.is_nan() {
        return Err(bad());
    }
    Ok(v)
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    let s = text.trim();
    for (name, f) in [("linspace", linspace as fn(f64, f64, usize) -> Vec<f64>), ("logspace", logspace)] {
        if let Some(args) = s.strip_prefix(name) {
            let inner = args
                .trim()
                .strip_prefix('(')
                .and_then(|a| a.strip_suffix(')'))
                .ok_or_else(|| Error::config(key, format!("malformed {name}(...)")))?;
            let parts: Vec<&str> = inner.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::config(key, format!("{name} takes (start, stop, count)")));
            }
            let a = parse_number(key, parts[0])?;
            let b = parse_number(key, parts[1])?;
            let n: usize = parts[2]
                .trim()
                .parse()
                .map_err(|_| Error::config(key, "count must be a non-negative integer"))?;
            return Ok(f(a, b, n));
        }
    }
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_number(key, t)).collect()
}

fn parse_state(key: &str, text: &str) -> Result<usize> {
    let t = text.trim();
    let bad = || Error::config(key, format!("'{t}' is not a state like 2e or 0g"));
    let (n, q) = t.split_at(t.len().checked_sub(1).ok_or_else(bad)?);
    let n: usize = n.parse().map_err(|_| bad())?;
    let q = match q {
        "g" => Qubit::Ground,
        "e" => Qubit::Excited,
        _ => return Err(bad()),
    };
    Ok(basis_index(n, q))
}

fn parse_int<T: FromStr>(key: &str, text: &str) -> Result<T> {
    text.trim()
        .parse()
        .map_err(|_| Error::config(key, format!("'{}' is not a non-negative integer", text.trim())))
}

/// Split a document into `key -> value` pairs, rejecting duplicates.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), "expected key = value"))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(format!("line {}", i + 1), "empty key"));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::config(key, "given more than once"));
        }
    }
    Ok(out)
}

/// Parse a configuration document. `kind` may come from the document or be
/// imposed by the caller (the CLI subcommand); if both are present they must agree.
pub fn parse_config(text: &str, kind: Option<ExperimentKind>) -> Result<RunConfig> {
    let pairs = parse_pairs(text)?;
    config_from_pairs(&pairs, kind)
}

pub fn config_from_pairs(pairs: &BTreeMap<String, String>, kind: Option<ExperimentKind>) -> Result<RunConfig> {
    let kind = match (pairs.get("kind"), kind) {
        (Some(k), None) => k.parse()?,
        (None, Some(k)) => k,
        (Some(k), Some(imposed)) => {
            let named: ExperimentKind = k.parse()?;
            if named != imposed {
                return Err(Error::config("kind", format!("config says '{named}' but '{imposed}' was requested")));
            }
            named
        }
        (None, None) => return Err(Error::config("kind", "no experiment kind given")),
    };
    let mut cfg = RunConfig::defaults(kind);
    cfg.params.n_max = DEFAULT_N_MAX;
    let mut detuning = None;
    let mut kappa_over_gamma = None;
    for (key, value) in pairs {
        let k = key.as_str();
        let num = || parse_number(k, value);
        match k {
            "kind" => {}
            "omega_r" => cfg.params.omega_r = num()?,
            "omega_q" => cfg.params.omega_q = num()?,
            "lambda" => cfg.params.lambda = num()?,
            "theta" => cfg.params.theta = num()?,
            "drive" => cfg.params.drive = num()?,
            "omega_l" => {
                cfg.drive_frequency = if value == "resonance" {
                    DriveFrequency::TwoPhotonResonance
                } else {
                    DriveFrequency::Fixed(num()?)
                }
            }
            "detuning" => detuning = Some(num()?),
            "kappa" => cfg.params.kappa = num()?,
            "gamma" => cfg.params.gamma_q = num()?,
            "kappa_over_gamma" => kappa_over_gamma = Some(num()?),
            "n_max" => cfg.params.n_max = parse_int(k, value)?,
            "seed" => cfg.seed = parse_int(k, value)?,
            "n_traj" => cfg.n_traj = parse_int(k, value)?,
            "t_end" => cfg.t_end = num()?,
            "dt_out" => cfg.dt_out = num()?,
            "states" => {
                cfg.states = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_state(k, s))
                    .collect::<Result<_>>()?
            }
            "detuning_grid" => cfg.detuning_grid = parse_list(k, value)?,
            "tau_grid" => cfg.tau_grid = parse_list(k, value)?,
            "order" => cfg.order = parse_int(k, value)?,
            "theta_grid" => cfg.theta_grid = parse_list(k, value)?,
            "kappa_grid" => cfg.kappa_grid = parse_list(k, value)?,
            "sweep" => {
                cfg.sweep = match value.as_str() {
                    "kappa" => SweepVariable::Kappa,
                    "theta" => SweepVariable::Theta,
                    _ => return Err(Error::config(k, "expected kappa or theta")),
                }
            }
            "window" => cfg.window_kappa = num()?,
            "horizon" => cfg.horizon = if value == "auto" { None } else { Some(num()?) },
            "resonance_rel_tol" => cfg.resonance_rel_tol = num()?,
            "substeps" => cfg.numerics.substeps_per_period = parse_int(k, value)?,
            "level_margin" => cfg.numerics.level_margin = num()?,
            "dynamics_levels" => {
                cfg.numerics.dynamics_levels = if value == "auto" {
                    None
                } else {
                    Some(parse_int(k, value)?)
                }
            }
            "retained_fraction" => cfg.numerics.retained_fraction = num()?,
            "harmonics" => cfg.numerics.harmonics = parse_int(k, value)?,
            "n_phase" => cfg.numerics.n_phase = parse_int(k, value)?,
            "steady_state" => {
                cfg.numerics.steady_state = match value.as_str() {
                    "harmonic-balance" => SteadyStateMethod::HarmonicBalance,
                    "period-map" => SteadyStateMethod::PeriodMap,
                    _ => return Err(Error::config(k, "expected harmonic-balance or period-map")),
                }
            }
            "steady_tolerance" => cfg.numerics.steady_tolerance = num()?,
            "max_periods" => cfg.numerics.max_periods = parse_int(k, value)?,
            _ => return Err(Error::config(k, "unknown key")),
        }
    }
    if let Some(r) = kappa_over_gamma {
        if pairs.contains_key("kappa") {
            return Err(Error::config("kappa_over_gamma", "conflicts with kappa"));
        }
        cfg.params.kappa = r * cfg.params.gamma_q;
    }
    if let Some(d) = detuning {
        if pairs.contains_key("omega_l") {
            return Err(Error::config("detuning", "conflicts with omega_l"));
        }
        cfg.drive_frequency = DriveFrequency::Fixed(cfg.params.omega_q + d * cfg.params.omega_r);
    }
    if let DriveFrequency::Fixed(w) = cfg.drive_frequency {
        cfg.params.omega_l = w;
    }
    if !pairs.contains_key("tau_grid") {
        let t = 1.0 / cfg.params.kappa;
        cfg.tau_grid = linspace(t, 20.0 * t, 20);
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_and_grids() {
        assert_eq!(parse_number("x", "2.5").unwrap(), 2.5);
        assert!((parse_number("x", "pi/6").unwrap() - PI / 6.0).abs() < 1e-15);
        assert!((parse_number("x", "-3*pi/4").unwrap() + 0.75 * PI).abs() < 1e-15);
        assert!(parse_number("x", "seven").is_err());
        assert_eq!(parse_list("g", "1, 2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_list("g", "linspace(0, 1, 3)").unwrap(), vec![0.0, 0.5, 1.0]);
        let l = parse_list("g", "logspace(-2, 0, 3)").unwrap();
        assert!((l[0] - 0.01).abs() < 1e-15 && (l[2] - 1.0).abs() < 1e-15);
        assert!(parse_list("g", "linspace(0, 1)").is_err());
    }

    #[test]
    fn reference_config_echoes_parameters() {
        let text = "kind = spectrum\nomega_q = 5 # qubit\nlambda = 0.2\ndrive = 0.06\ngamma = 1e-4\nkappa_over_gamma = 20\ntheta = pi/2\n";
        let cfg = parse_config(text, None).unwrap();
        assert_eq!(cfg.params.omega_q / cfg.params.omega_r, 5.0);
        assert_eq!(cfg.params.n_max, 20);
        assert!((cfg.params.kappa - 2e-3).abs() < 1e-18);
        let d = cfg.describe();
        assert!(d.iter().any(|(k, v)| k == "n_max" && v == "20"));
        assert!(d.iter().any(|(k, v)| k == "omega_q" && v == "5.0"));
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse_config("kind = rabi\nkappa = -1", None).unwrap_err();
        assert!(e.to_string().contains("kappa"), "{e}");
        let e = parse_config("kind = rabi\nfrobnicate = 1", None).unwrap_err();
        assert!(e.to_string().contains("frobnicate"), "{e}");
        let e = parse_config("kind = spectrum\ndetuning_grid = ", None).unwrap_err();
        assert!(e.to_string().contains("detuning_grid"), "{e}");
        let e = parse_config("kind = rabi\nkind = rabi", None).unwrap_err();
        assert!(e.to_string().contains("kind"), "{e}");
        assert!(parse_config("kind = spectrum", Some(ExperimentKind::Rabi)).is_err());
        assert!(parse_config("theta = 1", None).is_err());
    }

    #[test]
    fn states_and_drive() {
        let cfg = parse_config("states = 0g, 2e\nomega_l = resonance", Some(ExperimentKind::Rabi)).unwrap();
        assert_eq!(cfg.states, vec![0, 5]);
        assert_eq!(cfg.drive_frequency, DriveFrequency::TwoPhotonResonance);
        let cfg = parse_config("detuning = 2", Some(ExperimentKind::Rabi)).unwrap();
        assert_eq!(cfg.params.omega_l, 7.0);
        assert!(parse_config("states = 2x", Some(ExperimentKind::Rabi)).is_err());
    }
}
