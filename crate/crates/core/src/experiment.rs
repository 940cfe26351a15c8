//! Dispatch a [`RunConfig`] to the simulation modules and write its CSV
//! (plus an optional JSON mirror).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{DriveFrequency, ExperimentKind, RunConfig};
use crate::correlations::{excitation_spectrum_with, g2_tau_with};
use crate::effective_rate::{rate_comparison, write_rate_csv, RateExtraction, ResonanceSearch};
use crate::error::Result;
use crate::evolution::{schrodinger_evolve_with, EvolveOptions, StateVector};
use crate::hilbert::{Qubit, SystemParams};
use crate::parallel::Execution;
use crate::trajectories::{
    classify_ensemble, locate_two_photon, purity_sweep, run_ensemble, write_clicks_csv, write_populations_csv,
    write_purity_csv, PurityOptions, TrajectoryOptions,
};

/// Header line carrying the wall-clock time; the only line that differs
/// between identical runs.
pub const TIMESTAMP_KEY: &str = "generated_unix";

fn search(cfg: &RunConfig) -> ResonanceSearch {
    ResonanceSearch {
        horizon: cfg.horizon,
        rel_tol: cfg.resonance_rel_tol,
        numerics: cfg.numerics.clone(),
        ..ResonanceSearch::default()
    }
}

/// Parameters with the drive frequency fixed, locating the resonance if asked.
pub fn resolve_params(cfg: &RunConfig) -> Result<SystemParams> {
    let mut p = cfg.params.clone();
    if cfg.drive_frequency == DriveFrequency::TwoPhotonResonance {
        p.omega_l = locate_two_photon(&p, &search(cfg), 0.25)?;
    }
    Ok(p)
}

struct Output {
    path: PathBuf,
    header: Vec<(String, String)>,
}

impl Output {
    fn new(cfg: &RunConfig, path: &Path) -> Self {
        Self {
            path: path.to_path_buf(),
            header: cfg.describe(),
        }
    }

    fn note(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    fn write(&self, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        self.write_to(&self.path, body)
    }

    fn write_to(&self, path: &Path, body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "# parity-bundle {}", env!("CARGO_PKG_VERSION"))?;
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        writeln!(w, "# {TIMESTAMP_KEY} = {now}")?;
        for (k, v) in &self.header {
            writeln!(w, "# {k} = {v}")?;
        }
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn json(&self, data: &impl Serialize) -> Result<PathBuf> {
        let path = json_path(&self.path);
        let meta: serde_json::Map<String, Value> = self
            .header
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        let doc = json!({ "metadata": meta, "data": data });
        let w = BufWriter::new(File::create(&path)?);
        serde_json::to_writer_pretty(w, &doc).map_err(std::io::Error::from)?;
        Ok(path)
    }
}

fn json_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `out.csv` → `out_<suffix>.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}{ext}"))
}

/// Run the experiment and return the files written.
pub fn run_experiment(cfg: &RunConfig, out: &Path, json: bool, exec: Execution) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let mut written = vec![out.to_path_buf()];
    let mut o = Output::new(cfg, out);
    match cfg.kind {
        ExperimentKind::Spectrum => {
            o.note("observable", "period-averaged <X^dag X> in the periodic steady state");
            let s = excitation_spectrum_with(&cfg.params, &cfg.detuning_grid, &cfg.numerics, exec)?;
            o.write(|w| s.write_csv(w))?;
            if json {
                written.push(o.json(&s)?);
            }
        }
        ExperimentKind::Rabi => {
            let p = resolve_params(cfg)?;
            o.note("omega_l_used", format!("{:?}", p.omega_l));
            o.note("dynamics", "closed system from |0,g>");
            let psi0 = StateVector::basis(p.n_max, 0, Qubit::Ground)?;
            let opts = EvolveOptions {
                numerics: cfg.numerics.clone(),
                observables: Vec::new(),
            };
            let r = schrodinger_evolve_with(&p, &psi0, cfg.t_end, cfg.dt_out, &opts)?;
            o.write(|w| r.write_csv(w, Some(&cfg.states)))?;
            if json {
                let rows: Vec<Vec<f64>> = r
                    .populations
                    .iter()
                    .map(|row| cfg.states.iter().map(|&s| row[s]).collect())
                    .collect();
                written.push(o.json(&json!({ "times": r.times, "states": cfg.states, "populations": rows }))?);
            }
        }
        ExperimentKind::Trajectories => {
            let p = resolve_params(cfg)?;
            o.note("omega_l_used", format!("{:?}", p.omega_l));
            let opts = TrajectoryOptions {
                numerics: cfg.numerics.clone(),
                initial: None,
            };
            let runs = run_ensemble(&p, &opts, cfg.seed, cfg.n_traj, cfg.t_end, Some(cfg.dt_out), exec)?;
            let window = cfg.window_kappa / p.kappa;
            let stats = classify_ensemble(&runs, window)?;
            o.note("window_time", format!("{window:?}"));
            o.write(|w| write_clicks_csv(&runs, w))?;
            let pops = sibling(out, "populations");
            o.write_to(&pops, |w| write_populations_csv(&runs, &cfg.states, w))?;
            written.push(pops);
            let bundles = sibling(out, "bundles");
            o.write_to(&bundles, |w| {
                writeln!(w, "size,count,purity")?;
                for (n, c) in &stats.counts {
                    writeln!(w, "{n},{c},{:.10e}", *c as f64 / stats.total as f64)?;
                }
                Ok(())
            })?;
            written.push(bundles);
            if json {
                written.push(o.json(&json!({ "trajectories": runs, "bundles": stats }))?);
            }
        }
        ExperimentKind::PuritySweep => {
            let opts = PurityOptions {
                n_traj: cfg.n_traj,
                t_end: cfg.t_end,
                window_kappa: cfg.window_kappa,
                seed: cfg.seed,
                numerics: cfg.numerics.clone(),
                search: search(cfg),
                bracket_half_width: 0.25,
                exec,
            };
            let grid = match cfg.sweep {
                crate::trajectories::SweepVariable::Kappa => &cfg.kappa_grid,
                crate::trajectories::SweepVariable::Theta => &cfg.theta_grid,
            };
            let points = purity_sweep(&cfg.params, cfg.sweep, grid, &opts)?;
            o.note("drive", "two-photon resonance located per point");
            o.write(|w| write_purity_csv(cfg.sweep, &points, w))?;
            if json {
                written.push(o.json(&points)?);
            }
        }
        ExperimentKind::G2Tau => {
            let p = resolve_params(cfg)?;
            o.note("omega_l_used", format!("{:?}", p.omega_l));
            o.note("phase_average", format!("{} start phases per drive period", cfg.numerics.n_phase));
            let c = g2_tau_with(&p, cfg.order, &cfg.tau_grid, &cfg.numerics)?;
            o.write(|w| c.write_csv(w))?;
            if json {
                written.push(o.json(&c)?);
            }
        }
        ExperimentKind::OmegaEff => {
            let extraction = RateExtraction {
                search: search(cfg),
                ..RateExtraction::default()
            };
            o.note("rate_convention", "omega_numeric is half the angular frequency of the P_2e oscillation");
            let rows = rate_comparison(&cfg.params, &cfg.theta_grid, &extraction, exec)?;
            o.write(|w| write_rate_csv(&rows, w))?;
            if json {
                written.push(o.json(&rows)?);
            }
        }
    }
    Ok(written)
}
