//! Closed-system and Lindblad time evolution on the bare basis.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::dressed::{DressedSystem, JumpOperators};
use crate::error::{Error, Result};
use crate::hilbert::{basis_index, population_label, OperatorMatrix, Qubit, SystemParams, C64, ONE};
use crate::linalg::{min_eigenvalue, trace, trace_product, CMat, CVec};
use crate::model::DrivenModel;
use crate::settings::Numerics;

pub const NORM_TOLERANCE: f64 = 1e-8;
pub const TRACE_TOLERANCE: f64 = 1e-8;
pub const HERMITICITY_TOLERANCE: f64 = 1e-10;
pub const POSITIVITY_TOLERANCE: f64 = 1e-8;

/// Weight an initial density matrix may have outside the simulated levels.
const LEAKAGE_TOLERANCE: f64 = 1e-10;

/// Pure state on the bare basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(CVec);

impl StateVector {
    /// Wrap amplitudes that are already normalized.
    pub fn new(amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::param("psi0", format!("norm is {norm}, expected 1")));
        }
        Ok(Self(amplitudes))
    }

    pub fn normalized(amplitudes: DVector<C64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::param("psi0", "cannot normalize a zero or non-finite vector"));
        }
        Ok(Self(amplitudes / C64::new(norm, 0.0)))
    }

    /// `|n, q⟩` in a space truncated at `n_max` photons.
    pub fn basis(n_max: usize, n: usize, q: Qubit) -> Result<Self> {
        if n > n_max {
            return Err(Error::param("n", format!("photon number {n} exceeds n_max = {n_max}")));
        }
        let mut v = CVec::zeros(crate::hilbert::hilbert_dim(n_max));
        v[basis_index(n, q)] = ONE;
        Ok(Self(v))
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn populations(&self) -> Vec<f64> {
        self.0.iter().map(|z| z.norm_sqr()).collect()
    }
}

/// Density matrix on the bare basis. Constructed values satisfy the trace,
/// Hermiticity and positivity tolerances.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        let rho = Self(m);
        rho.check(0.0)?;
        Ok(rho)
    }

    pub(crate) fn from_raw(m: CMat) -> Self {
        Self(m)
    }

    pub fn pure(psi: &StateVector) -> Self {
        let v = psi.amplitudes();
        Self(v * v.adjoint())
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.0 - self.0.adjoint()).camax()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    pub fn populations(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.0[(i, i)].re).collect()
    }

    /// Tr(ρ O).
    pub fn expectation(&self, op: &OperatorMatrix) -> C64 {
        trace_product(&self.0, op.matrix())
    }

    /// Verify the invariants, naming `time` in the error.
    pub fn check(&self, time: f64) -> Result<()> {
        check_density(&self.0, time)
    }
}

pub(crate) fn check_density(m: &CMat, time: f64) -> Result<()> {
    density_invariants(m, time).map(|_| ())
}

/// Check the invariants and return `(|Tr ρ − 1|, min eigenvalue)`.
pub(crate) fn density_invariants(m: &CMat, time: f64) -> Result<(f64, f64)> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let deviation = (trace(m) - ONE).norm();
    if !(deviation <= TRACE_TOLERANCE) {
        return Err(Error::TraceViolation { time, deviation });
    }
    let defect = (m - m.adjoint()).camax();
    if !(defect <= HERMITICITY_TOLERANCE) {
        return Err(Error::NotHermitian { defect });
    }
    let min_eigenvalue = min_eigenvalue(m);
    if min_eigenvalue < -POSITIVITY_TOLERANCE {
        return Err(Error::PositivityViolation { time, min_eigenvalue });
    }
    Ok((deviation, min_eigenvalue))
}

/// Worst conservation figures seen over the output grid of a run.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Invariants {
    /// Largest |Tr ρ − 1| (density matrices) or |‖ψ‖² − 1| (wave functions).
    pub max_drift: f64,
    /// Smallest eigenvalue of ρ; `None` for wave functions.
    pub min_eigenvalue: Option<f64>,
}

#[derive(Clone, Debug)]
pub enum FinalState {
    Pure(StateVector),
    Mixed(DensityMatrix),
}

#[derive(Clone, Debug, Serialize)]
pub struct ObservableSeries {
    pub name: String,
    pub values: Vec<f64>,
}

/// Sampled output of an evolution run.
#[derive(Clone, Debug)]
pub struct EvolutionResult {
    pub times: Vec<f64>,
    /// `populations[i][b]` is the bare population of basis state `b` at `times[i]`.
    pub populations: Vec<Vec<f64>>,
    pub observables: Vec<ObservableSeries>,
    pub final_state: FinalState,
    pub invariants: Invariants,
}

impl EvolutionResult {
    /// Time series of `P_{n,q}`.
    pub fn population(&self, n: usize, q: Qubit) -> Vec<f64> {
        let b = basis_index(n, q);
        self.populations.iter().map(|p| p[b]).collect()
    }

    pub fn observable(&self, name: &str) -> Option<&[f64]> {
        self.observables
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.values.as_slice())
    }

    /// CSV with a `t` column, one column per requested basis index (all of
    /// them when `states` is `None`), then the observables.
    pub fn write_csv<W: Write>(&self, mut w: W, states: Option<&[usize]>) -> std::io::Result<()> {
        let dim = self.populations.first().map_or(0, Vec::len);
        let all: Vec<usize> = (0..dim).collect();
        let cols = states.unwrap_or(&all);
        let mut header = vec!["t".to_string()];
        header.extend(cols.iter().map(|&b| population_label(b)));
        header.extend(self.observables.iter().map(|o| o.name.clone()));
        writeln!(w, "{}", header.join(","))?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{t:.10e}")?;
            for &b in cols {
                write!(w, ",{:.10e}", self.populations[i][b])?;
            }
            for o in &self.observables {
                write!(w, ",{:.10e}", o.values[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Knobs for [`schrodinger_evolve_with`] and [`lindblad_evolve_with`].
#[derive(Clone, Debug, Default)]
pub struct EvolveOptions {
    pub numerics: Numerics,
    /// Extra bare-basis observables recorded as Re Tr(ρ O).
    pub observables: Vec<(String, OperatorMatrix)>,
}

/// `0, dt, 2dt, …` up to and including `t_end`.
pub(crate) fn output_grid(t_end: f64, dt_out: f64) -> Result<Vec<f64>> {
    if !(t_end.is_finite() && t_end >= 0.0) {
        return Err(Error::param("t_end", "must be finite and >= 0"));
    }
    if !(dt_out.is_finite() && dt_out > 0.0) {
        return Err(Error::param("dt_out", "must be finite and > 0"));
    }
    let n = (t_end / dt_out + 1e-9).floor();
    if n > 1e8 {
        return Err(Error::param("dt_out", "output grid has more than 1e8 points"));
    }
    Ok((0..=n as usize).map(|i| i as f64 * dt_out).collect())
}

fn check_observables(obs: &[(String, OperatorMatrix)], dim: usize) -> Result<()> {
    for (_, o) in obs {
        if o.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: o.dim(),
            });
        }
    }
    Ok(())
}

pub fn schrodinger_evolve(p: &SystemParams, psi0: &StateVector, t_end: f64, dt_out: f64) -> Result<EvolutionResult> {
    schrodinger_evolve_with(p, psi0, t_end, dt_out, &EvolveOptions::default())
}

/// Solve `i d|ψ⟩/dt = H(t)|ψ⟩` on the full truncated space.
pub fn schrodinger_evolve_with(
    p: &SystemParams,
    psi0: &StateVector,
    t_end: f64,
    dt_out: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    p.validate()?;
    if psi0.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: psi0.dim(),
        });
    }
    let n0 = psi0.norm();
    if (n0 - 1.0).abs() > NORM_TOLERANCE {
        return Err(Error::param("psi0", format!("norm is {n0}, expected 1")));
    }
    check_observables(&opts.observables, p.dim())?;
    let grid = output_grid(t_end, dt_out)?;

    let numerics = Numerics {
        dynamics_levels: Some(p.dim()),
        ..opts.numerics.clone()
    };
    let model = DrivenModel::new(p, &numerics)?;
    let stepper = model.unitary_stepper();
    let period = stepper.period();
    let u_period = stepper.period_map();

    let mut psi = model.from_bare_vector(psi0.amplitudes());
    let mut t_prev = 0.0;
    let mut max_drift: f64 = 0.0;
    let mut populations = Vec::with_capacity(grid.len());
    let mut obs: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); opts.observables.len()];
    for &t in &grid {
        psi = advance_vector(&stepper, &u_period, period, &psi, t_prev, t);
        t_prev = t;
        let drift = (psi.norm_squared() - 1.0).abs();
        max_drift = max_drift.max(drift);
        if drift > NORM_TOLERANCE {
            return Err(Error::Integration(format!("norm drift {drift:e} at t = {t}")));
        }
        let bare = model.to_bare_vector(&psi);
        populations.push(bare.iter().map(|z| z.norm_sqr()).collect());
        for ((_, o), series) in opts.observables.iter().zip(obs.iter_mut()) {
            series.push(bare.dotc(&(o.matrix() * &bare)).re);
        }
    }
    Ok(EvolutionResult {
        times: grid,
        populations,
        observables: named(&opts.observables, obs),
        final_state: FinalState::Pure(StateVector(model.to_bare_vector(&psi))),
        invariants: Invariants {
            max_drift,
            min_eigenvalue: None,
        },
    })
}

fn named(obs: &[(String, OperatorMatrix)], values: Vec<Vec<f64>>) -> Vec<ObservableSeries> {
    obs.iter()
        .zip(values)
        .map(|((name, _), values)| ObservableSeries {
            name: name.clone(),
            values,
        })
        .collect()
}

/// Apply the substep grid, hopping whole periods with `u_period`.
pub(crate) fn advance_vector(
    stepper: &crate::propagate::PeriodStepper,
    u_period: &CMat,
    period: f64,
    psi: &CVec,
    t_a: f64,
    t_b: f64,
) -> CVec {
    if t_b - t_a < 3.0 * period {
        return stepper.apply(psi, t_a, t_b);
    }
    let start = (t_a / period - 1e-9).ceil() * period;
    let whole = ((t_b - start) / period + 1e-9).floor() as u64;
    let mut v = stepper.apply(psi, t_a, start);
    for _ in 0..whole {
        v = u_period * v;
    }
    stepper.apply(&v, start + whole as f64 * period, t_b)
}

/// `i[ρ,H] + κL[X]ρ + γL[D]ρ` with `L[C]ρ = CρC† − ½{C†C, ρ}`, on the bare
/// basis.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    h_t: &OperatorMatrix,
    jumps: &JumpOperators,
    kappa: f64,
    gamma_q: f64,
) -> Result<CMat> {
    let d = rho.dim();
    for found in [h_t.dim(), jumps.cavity.dim(), jumps.qubit.dim()] {
        if found != d {
            return Err(Error::DimensionMismatch { expected: d, found });
        }
    }
    let r = rho.matrix();
    let h = h_t.matrix();
    let mut out = (r * h - h * r) * C64::new(0.0, 1.0);
    for (c, rate) in [(jumps.cavity.matrix(), kappa), (jumps.qubit.matrix(), gamma_q)] {
        if rate == 0.0 {
            continue;
        }
        let cd = c.adjoint();
        let cdc = &cd * c;
        let term = c * r * &cd - (&cdc * r + r * &cdc) * C64::new(0.5, 0.0);
        out += term * C64::new(rate, 0.0);
    }
    Ok(out)
}

pub fn lindblad_evolve(p: &SystemParams, rho0: &DensityMatrix, t_end: f64, dt_out: f64) -> Result<EvolutionResult> {
    lindblad_evolve_with(p, rho0, t_end, dt_out, &EvolveOptions::default())
}

/// Pick the simulated levels for an initial state: the default selection,
/// widened until it holds all of `rho0`.
pub(crate) fn model_for_state(p: &SystemParams, rho0: &CMat, numerics: &Numerics) -> Result<DrivenModel> {
    let system = DressedSystem::new(p, numerics.retained_fraction)?;
    if !(p.kappa > 0.0 || p.gamma_q > 0.0) {
        let full = Numerics {
            dynamics_levels: Some(p.dim()),
            ..numerics.clone()
        };
        return DrivenModel::from_system(&system, p, &full);
    }
    let base = DrivenModel::from_system(&system, p, numerics)?;
    let states = system.basis.states();
    let dressed = states.adjoint() * rho0 * states;
    let total: f64 = (0..dressed.nrows()).map(|i| dressed[(i, i)].re).sum();
    let mut kept: f64 = (0..base.levels()).map(|i| dressed[(i, i)].re).sum();
    let mut levels = base.levels();
    let retained = system.jumps.retained_levels();
    while total - kept > LEAKAGE_TOLERANCE && levels < retained {
        kept += dressed[(levels, levels)].re;
        levels += 1;
    }
    if total - kept > LEAKAGE_TOLERANCE {
        return Err(Error::param(
            "rho0",
            format!("weight {:e} lies in undamped levels; raise n_max", total - kept),
        ));
    }
    if levels == base.levels() {
        return Ok(base);
    }
    let wider = Numerics {
        dynamics_levels: Some(levels),
        ..numerics.clone()
    };
    DrivenModel::from_system(&system, p, &wider)
}

/// Integrate the master equation from `rho0`, checking the density-matrix
/// invariants at every output time.
pub fn lindblad_evolve_with(
    p: &SystemParams,
    rho0: &DensityMatrix,
    t_end: f64,
    dt_out: f64,
    opts: &EvolveOptions,
) -> Result<EvolutionResult> {
    p.validate()?;
    opts.numerics.validate()?;
    if rho0.dim() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            found: rho0.dim(),
        });
    }
    rho0.check(0.0)?;
    check_observables(&opts.observables, p.dim())?;
    let grid = output_grid(t_end, dt_out)?;

    let model = model_for_state(p, rho0.matrix(), &opts.numerics)?;
    let mut rho = model.from_bare_density(rho0.matrix());
    let tr = trace(&rho);
    rho /= tr;
    let dressed_obs: Vec<CMat> = opts
        .observables
        .iter()
        .map(|(_, o)| model.from_bare_density(o.matrix()))
        .collect();

    let mut prop = model.lindblad_propagator();
    // whole-period hops pay off once the run is much longer than building the map
    let periods = t_end / model.period();
    let n = (model.levels() * model.levels()) as f64;
    let use_map = periods > 4.0 * n;

    let mut populations = Vec::with_capacity(grid.len());
    let mut obs: Vec<Vec<f64>> = vec![Vec::with_capacity(grid.len()); dressed_obs.len()];
    let mut t_prev = 0.0;
    let mut worst = Invariants {
        max_drift: 0.0,
        min_eigenvalue: Some(f64::INFINITY),
    };
    for &t in &grid {
        rho = if use_map {
            prop.advance(&rho, t_prev, t)
        } else {
            prop.evolve(&rho, t_prev, t)
        };
        t_prev = t;
        let (drift, min_eig) = density_invariants(&rho, t)?;
        worst.max_drift = worst.max_drift.max(drift);
        worst.min_eigenvalue = worst.min_eigenvalue.map(|m| m.min(min_eig));
        populations.push(model.bare_populations(&rho));
        for (o, series) in dressed_obs.iter().zip(obs.iter_mut()) {
            series.push(trace_product(&rho, o).re);
        }
    }
    Ok(EvolutionResult {
        times: grid,
        populations,
        observables: named(&opts.observables, obs),
        final_state: FinalState::Mixed(DensityMatrix(model.to_bare_density(&rho))),
        invariants: worst,
    })
}

/// Projector onto the dressed eigenstate of H̃_R closest to `|n, q⟩`.
pub fn dressed_projector(p: &SystemParams, n: usize, q: Qubit) -> Result<DensityMatrix> {
    let system = DressedSystem::new(p, crate::dressed::DEFAULT_RETAINED_FRACTION)?;
    let b = basis_index(n, q);
    if b >= p.dim() {
        return Err(Error::param("n", "outside the truncated space"));
    }
    let states = system.basis.states();
    let best = (0..states.ncols())
        .max_by(|&i, &j| states[(b, i)].norm().total_cmp(&states[(b, j)].norm()))
        .unwrap();
    let v = states.column(best).into_owned();
    Ok(DensityMatrix(&v * v.adjoint()))
}

/// ⟨H̃_R⟩ for a bare-basis state.
pub fn rabi_energy(p: &SystemParams, psi: &StateVector) -> Result<f64> {
    let h = crate::hilbert::build_rabi_hamiltonian(p)?;
    let v = psi.amplitudes();
    Ok(v.dotc(&(h.matrix() * v)).re)
}
