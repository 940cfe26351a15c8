//! Equal-time correlations, excitation spectra and two-time bundle
//! correlations from the periodic steady state.

use std::io::Write;

use serde::Serialize;

use crate::dressed::{DressedSystem, JumpOperators};
use crate::error::{Error, Result};
use crate::evolution::DensityMatrix;
use crate::hilbert::SystemParams;
use crate::linalg::{trace_product, CMat};
use crate::model::DrivenModel;
use crate::parallel::{par_map, Execution};
use crate::settings::Numerics;
use crate::steady::PeriodicState;

/// Smallest ⟨X†X⟩ for which g⁽ⁿ⁾ is reported.
pub const PHOTON_FLOOR: f64 = 1e-12;
/// Smallest ⟨X†ˢXˢ⟩ for which a two-time correlation is reported.
pub const CORRELATION_FLOOR: f64 = 1e-20;
/// Largest tolerated |Im|/|Re| of a correlation value.
const IMAGINARY_RESIDUE: f64 = 1e-10;

fn power(x: &CMat, n: u32) -> CMat {
    let mut out = CMat::identity(x.nrows(), x.ncols());
    for _ in 0..n {
        out = x * out;
    }
    out
}

/// Tr(ρ X†ⁿXⁿ) / Tr(ρ X†X)ⁿ for any basis in which `rho` and `x` agree.
pub(crate) fn g_n_matrix(rho: &CMat, x: &CMat, n: u32) -> Result<f64> {
    if n < 2 {
        return Err(Error::param("n", "correlation order must be >= 2"));
    }
    let xn = power(x, n);
    let num = trace_product(rho, &(xn.adjoint() * &xn));
    let den = trace_product(rho, &(x.adjoint() * x));
    for z in [num, den] {
        if z.im.abs() > IMAGINARY_RESIDUE * z.re.abs().max(PHOTON_FLOOR) {
            return Err(Error::Integration(format!("complex expectation value {z}")));
        }
    }
    if !(den.re > PHOTON_FLOOR) {
        return Err(Error::DenominatorUnderflow { value: den.re });
    }
    Ok(num.re / den.re.powi(n as i32))
}

/// g⁽ⁿ⁾₁ = ⟨X†ⁿXⁿ⟩/⟨X†X⟩ⁿ for a bare-basis state.
pub fn g_n_equal_time(rho_bar: &DensityMatrix, jumps: &JumpOperators, n: u32) -> Result<f64> {
    if jumps.cavity.dim() != rho_bar.dim() {
        return Err(Error::DimensionMismatch {
            expected: rho_bar.dim(),
            found: jumps.cavity.dim(),
        });
    }
    g_n_matrix(rho_bar.matrix(), jumps.cavity.matrix(), n)
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumPoint {
    /// Δ_q/ω_r.
    pub detuning: f64,
    /// Period-averaged ⟨X†X⟩.
    pub photon: Option<f64>,
    pub g2: Option<f64>,
    pub g3: Option<f64>,
    pub g4: Option<f64>,
    pub flag: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumResult {
    pub points: Vec<SpectrumPoint>,
}

impl SpectrumResult {
    pub fn detunings(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.detuning).collect()
    }

    pub fn photon(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.photon).collect()
    }

    /// g⁽ⁿ⁾₁ series for n in 2..=4.
    pub fn g_n(&self, n: u32) -> Vec<Option<f64>> {
        self.points
            .iter()
            .map(|p| match n {
                2 => p.g2,
                3 => p.g3,
                4 => p.g4,
                _ => None,
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "detuning,photon,g2,g3,g4,flag")?;
        for p in &self.points {
            writeln!(
                w,
                "{:.10e},{},{},{},{},{}",
                p.detuning,
                fmt_opt(p.photon),
                fmt_opt(p.g2),
                fmt_opt(p.g3),
                fmt_opt(p.g4),
                p.flag.as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.10e}"))
}

pub(crate) fn check_grid(name: &'static str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::param(name, "grid is empty"));
    }
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(name, "grid has non-finite entries"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::param(name, "grid must be strictly increasing"));
    }
    Ok(())
}

pub fn excitation_spectrum(p: &SystemParams, dq_grid: &[f64]) -> Result<SpectrumResult> {
    excitation_spectrum_with(p, dq_grid, &Numerics::default(), Execution::default())
}

/// Steady ⟨X†X⟩ and g⁽²⁻⁴⁾₁ at `ω_L = ω_q + Δ_q` for each Δ_q/ω_r in the grid.
/// Points that fail are flagged and the sweep carries on.
pub fn excitation_spectrum_with(
    p: &SystemParams,
    dq_grid: &[f64],
    numerics: &Numerics,
    exec: Execution,
) -> Result<SpectrumResult> {
    p.validate()?;
    numerics.validate()?;
    check_grid("dq_grid", dq_grid)?;
    if !(p.kappa > 0.0 && p.gamma_q > 0.0) {
        return Err(Error::param("kappa", "spectra need kappa > 0 and gamma > 0"));
    }
    let system = DressedSystem::new(p, numerics.retained_fraction)?;
    let points = par_map(dq_grid, exec, |&dq| {
        let q = p.clone().with_detuning(dq * p.omega_r);
        let state = DrivenModel::from_system(&system, &q, numerics).and_then(|m| PeriodicState::compute(&m));
        match state {
            Ok(s) => {
                let x = s.model().cavity();
                let mut flags = Vec::new();
                let mut g = [None; 3];
                for (slot, n) in g.iter_mut().zip(2..=4) {
                    match g_n_matrix(s.average(), x, n) {
                        Ok(v) => *slot = Some(v),
                        Err(e) => flags.push(format!("g{n}: {e}")),
                    }
                }
                SpectrumPoint {
                    detuning: dq,
                    photon: Some(s.photon_flux()),
                    g2: g[0],
                    g3: g[1],
                    g4: g[2],
                    flag: (!flags.is_empty()).then(|| flags.join("; ").replace(',', ";")),
                }
            }
            Err(e) => SpectrumPoint {
                detuning: dq,
                photon: None,
                g2: None,
                g3: None,
                g4: None,
                flag: Some(e.to_string().replace(',', ";")),
            },
        }
    });
    Ok(SpectrumResult { points })
}

/// Two-time correlation curve on a delay grid.
#[derive(Clone, Debug, Serialize)]
pub struct CorrelationCurve {
    /// Bundle size s: the curve correlates Xˢ with itself.
    pub order: u32,
    pub taus: Vec<f64>,
    pub values: Vec<Option<f64>>,
    /// Statistical error bars, for estimators built from counts.
    pub errors: Option<Vec<f64>>,
    pub n_phase: usize,
    pub flags: Vec<Option<String>>,
}

impl CorrelationCurve {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "tau,g,error,flag")?;
        for (i, tau) in self.taus.iter().enumerate() {
            let err = self.errors.as_ref().map(|e| e[i]);
            writeln!(
                w,
                "{:.10e},{},{},{}",
                tau,
                fmt_opt(self.values[i]),
                fmt_opt(err),
                self.flags[i].as_deref().unwrap_or("")
            )?;
        }
        Ok(())
    }
}

/// Shortest delay reported for two-time correlations, 1/κ.
pub fn tau_min(p: &SystemParams) -> f64 {
    1.0 / p.kappa
}

pub fn g2_bundle_tau(p: &SystemParams, tau_grid: &[f64]) -> Result<CorrelationCurve> {
    g2_tau_with(p, 2, tau_grid, &Numerics::default())
}

pub fn g2_photon_tau(p: &SystemParams, tau_grid: &[f64]) -> Result<CorrelationCurve> {
    g2_tau_with(p, 1, tau_grid, &Numerics::default())
}

/// ⟨X†ˢ(0)X†ˢ(τ)Xˢ(τ)Xˢ(0)⟩ / ⟨X†ˢXˢ⟩² by quantum regression, averaged over
/// `n_phase` start phases of the drive period.
pub fn g2_tau_with(p: &SystemParams, s: u32, tau_grid: &[f64], numerics: &Numerics) -> Result<CorrelationCurve> {
    p.validate()?;
    numerics.validate()?;
    if s == 0 {
        return Err(Error::param("order", "bundle size must be >= 1"));
    }
    if !(p.kappa > 0.0) {
        return Err(Error::param("kappa", "two-time correlations need kappa > 0"));
    }
    check_grid("tau_grid", tau_grid)?;
    let t_min = tau_min(p);
    if tau_grid[0] < t_min * (1.0 - 1e-9) {
        return Err(Error::param(
            "tau_grid",
            format!("delays below 1/kappa = {t_min} probe inside a bundle"),
        ));
    }
    let n_phase = numerics.n_phase;
    let model = DrivenModel::new(p, numerics)?;
    let state = PeriodicState::compute(&model)?;
    let xs = power(model.cavity(), s);
    let obs = xs.adjoint() * &xs;
    let mean = trace_product(state.average(), &obs).re;
    if !(mean > CORRELATION_FLOOR) {
        let flag = Some(format!("denominator underflow ({mean:e})"));
        return Ok(CorrelationCurve {
            order: s,
            taus: tau_grid.to_vec(),
            values: vec![None; tau_grid.len()],
            errors: None,
            n_phase,
            flags: vec![flag; tau_grid.len()],
        });
    }

    let mut prop = model.lindblad_propagator();
    let period = model.period();
    let mut numerators = vec![0.0; tau_grid.len()];
    for j in 0..n_phase {
        let t0 = j as f64 * period / n_phase as f64;
        let rho = state.state_at(t0);
        let mut cond = &xs * rho * xs.adjoint();
        let mut now = t0;
        for (i, tau) in tau_grid.iter().enumerate() {
            cond = prop.advance(&cond, now, t0 + tau);
            now = t0 + tau;
            numerators[i] += trace_product(&cond, &obs).re / n_phase as f64;
        }
    }
    Ok(CorrelationCurve {
        order: s,
        taus: tau_grid.to_vec(),
        values: numerators.iter().map(|n| Some(n / (mean * mean))).collect(),
        errors: None,
        n_phase,
        flags: vec![None; tau_grid.len()],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{basis_index, Qubit, C64};
    use std::f64::consts::PI;

    fn decoupled(n_max: usize) -> (SystemParams, DressedSystem) {
        let p = SystemParams {
            lambda: 0.0,
            n_max,
            ..SystemParams::reference(PI / 2.0)
        };
        let s = DressedSystem::new(&p, 1.0).unwrap();
        (p, s)
    }

    #[test]
    fn fock_two_gives_one_half() {
        let (p, s) = decoupled(6);
        let mut m = CMat::zeros(p.dim(), p.dim());
        let b = basis_index(2, Qubit::Ground);
        m[(b, b)] = C64::new(1.0, 0.0);
        let rho = DensityMatrix::new(m).unwrap();
        let g2 = g_n_equal_time(&rho, &s.jumps, 2).unwrap();
        assert!((g2 - 0.5).abs() < 1e-12);
        assert!(g_n_equal_time(&rho, &s.jumps, 3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn coherent_state_is_poissonian() {
        let (p, s) = decoupled(30);
        let alpha: f64 = 0.8;
        let mut v = nalgebra::DVector::zeros(p.dim());
        let mut c = (-alpha * alpha / 2.0).exp();
        for n in 0..=p.n_max {
            v[basis_index(n, Qubit::Ground)] = C64::new(c, 0.0);
            c *= alpha / ((n + 1) as f64).sqrt();
        }
        let rho = DensityMatrix::new(&v * v.adjoint()).unwrap();
        for n in 2..=4 {
            let g = g_n_equal_time(&rho, &s.jumps, n).unwrap();
            assert!((g - 1.0).abs() < 1e-8, "n={n}: {g}");
        }
    }

    #[test]
    fn vacuum_underflows() {
        let (p, s) = decoupled(4);
        let mut m = CMat::zeros(p.dim(), p.dim());
        m[(0, 0)] = C64::new(1.0, 0.0);
        let rho = DensityMatrix::new(m).unwrap();
        assert!(matches!(
            g_n_equal_time(&rho, &s.jumps, 2),
            Err(Error::DenominatorUnderflow { .. })
        ));
    }

    #[test]
    fn grid_validation() {
        let p = SystemParams::reference(PI / 2.0);
        assert!(excitation_spectrum(&p, &[]).is_err());
        assert!(excitation_spectrum(&p, &[1.0, 0.5]).is_err());
        assert!(g2_bundle_tau(&p, &[10.0]).is_err());
    }

    #[test]
    fn undriven_spectrum_is_flat_zero() {
        let p = SystemParams {
            drive: 0.0,
            n_max: 8,
            ..SystemParams::reference(PI / 2.0)
        };
        let r = excitation_spectrum(&p, &[1.0, 2.0]).unwrap();
        for pt in &r.points {
            assert!(pt.photon.unwrap().abs() < 1e-12);
            assert!(pt.g2.is_none() && pt.flag.is_some());
        }
    }

    #[test]
    fn undriven_vacuum_curve_is_flagged() {
        let p = SystemParams {
            lambda: 0.0,
            drive: 0.0,
            n_max: 4,
            ..SystemParams::reference(PI / 2.0)
        };
        let c = g2_photon_tau(&p, &[tau_min(&p), 2.0 * tau_min(&p)]).unwrap();
        assert!(c.values.iter().all(Option::is_none));
        assert!(c.flags.iter().all(Option::is_some));
    }
}
