//! Periodic steady state of the driven, damped model.
//!
//! Two independent routes are available. Harmonic balance expands
//! ρ(t) = Σ_k ρ_k e^{ikω_L t} and solves the coupled equations for the
//! Fourier components with a matrix continued fraction; the period average
//! is ρ_0. The period-map route relaxes the dressed ground state with powers
//! of the one-period propagator until the period-averaged ⟨X†X⟩ stops
//! changing.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::evolution::{check_density, DensityMatrix};
use crate::hilbert::{SystemParams, C64, ONE};
use crate::linalg::{hermitize, superop_sandwich, trace, trace_product, unvectorize, vectorize, CMat};
use crate::model::DrivenModel;
use crate::propagate::LindbladPropagator;
use crate::settings::{Numerics, SteadyStateMethod};

/// Absolute floor below which ⟨X†X⟩ changes count as converged.
const CHANGE_FLOOR: f64 = 1e-14;
/// Largest squaring depth tried by the period-map route.
const MAX_DOUBLINGS: usize = 48;

#[derive(Clone, Debug)]
enum Repr {
    /// ρ_0, ρ_1, …, ρ_H; negative harmonics are the adjoints.
    Harmonics(Vec<CMat>),
    /// State at phase zero plus the propagator that produced it.
    PhaseZero(CMat, Box<LindbladPropagator>),
}

/// Periodic steady state in the dressed basis of a [`DrivenModel`].
#[derive(Clone, Debug)]
pub struct PeriodicState {
    model: DrivenModel,
    repr: Repr,
    average: CMat,
    pub method: SteadyStateMethod,
    /// Drive periods of relaxation (period-map route only).
    pub periods: u64,
    /// Final relative change of the period-averaged ⟨X†X⟩ (period-map
    /// route) or norm of the highest kept harmonic (harmonic balance).
    pub residual: f64,
}

impl PeriodicState {
    pub fn compute(model: &DrivenModel) -> Result<Self> {
        Self::compute_with(model, model.numerics().steady_state)
    }

    pub fn compute_with(model: &DrivenModel, method: SteadyStateMethod) -> Result<Self> {
        let p = model.params();
        if !(p.kappa > 0.0 || p.gamma_q > 0.0) {
            return Err(Error::param("kappa", "a steady state needs kappa > 0 or gamma > 0"));
        }
        let state = match method {
            SteadyStateMethod::HarmonicBalance => harmonic_balance(model)?,
            SteadyStateMethod::PeriodMap => relax(model)?,
        };
        check_density(&state.average, f64::NAN)?;
        Ok(state)
    }

    pub fn model(&self) -> &DrivenModel {
        &self.model
    }

    /// Period-averaged state, dressed basis.
    pub fn average(&self) -> &CMat {
        &self.average
    }

    /// Period-averaged state on the bare basis.
    pub fn average_density(&self) -> DensityMatrix {
        DensityMatrix::from_raw(self.model.to_bare_density(&self.average))
    }

    /// ρ(t) on the steady orbit, dressed basis.
    pub fn state_at(&self, t: f64) -> CMat {
        match &self.repr {
            Repr::Harmonics(rho) => {
                let w = self.model.params().omega_l;
                let mut out = rho[0].clone();
                for (k, r) in rho.iter().enumerate().skip(1) {
                    let ph = C64::from_polar(1.0, k as f64 * w * t);
                    let term = r * ph;
                    out += &term + term.adjoint();
                }
                hermitize(&out)
            }
            Repr::PhaseZero(rho, prop) => {
                let period = prop.period();
                let phase = t.rem_euclid(period);
                hermitize(&prop.evolve(rho, 0.0, phase))
            }
        }
    }

    /// Re Tr(ρ̄ O) for a dressed-basis operator.
    pub fn expectation(&self, op: &CMat) -> f64 {
        trace_product(&self.average, op).re
    }

    /// Period-averaged ⟨X†X⟩.
    pub fn photon_flux(&self) -> f64 {
        let x = self.model.cavity();
        self.expectation(&(x.adjoint() * x))
    }
}

pub fn periodic_steady_state(p: &SystemParams) -> Result<DensityMatrix> {
    Ok(periodic_steady_state_with(p, &Numerics::default())?.average_density())
}

pub fn periodic_steady_state_with(p: &SystemParams, numerics: &Numerics) -> Result<PeriodicState> {
    let model = DrivenModel::new(p, numerics)?;
    PeriodicState::compute(&model)
}

/// Static Liouvillian −i[H0,·] + κL[X] + γL[D] and the drive superoperator
/// −i[V,·]/2 (V includes Ω).
fn superoperators(model: &DrivenModel) -> (CMat, CMat) {
    let k = model.levels();
    let id = CMat::identity(k, k);
    let minus_i = C64::new(0.0, -1.0);
    let h0 = model.static_hamiltonian();
    let mut l0 = (superop_sandwich(&h0, &id) - superop_sandwich(&id, &h0)) * minus_i;
    let p = model.params();
    for (c, rate) in [(model.cavity(), p.kappa), (model.qubit(), p.gamma_q)] {
        if rate == 0.0 {
            continue;
        }
        let cd = c.adjoint();
        let cdc = &cd * c;
        let d = superop_sandwich(c, &cd)
            - (superop_sandwich(&cdc, &id) + superop_sandwich(&id, &cdc)) * C64::new(0.5, 0.0);
        l0 += d * C64::new(rate, 0.0);
    }
    let v = model.drive_operator() * C64::new(p.drive, 0.0);
    let b = (superop_sandwich(&v, &id) - superop_sandwich(&id, &v)) * (minus_i * 0.5);
    (l0, b)
}

/// The superoperator ρ ↦ (S ρ†)†.
fn conjugate_superop(s: &CMat, k: usize) -> CMat {
    let n = k * k;
    CMat::from_fn(n, n, |row, col| {
        let (i, j) = (row % k, row / k);
        let (a, b) = (col % k, col / k);
        s[(j + k * i, b + k * a)].conj()
    })
}

fn harmonic_balance(model: &DrivenModel) -> Result<PeriodicState> {
    let k = model.levels();
    let n = k * k;
    let harmonics = model.numerics().harmonics;
    let w = model.params().omega_l;
    let (l0, b) = superoperators(model);

    // S_h maps ρ_{h-1} to ρ_h; S_{H+1} = 0.
    let mut s_next = CMat::zeros(n, n);
    let mut ladder = vec![CMat::zeros(n, n); harmonics + 1];
    for h in (1..=harmonics).rev() {
        let mut a = &l0 + &b * &s_next;
        for i in 0..n {
            a[(i, i)] -= C64::new(0.0, h as f64 * w);
        }
        let lu = a.lu();
        let s = lu
            .solve(&(-&b))
            .ok_or_else(|| Error::Integration(format!("singular continued fraction at harmonic {h}")))?;
        ladder[h] = s.clone();
        s_next = s;
    }

    let mut m = l0.clone();
    if harmonics > 0 {
        let s1 = &ladder[1];
        m += &b * s1 + &b * conjugate_superop(s1, k);
    }
    // replace the first equation by Tr ρ = 1
    for col in 0..n {
        m[(0, col)] = C64::new(0.0, 0.0);
    }
    for i in 0..k {
        m[(0, i + k * i)] = ONE;
    }
    let mut rhs = DVector::zeros(n);
    rhs[0] = ONE;
    let v0 = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Integration("steady-state system is singular".into()))?;
    let rho0 = hermitize(&unvectorize(&v0, k));
    let tr = trace(&rho0);
    let rho0 = rho0 / tr;

    let mut rho = vec![rho0.clone()];
    let mut v = vectorize(&rho0);
    for s in ladder.iter().skip(1) {
        v = s * v;
        rho.push(unvectorize(&v, k));
    }
    let residual = rho.last().map_or(0.0, |r| if rho.len() > 1 { r.norm() } else { 0.0 });
    Ok(PeriodicState {
        model: model.clone(),
        average: rho0,
        repr: Repr::Harmonics(rho),
        method: SteadyStateMethod::HarmonicBalance,
        periods: 0,
        residual,
    })
}

fn relax(model: &DrivenModel) -> Result<PeriodicState> {
    let numerics = model.numerics();
    let k = model.levels();
    let mut prop = model.lindblad_propagator();
    let number = {
        let x = model.cavity();
        x.adjoint() * x
    };
    let avg = prop.average_superop().clone();
    let flux = |v: &nalgebra::DVector<C64>| trace_product(&unvectorize(&(&avg * v), k), &number).re;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(CHANGE_FLOOR);

    let mut v = vectorize(&model.ground_density());
    let mut total: u64 = 0;
    let mut change = f64::INFINITY;
    // high powers of the map amplify round-off in the trace; compare
    // normalized states
    let normalize = |v: nalgebra::DVector<C64>| {
        let tr = trace(&unvectorize(&v, k));
        v / tr
    };
    for j in 0..MAX_DOUBLINGS {
        let next = normalize(prop.period_power(j) * &v);
        total += 1u64 << j;
        let after = normalize(prop.period_power(0) * &next);
        let (f_prev, f_next, f_after) = (flux(&v), flux(&next), flux(&after));
        let successive = if (f_after - f_next).abs() < CHANGE_FLOOR {
            0.0
        } else {
            rel(f_after, f_next)
        };
        let jump = if (f_next - f_prev).abs() < CHANGE_FLOOR {
            0.0
        } else {
            rel(f_next, f_prev)
        };
        change = successive.max(jump);
        v = next;
        if change < numerics.steady_tolerance {
            let start = unvectorize(&v, k);
            let tr = trace(&start);
            let start = hermitize(&(start / tr));
            let average = hermitize(&unvectorize(&(&avg * vectorize(&start)), k));
            return Ok(PeriodicState {
                model: model.clone(),
                average,
                repr: Repr::PhaseZero(start, Box::new(prop)),
                method: SteadyStateMethod::PeriodMap,
                periods: total,
                residual: change,
            });
        }
        if total >= numerics.max_periods {
            break;
        }
    }
    Err(Error::SteadyStateNotConverged { periods: total, change })
}
