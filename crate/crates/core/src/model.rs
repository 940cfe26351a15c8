//! The driven, damped model restricted to the lowest dressed levels.
//!
//! Dissipative dynamics run in the eigenbasis of H̃_R, keeping the levels
//! that the drive can reach (plus a margin for virtual couplings). There
//! the static Hamiltonian is diagonal, `X` and `D` are upper triangular, and
//! the drive is `Ω cos(ω_L t) ⟨ψ_n|σ_x|ψ_m⟩`.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::dressed::DressedSystem;
use crate::error::{Error, Result};
use crate::hilbert::{SystemParams, C64};
use crate::linalg::{CMat, CVec};
use crate::propagate::{LindbladPropagator, PeriodStepper};
use crate::settings::Numerics;

#[derive(Clone, Debug)]
pub struct DrivenModel {
    params: SystemParams,
    numerics: Numerics,
    energies: Vec<f64>,
    /// σ_x in the dressed basis.
    drive_op: CMat,
    cavity: CMat,
    qubit: CMat,
    /// Bare-basis columns of the kept dressed states.
    embedding: CMat,
}

impl DrivenModel {
    pub fn new(p: &SystemParams, numerics: &Numerics) -> Result<Self> {
        numerics.validate()?;
        let system = DressedSystem::new(p, numerics.retained_fraction)?;
        Self::from_system(&system, p, numerics)
    }

    /// Build from an already diagonalized system. `p` may differ from the
    /// parameters `system` was built with only in drive and damping.
    pub fn from_system(system: &DressedSystem, p: &SystemParams, numerics: &Numerics) -> Result<Self> {
        p.validate()?;
        numerics.validate()?;
        if system.basis.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: system.basis.dim(),
            });
        }
        let basis = &system.basis;
        let energies = basis.energies();
        let retained = system.jumps.retained_levels();

        let levels = match numerics.dynamics_levels {
            Some(k) => k.clamp(1, basis.dim()),
            None => {
                let cut = energies[0] + p.omega_l + numerics.level_margin * p.omega_r;
                let mut k = energies.iter().take_while(|&&e| e <= cut).count().max(2);
                // never split a degenerate subspace
                for r in basis.degenerate_clusters() {
                    if r.start < k && r.end > k {
                        k = r.end;
                    }
                }
                k.min(retained.max(2))
            }
        };

        let kept = |m: &CMat| m.view((0, 0), (levels, levels)).into_owned();
        let drive_full = basis.to_dressed(&system.ops.qubit.sigma_x);
        Ok(Self {
            params: p.clone(),
            numerics: numerics.clone(),
            energies: energies[..levels].to_vec(),
            drive_op: kept(&drive_full),
            cavity: kept(system.jumps.cavity_dressed()),
            qubit: kept(system.jumps.qubit_dressed()),
            embedding: basis.states().columns(0, levels).into_owned(),
        })
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    pub fn numerics(&self) -> &Numerics {
        &self.numerics
    }

    /// Number of dressed levels in the dynamics.
    pub fn levels(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `X` restricted to the kept levels.
    pub fn cavity(&self) -> &CMat {
        &self.cavity
    }

    pub fn qubit(&self) -> &CMat {
        &self.qubit
    }

    pub fn drive_operator(&self) -> &CMat {
        &self.drive_op
    }

    /// Stepping period: the drive period, or 2π/ω_r for a static drive.
    pub fn period(&self) -> f64 {
        self.params
            .drive_period()
            .unwrap_or(2.0 * PI / self.params.omega_r)
    }

    /// diag(E) shifted to zero mean; the shift is a global phase.
    pub fn static_hamiltonian(&self) -> CMat {
        let mean = self.energies.iter().sum::<f64>() / self.levels() as f64;
        CMat::from_diagonal(&DVector::from_iterator(
            self.levels(),
            self.energies.iter().map(|e| C64::new(e - mean, 0.0)),
        ))
    }

    /// Γ = κX†X + γD†D.
    pub fn decay_operator(&self) -> CMat {
        let p = &self.params;
        self.cavity.adjoint() * &self.cavity * C64::new(p.kappa, 0.0)
            + self.qubit.adjoint() * &self.qubit * C64::new(p.gamma_q, 0.0)
    }

    pub fn is_dissipative(&self) -> bool {
        self.params.kappa > 0.0 || self.params.gamma_q > 0.0
    }

    /// H(t) in the dressed basis (unshifted energies).
    pub fn hamiltonian(&self, t: f64) -> CMat {
        let drive = self.params.drive * (self.params.omega_l * t).cos();
        let mut h = &self.drive_op * C64::new(drive, 0.0);
        for (i, e) in self.energies.iter().enumerate() {
            h[(i, i)] += C64::new(*e, 0.0);
        }
        h
    }

    pub fn ground_vector(&self) -> CVec {
        let mut v = CVec::zeros(self.levels());
        v[0] = C64::new(1.0, 0.0);
        v
    }

    pub fn ground_density(&self) -> CMat {
        let mut m = CMat::zeros(self.levels(), self.levels());
        m[(0, 0)] = C64::new(1.0, 0.0);
        m
    }

    pub fn bare_dim(&self) -> usize {
        self.embedding.nrows()
    }

    pub fn embedding(&self) -> &CMat {
        &self.embedding
    }

    pub fn to_bare_vector(&self, psi: &CVec) -> CVec {
        &self.embedding * psi
    }

    pub fn from_bare_vector(&self, psi: &CVec) -> CVec {
        self.embedding.adjoint() * psi
    }

    pub fn to_bare_density(&self, rho: &CMat) -> CMat {
        &self.embedding * rho * self.embedding.adjoint()
    }

    pub fn from_bare_density(&self, rho: &CMat) -> CMat {
        self.embedding.adjoint() * rho * &self.embedding
    }

    /// Bare populations `P_{n,l}` of a dressed density matrix, indexed like
    /// the bare basis.
    pub fn bare_populations(&self, rho: &CMat) -> Vec<f64> {
        let b = self.to_bare_density(rho);
        (0..b.nrows()).map(|i| b[(i, i)].re).collect()
    }

    /// Bare populations of a (not necessarily normalized) dressed vector.
    pub fn bare_populations_vector(&self, psi: &CVec) -> Vec<f64> {
        let norm = psi.norm_squared();
        self.to_bare_vector(psi)
            .iter()
            .map(|z| z.norm_sqr() / norm)
            .collect()
    }

    /// Drive-only stepper (no damping).
    pub fn unitary_stepper(&self) -> PeriodStepper {
        PeriodStepper::new(
            self.static_hamiltonian(),
            &self.drive_op * C64::new(self.params.drive, 0.0),
            None,
            self.params.omega_l,
            self.period(),
            self.numerics.substeps_per_period,
        )
    }

    /// Stepper for the non-Hermitian no-jump generator H(t) − (i/2)Γ.
    pub fn no_jump_stepper(&self) -> PeriodStepper {
        let decay = self.is_dissipative().then(|| self.decay_operator());
        PeriodStepper::new(
            self.static_hamiltonian(),
            &self.drive_op * C64::new(self.params.drive, 0.0),
            decay,
            self.params.omega_l,
            self.period(),
            self.numerics.substeps_per_period,
        )
    }

    pub fn lindblad_propagator(&self) -> LindbladPropagator {
        let p = &self.params;
        let mut channels = Vec::new();
        if p.kappa > 0.0 {
            channels.push(&self.cavity * C64::new(p.kappa.sqrt(), 0.0));
        }
        if p.gamma_q > 0.0 {
            channels.push(&self.qubit * C64::new(p.gamma_q.sqrt(), 0.0));
        }
        LindbladPropagator::new(self.unitary_stepper(), channels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn level_selection_tracks_drive_frequency() {
        let p = SystemParams::reference(PI / 2.0);
        let m = DrivenModel::new(&p, &Numerics::default()).unwrap();
        let e = m.energies();
        assert!(e.last().unwrap() - e[0] <= p.omega_l + 2.0 + 1e-12);
        // |2,e⟩-like level at E_0 + 7 must be inside
        assert!(m.levels() >= 12, "{}", m.levels());

        let far = p.clone().with_detuning(4.5);
        let m2 = DrivenModel::new(&far, &Numerics::default()).unwrap();
        assert!(m2.levels() > m.levels());
    }

    #[test]
    fn ground_state_is_dark_for_cavity() {
        let p = SystemParams::reference(PI / 6.0);
        let m = DrivenModel::new(&p, &Numerics::default()).unwrap();
        assert!((m.cavity() * m.ground_vector()).norm() < 1e-12);
        let pops = m.bare_populations(&m.ground_density());
        assert!((pops.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(pops[0] > 0.9);
    }
}
