//! Numerical knobs shared by the dynamics, correlation and trajectory code.

use serde::{Deserialize, Serialize};

use crate::dressed::DEFAULT_RETAINED_FRACTION;
use crate::error::{Error, Result};

/// How the periodic steady state is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteadyStateMethod {
    /// Solve for the Fourier components of ρ(t) directly.
    HarmonicBalance,
    /// Relax from the dressed ground state with the one-period map.
    PeriodMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Numerics {
    /// Integrator substeps per drive period.
    pub substeps_per_period: usize,
    /// Dynamics keep dressed levels with `E − E_0 ≤ ω_L + level_margin·ω_r`.
    pub level_margin: f64,
    /// Explicit number of dressed levels, overriding `level_margin`.
    pub dynamics_levels: Option<usize>,
    /// Fraction of the truncated spectrum entering the jump operators.
    pub retained_fraction: f64,
    /// Highest drive harmonic kept by the harmonic-balance solver.
    pub harmonics: usize,
    /// Start phases per drive period for two-time correlations.
    pub n_phase: usize,
    pub steady_state: SteadyStateMethod,
    /// Relative change of the period-averaged ⟨X†X⟩ that counts as converged.
    pub steady_tolerance: f64,
    /// Give up relaxing after this many drive periods.
    pub max_periods: u64,
}

impl Default for Numerics {
    fn default() -> Self {
        Self {
            substeps_per_period: 64,
            level_margin: 2.0,
            dynamics_levels: None,
            retained_fraction: DEFAULT_RETAINED_FRACTION,
            harmonics: 5,
            n_phase: 8,
            steady_state: SteadyStateMethod::HarmonicBalance,
            steady_tolerance: 1e-6,
            max_periods: 1 << 26,
        }
    }
}

impl Numerics {
    pub fn validate(&self) -> Result<()> {
        if self.substeps_per_period < 2 {
            return Err(Error::param("substeps", "need at least 2 substeps per period"));
        }
        if !(self.retained_fraction > 0.0 && self.retained_fraction <= 1.0) {
            return Err(Error::param("retained_fraction", "must lie in (0, 1]"));
        }
        if self.n_phase == 0 {
            return Err(Error::param("n_phase", "must be >= 1"));
        }
        if !(self.level_margin.is_finite() && self.level_margin >= 0.0) {
            return Err(Error::param("level_margin", "must be finite and >= 0"));
        }
        if !(self.steady_tolerance > 0.0) {
            return Err(Error::param("steady_tolerance", "must be > 0"));
        }
        Ok(())
    }
}
