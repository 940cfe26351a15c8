//! Truncated qubit ⊗ Fock space, bare operators and the extended Rabi model.
//!
//! Basis ordering is fixed: the product state `|n⟩ ⊗ |s⟩` lives at index
//! `2n + s` with `s = 0` for the ground state and `s = 1` for the excited
//! state. Always go through [`basis_index`] / [`basis_state`] rather than
//! redoing the arithmetic.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

/// Qubit basis label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Qubit {
    Ground,
    Excited,
}

impl Qubit {
    pub fn offset(self) -> usize {
        match self {
            Qubit::Ground => 0,
            Qubit::Excited => 1,
        }
    }

    pub fn label(self) -> char {
        match self {
            Qubit::Ground => 'g',
            Qubit::Excited => 'e',
        }
    }
}

/// Index of `|n, q⟩` in the product basis.
pub fn basis_index(n: usize, q: Qubit) -> usize {
    2 * n + q.offset()
}

/// Inverse of [`basis_index`].
pub fn basis_state(index: usize) -> (usize, Qubit) {
    let q = if index % 2 == 0 {
        Qubit::Ground
    } else {
        Qubit::Excited
    };
    (index / 2, q)
}

pub fn hilbert_dim(n_max: usize) -> usize {
    2 * (n_max + 1)
}

/// Column label `P_<n><g|e>` used in population tables.
pub fn population_label(index: usize) -> String {
    let (n, q) = basis_state(index);
    format!("P_{}{}", n, q.label())
}

/// Model constants. Frequencies and rates are angular and share one unit,
/// normally `omega_r = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_r: f64,
    pub omega_q: f64,
    /// Qubit-cavity coupling λ.
    pub lambda: f64,
    /// Mixing angle between longitudinal and transverse coupling, radians.
    pub theta: f64,
    /// Drive amplitude Ω.
    pub drive: f64,
    /// Drive frequency ω_L.
    pub omega_l: f64,
    pub kappa: f64,
    pub gamma_q: f64,
    /// Highest retained photon number.
    pub n_max: usize,
}

pub const DEFAULT_N_MAX: usize = 20;

impl Default for SystemParams {
    fn default() -> Self {
        Self::reference(PI / 2.0)
    }
}

impl SystemParams {
    /// Reference working point: ω_q = 5, λ = 0.2, Ω = 0.06, γ = 1e-4,
    /// κ = 20γ (all in units of ω_r), driven at the bare two-photon
    /// condition ω_L = ω_q + 2ω_r.
    pub fn reference(theta: f64) -> Self {
        Self {
            omega_r: 1.0,
            omega_q: 5.0,
            lambda: 0.2,
            theta,
            drive: 0.06,
            omega_l: 7.0,
            kappa: 2e-3,
            gamma_q: 1e-4,
            n_max: DEFAULT_N_MAX,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64); 7] = [
            ("omega_r", self.omega_r),
            ("omega_q", self.omega_q),
            ("lambda", self.lambda),
            ("drive", self.drive),
            ("omega_l", self.omega_l),
            ("kappa", self.kappa),
            ("gamma", self.gamma_q),
        ];
        for (name, value) in checks {
            if !value.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
            if value < 0.0 {
                return Err(Error::param(name, format!("must be >= 0, got {value}")));
            }
        }
        if !self.theta.is_finite() {
            return Err(Error::param("theta", "must be finite"));
        }
        if self.omega_r == 0.0 {
            return Err(Error::param("omega_r", "must be > 0"));
        }
        if self.n_max < 1 {
            return Err(Error::param("n_max", "must be >= 1"));
        }
        Ok(())
    }

    /// Δ_q = ω_L − ω_q.
    pub fn detuning(&self) -> f64 {
        self.omega_l - self.omega_q
    }

    pub fn with_detuning(mut self, detuning: f64) -> Self {
        self.omega_l = self.omega_q + detuning;
        self
    }

    pub fn dim(&self) -> usize {
        hilbert_dim(self.n_max)
    }

    /// 2π/ω_L, or `None` for a static drive.
    pub fn drive_period(&self) -> Option<f64> {
        (self.omega_l > 0.0).then(|| 2.0 * PI / self.omega_l)
    }
}

/// Dense complex square matrix on the product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorMatrix(DMatrix<C64>);

impl OperatorMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_matrix(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.0
    }

    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.0[(row, col)]
    }

    pub fn adjoint(&self) -> Self {
        Self(self.0.adjoint())
    }

    /// Largest entry magnitude.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |acc, z| acc.max(z.norm()))
    }

    /// ‖H − H†‖_max.
    pub fn hermiticity_defect(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for c in 0..n {
            for r in 0..=c {
                worst = worst.max((self.0[(r, c)] - self.0[(c, r)].conj()).norm());
            }
        }
        worst
    }

    pub fn commutator(&self, other: &Self) -> Self {
        Self(&self.0 * &other.0 - &other.0 * &self.0)
    }

    pub fn scale(&self, s: C64) -> Self {
        Self(&self.0 * s)
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.0 * v
    }
}

impl Add for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn add(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn sub(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 - &rhs.0)
    }
}

impl Mul for &OperatorMatrix {
    type Output = OperatorMatrix;
    fn mul(self, rhs: Self) -> OperatorMatrix {
        OperatorMatrix(&self.0 * &rhs.0)
    }
}

fn check_n_max(n_max: usize) -> Result<()> {
    if n_max < 1 {
        return Err(Error::param("n_max", "must be >= 1"));
    }
    Ok(())
}

/// Cavity ladder operators `(a, a†)` with `⟨n−1|a|n⟩ = √n`.
pub fn build_cavity_ops(n_max: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    check_n_max(n_max)?;
    let dim = hilbert_dim(n_max);
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..=n_max {
        let amp = C64::new((n as f64).sqrt(), 0.0);
        for q in [Qubit::Ground, Qubit::Excited] {
            a[(basis_index(n - 1, q), basis_index(n, q))] = amp;
        }
    }
    let a_dag = a.adjoint();
    Ok((OperatorMatrix(a), OperatorMatrix(a_dag)))
}

/// Qubit operators tensored with the Fock identity.
#[derive(Clone, Debug)]
pub struct QubitOps {
    /// σ = |g⟩⟨e|
    pub sigma: OperatorMatrix,
    pub sigma_x: OperatorMatrix,
    pub sigma_z: OperatorMatrix,
}

pub fn build_qubit_ops(n_max: usize) -> Result<QubitOps> {
    check_n_max(n_max)?;
    let dim = hilbert_dim(n_max);
    let mut sigma = DMatrix::zeros(dim, dim);
    let mut sigma_z = DMatrix::zeros(dim, dim);
    for n in 0..=n_max {
        let g = basis_index(n, Qubit::Ground);
        let e = basis_index(n, Qubit::Excited);
        sigma[(g, e)] = ONE;
        sigma_z[(g, g)] = -ONE;
        sigma_z[(e, e)] = ONE;
    }
    let sigma_x = &sigma + sigma.adjoint();
    Ok(QubitOps {
        sigma: OperatorMatrix(sigma),
        sigma_x: OperatorMatrix(sigma_x),
        sigma_z: OperatorMatrix(sigma_z),
    })
}

/// Π = exp{iπ[a†a + (σ_z + 1)/2]}: diagonal with entries (−1)^(n+s).
pub fn build_parity_operator(n_max: usize) -> Result<OperatorMatrix> {
    check_n_max(n_max)?;
    let dim = hilbert_dim(n_max);
    let mut pi = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let (n, q) = basis_state(i);
        let sign = if (n + q.offset()) % 2 == 0 { 1.0 } else { -1.0 };
        pi[(i, i)] = C64::new(sign, 0.0);
    }
    Ok(OperatorMatrix(pi))
}

/// H̃_R = (ω_q/2)σ_z + ω_r a†a + λ(cos θ σ_z − sin θ σ_x)(a† + a).
pub fn build_rabi_hamiltonian(p: &SystemParams) -> Result<OperatorMatrix> {
    p.validate()?;
    let ops = BareOperators::new(p.n_max)?;
    Ok(ops.rabi_hamiltonian(p))
}

/// H(t) = H̃_R + Ω cos(ω_L t) σ_x.
pub fn build_full_hamiltonian(p: &SystemParams, t: f64) -> Result<OperatorMatrix> {
    p.validate()?;
    let ops = BareOperators::new(p.n_max)?;
    let h = ops.rabi_hamiltonian(p);
    let drive = p.drive * (p.omega_l * t).cos();
    Ok(OperatorMatrix(h.0 + ops.qubit.sigma_x.0.scale(drive)))
}

/// Every bare operator for one truncation, built once and shared.
#[derive(Clone, Debug)]
pub struct BareOperators {
    pub n_max: usize,
    pub a: OperatorMatrix,
    pub a_dag: OperatorMatrix,
    pub qubit: QubitOps,
    pub parity: OperatorMatrix,
}

impl BareOperators {
    pub fn new(n_max: usize) -> Result<Self> {
        let (a, a_dag) = build_cavity_ops(n_max)?;
        Ok(Self {
            n_max,
            a,
            a_dag,
            qubit: build_qubit_ops(n_max)?,
            parity: build_parity_operator(n_max)?,
        })
    }

    pub fn dim(&self) -> usize {
        hilbert_dim(self.n_max)
    }

    /// a + a†
    pub fn field(&self) -> OperatorMatrix {
        &self.a + &self.a_dag
    }

    pub fn number(&self) -> OperatorMatrix {
        &self.a_dag * &self.a
    }

    pub fn rabi_hamiltonian(&self, p: &SystemParams) -> OperatorMatrix {
        let sz = self.qubit.sigma_z.matrix();
        let sx = self.qubit.sigma_x.matrix();
        let n = self.number();
        let field = self.field();
        let coupling = sz.scale(p.theta.cos()) - sx.scale(p.theta.sin());
        let mut h = sz.scale(0.5 * p.omega_q) + n.matrix().scale(p.omega_r);
        h += (coupling * field.matrix()).scale(p.lambda);
        // The product of commuting Hermitian factors is Hermitian; symmetrize
        // away the round-off so downstream checks see an exact Hermitian.
        let ht = h.adjoint();
        OperatorMatrix((h + ht).scale(0.5))
    }
}
