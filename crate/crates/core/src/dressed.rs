//! Dressed eigenbasis of the undriven Hamiltonian and the energy-ordered
//! jump operators built on it.
//!
//! The cavity jump operator keeps only the positive-frequency part of the
//! field quadrature in the dressed basis,
//! `X = Σ_{E_m > E_n} ⟨ψ_n|(a + a†)|ψ_m⟩ |ψ_n⟩⟨ψ_m|`, and the qubit operator
//! `D` is built the same way from `σ + σ†`. Pairs inside a degenerate
//! subspace contribute nothing, and the top of the truncated spectrum is
//! left out of both sums.

use std::io::Write;
use std::ops::Range;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::hilbert::{BareOperators, OperatorMatrix, SystemParams, C64};
use crate::linalg::{hermitian_eigen, CMat};

/// Default fraction of the truncated spectrum that enters `X` and `D`.
pub const DEFAULT_RETAINED_FRACTION: f64 = 0.8;

/// Relative shift above which a truncation is considered unconverged.
pub const TRUNCATION_TOLERANCE: f64 = 1e-6;

const HERMITIAN_TOLERANCE: f64 = 1e-10;

fn degeneracy_tolerance(energies: &[f64]) -> f64 {
    let scale = energies.iter().fold(1.0f64, |a, e| a.max(e.abs()));
    1e-10 * scale
}

/// Sorted spectrum, eigenvectors (as columns, bare basis) and parity labels.
#[derive(Clone, Debug)]
pub struct DressedBasis {
    energies: Vec<f64>,
    states: CMat,
    parities: Vec<f64>,
}

impl DressedBasis {
    pub fn dim(&self) -> usize {
        self.energies.len()
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// Eigenvectors as columns in the bare basis.
    pub fn states(&self) -> &CMat {
        &self.states
    }

    pub fn state(&self, index: usize) -> DVector<C64> {
        self.states.column(index).into_owned()
    }

    /// ⟨ψ_n|Π|ψ_n⟩ for every level.
    pub fn parities(&self) -> &[f64] {
        &self.parities
    }

    pub fn ground_state(&self) -> DVector<C64> {
        self.state(0)
    }

    /// Maximal runs of levels whose energies agree within the degeneracy
    /// tolerance.
    pub fn degenerate_clusters(&self) -> Vec<Range<usize>> {
        clusters(&self.energies, degeneracy_tolerance(&self.energies))
    }

    /// max |⟨ψ_i|ψ_j⟩ − δ_ij|
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.states.adjoint() * &self.states;
        let mut worst = 0.0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - C64::new(target, 0.0)).norm());
            }
        }
        worst
    }

    /// Matrix of `op` in the dressed basis, ⟨ψ_n|op|ψ_m⟩.
    pub fn to_dressed(&self, op: &OperatorMatrix) -> CMat {
        self.states.adjoint() * op.matrix() * &self.states
    }

    /// Back to the bare basis from a dressed-basis matrix.
    pub fn to_bare(&self, m: &CMat) -> OperatorMatrix {
        OperatorMatrix::from_matrix(&self.states * m * self.states.adjoint())
            .expect("square by construction")
    }

    /// CSV dump of `(index, energy, parity)`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "index,energy,parity")?;
        for (i, (e, p)) in self.energies.iter().zip(&self.parities).enumerate() {
            writeln!(w, "{i},{e:.15e},{p:.15e}")?;
        }
        Ok(())
    }
}

fn clusters(energies: &[f64], tol: f64) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=energies.len() {
        if i == energies.len() || energies[i] - energies[i - 1] > tol {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Diagonalize `h_r` and label eigenstates by parity. Inside a degenerate
/// subspace the eigenvectors are rotated to diagonalize `parity`, so they
/// carry definite parity whenever the two commute.
pub fn diagonalize(h_r: &OperatorMatrix, parity: &OperatorMatrix) -> Result<DressedBasis> {
    if h_r.dim() != parity.dim() {
        return Err(Error::DimensionMismatch {
            expected: h_r.dim(),
            found: parity.dim(),
        });
    }
    let defect = h_r.hermiticity_defect();
    if defect > HERMITIAN_TOLERANCE * h_r.max_abs().max(1.0) {
        return Err(Error::NotHermitian { defect });
    }
    let (energies, mut states) = hermitian_eigen(h_r.matrix());
    let tol = degeneracy_tolerance(&energies);
    let pi = parity.matrix();

    for range in clusters(&energies, tol) {
        if range.len() < 2 {
            continue;
        }
        let block = states.columns(range.start, range.len()).into_owned();
        let restricted = block.adjoint() * pi * &block;
        let (_, rot) = hermitian_eigen(&crate::linalg::hermitize(&restricted));
        let rotated = block * rot;
        states
            .columns_mut(range.start, range.len())
            .copy_from(&rotated);
    }

    // Fix the free phase: largest component real and positive.
    for c in 0..states.ncols() {
        let mut best = 0;
        let mut best_norm = -1.0;
        for r in 0..states.nrows() {
            let v = states[(r, c)].norm();
            if v > best_norm + 1e-12 {
                best = r;
                best_norm = v;
            }
        }
        let z = states[(best, c)];
        if z.norm() > 0.0 {
            let phase = z.conj() / z.norm();
            states.column_mut(c).apply(|z| *z *= phase);
        }
    }

    let parities = (0..states.ncols())
        .map(|c| {
            let v = states.column(c);
            (v.adjoint() * pi * v)[(0, 0)].re
        })
        .collect();

    Ok(DressedBasis {
        energies,
        states,
        parities,
    })
}

/// Cavity (`X`) and qubit (`D`) jump operators.
#[derive(Clone, Debug)]
pub struct JumpOperators {
    /// `X` in the bare basis.
    pub cavity: OperatorMatrix,
    /// `D` in the bare basis.
    pub qubit: OperatorMatrix,
    cavity_dressed: CMat,
    qubit_dressed: CMat,
    retained: usize,
}

impl JumpOperators {
    /// Number of lowest dressed levels included in the sums.
    pub fn retained_levels(&self) -> usize {
        self.retained
    }

    /// `X` in the dressed basis (upper triangular).
    pub fn cavity_dressed(&self) -> &CMat {
        &self.cavity_dressed
    }

    pub fn qubit_dressed(&self) -> &CMat {
        &self.qubit_dressed
    }
}

/// Number of levels kept when `fraction` of the spectrum is retained,
/// rounded down so that no degenerate subspace is split.
pub fn retained_levels(basis: &DressedBasis, fraction: f64) -> usize {
    let target = ((fraction.clamp(0.0, 1.0) * basis.dim() as f64).floor() as usize).max(1);
    let mut keep = 0;
    for range in basis.degenerate_clusters() {
        if range.end <= target {
            keep = range.end;
        } else {
            break;
        }
    }
    keep.max(1)
}

/// Jump operators with the default retained fraction.
pub fn build_jump_operators(
    basis: &DressedBasis,
    a: &OperatorMatrix,
    sigma: &OperatorMatrix,
) -> Result<JumpOperators> {
    let keep = retained_levels(basis, DEFAULT_RETAINED_FRACTION);
    build_jump_operators_with(basis, a, sigma, keep)
}

pub fn build_jump_operators_with(
    basis: &DressedBasis,
    a: &OperatorMatrix,
    sigma: &OperatorMatrix,
    retained: usize,
) -> Result<JumpOperators> {
    let d = basis.dim();
    for op in [a, sigma] {
        if op.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: op.dim(),
            });
        }
    }
    let retained = retained.min(d);
    let tol = degeneracy_tolerance(&basis.energies);
    let lower = |op: &OperatorMatrix| -> CMat {
        let quad = &op.adjoint() + op;
        let full = basis.to_dressed(&quad);
        CMat::from_fn(d, d, |n, m| {
            if n < retained && m < retained && basis.energies[m] > basis.energies[n] + tol {
                full[(n, m)]
            } else {
                C64::new(0.0, 0.0)
            }
        })
    };
    let cavity_dressed = lower(a);
    let qubit_dressed = lower(sigma);
    Ok(JumpOperators {
        cavity: basis.to_bare(&cavity_dressed),
        qubit: basis.to_bare(&qubit_dressed),
        cavity_dressed,
        qubit_dressed,
        retained,
    })
}

/// Everything that depends only on the undriven model: bare operators, H̃_R,
/// its dressed basis and the jump operators. Reused across drive sweeps.
#[derive(Clone, Debug)]
pub struct DressedSystem {
    pub ops: BareOperators,
    pub hamiltonian: OperatorMatrix,
    pub basis: DressedBasis,
    pub jumps: JumpOperators,
}

impl DressedSystem {
    pub fn new(p: &SystemParams, retained_fraction: f64) -> Result<Self> {
        p.validate()?;
        let ops = BareOperators::new(p.n_max)?;
        let hamiltonian = ops.rabi_hamiltonian(p);
        let basis = diagonalize(&hamiltonian, &ops.parity)?;
        let keep = retained_levels(&basis, retained_fraction);
        let jumps = build_jump_operators_with(&basis, &ops.a, &ops.qubit.sigma, keep)?;
        Ok(Self {
            ops,
            hamiltonian,
            basis,
            jumps,
        })
    }
}

/// Outcome of [`check_truncation`].
#[derive(Clone, Debug, PartialEq)]
pub struct TruncationReport {
    pub n_max: usize,
    pub reference_n_max: usize,
    pub levels_compared: usize,
    /// max |ΔE| / max(|E|, ω_r) over the compared levels.
    pub energy_shift: f64,
    /// max shift of the field-operator blocks between compared levels,
    /// relative to max(|element|, 1).
    pub element_shift: f64,
    pub passed: bool,
}

/// Re-diagonalize with five more photons and compare the lowest `levels`
/// energies and the field-quadrature elements among them.
///
/// Elements are compared as Frobenius norms of blocks between degenerate
/// subspaces, which makes the comparison independent of eigenvector phases
/// and of the arbitrary basis chosen inside a degenerate subspace.
pub fn check_truncation(
    basis: &DressedBasis,
    p: &SystemParams,
    levels: usize,
) -> Result<TruncationReport> {
    let ops = BareOperators::new(p.n_max)?;
    if ops.dim() != basis.dim() {
        return Err(Error::DimensionMismatch {
            expected: ops.dim(),
            found: basis.dim(),
        });
    }
    let reference_p = SystemParams {
        n_max: p.n_max + 5,
        ..p.clone()
    };
    let reference_ops = BareOperators::new(reference_p.n_max)?;
    let reference = diagonalize(
        &reference_ops.rabi_hamiltonian(&reference_p),
        &reference_ops.parity,
    )?;

    let clusters: Vec<Range<usize>> = basis
        .degenerate_clusters()
        .into_iter()
        .take_while(|r| r.end <= levels.min(basis.dim()))
        .collect();
    let compared = clusters.last().map_or(0, |r| r.end);

    let mut energy_shift = 0.0f64;
    for i in 0..compared {
        let e = basis.energies[i];
        let shift = (e - reference.energies[i]).abs() / e.abs().max(p.omega_r);
        energy_shift = energy_shift.max(shift);
    }

    let field = basis.to_dressed(&ops.field());
    let reference_field = reference.to_dressed(&reference_ops.field());
    let block_norm = |m: &CMat, r: &Range<usize>, c: &Range<usize>| {
        m.view((r.start, c.start), (r.len(), c.len())).norm()
    };
    let mut element_shift = 0.0f64;
    for r in &clusters {
        for c in &clusters {
            let x = block_norm(&field, r, c);
            let y = block_norm(&reference_field, r, c);
            element_shift = element_shift.max((x - y).abs() / x.max(1.0));
        }
    }

    Ok(TruncationReport {
        n_max: p.n_max,
        reference_n_max: reference_p.n_max,
        levels_compared: compared,
        energy_shift,
        element_shift,
        passed: energy_shift <= TRUNCATION_TOLERANCE && element_shift <= TRUNCATION_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{basis_index, Qubit};
    use std::f64::consts::PI;

    fn system(theta: f64, lambda: f64, n_max: usize) -> (SystemParams, DressedSystem) {
        let p = SystemParams {
            lambda,
            n_max,
            ..SystemParams::reference(theta)
        };
        let s = DressedSystem::new(&p, DEFAULT_RETAINED_FRACTION).unwrap();
        (p, s)
    }

    #[test]
    fn decoupled_levels() {
        let (_, s) = system(PI / 2.0, 0.0, 10);
        let e = s.basis.energies();
        for (x, y) in e[..3].iter().zip([-2.5, -1.5, -0.5]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert_eq!(s.basis.parities()[0], 1.0);
        let g0 = basis_index(0, Qubit::Ground);
        assert!((s.basis.ground_state()[g0].norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn definite_parity_with_symmetry() {
        let (_, s) = system(PI / 2.0, 0.2, 20);
        assert!(s.basis.parities().iter().all(|p| p.abs() > 1.0 - 1e-9));
        assert!(s.basis.orthonormality_defect() < 1e-10);
        assert!(s.basis.energies().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = OperatorMatrix::identity(4).into_matrix();
        m[(0, 1)] = C64::new(1.0, 0.0);
        let h = OperatorMatrix::from_matrix(m).unwrap();
        let pi = crate::hilbert::build_parity_operator(1).unwrap();
        assert!(matches!(diagonalize(&h, &pi), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn decoupled_jumps_are_bare_lowering_operators() {
        let (_, s) = system(PI / 3.0, 0.0, 12);
        let keep = s.jumps.retained_levels();
        // Compare on bare states whose dressed partners are all retained.
        let e = s.basis.energies();
        let cut = e[keep - 1];
        let bare_e = |i: usize| s.hamiltonian.get(i, i).re;
        for r in 0..s.ops.dim() {
            for c in 0..s.ops.dim() {
                if bare_e(r) > cut || bare_e(c) > cut {
                    continue;
                }
                let dx = (s.jumps.cavity.get(r, c) - s.ops.a.get(r, c)).norm();
                let dd = (s.jumps.qubit.get(r, c) - s.ops.qubit.sigma.get(r, c)).norm();
                assert!(dx < 1e-12 && dd < 1e-12, "({r},{c}) {dx} {dd}");
            }
        }
    }

    #[test]
    fn cavity_jump_kills_ground_state_and_lowers_energy() {
        let (_, s) = system(PI / 6.0, 0.2, 20);
        let g = s.basis.ground_state();
        assert!(s.jumps.cavity.apply(&g).norm() < 1e-12);
        let x = s.jumps.cavity_dressed();
        let e = s.basis.energies();
        for n in 0..x.nrows() {
            for m in 0..x.ncols() {
                if e[m] <= e[n] {
                    assert_eq!(x[(n, m)], C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn field_flips_parity() {
        let (_, s) = system(PI / 2.0, 0.2, 20);
        let x = s.jumps.cavity_dressed();
        let p = s.basis.parities();
        for n in 0..x.nrows() {
            for m in 0..x.ncols() {
                if p[n] * p[m] > 0.0 {
                    assert!(x[(n, m)].norm() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn positive_and_negative_parts_rebuild_the_quadrature() {
        let (_, s) = system(PI / 6.0, 0.2, 16);
        let keep = s.jumps.retained_levels();
        let x = s.jumps.cavity_dressed();
        let field = s.basis.to_dressed(&s.ops.field());
        let sum = x + x.adjoint();
        let clusters = s.basis.degenerate_clusters();
        let cluster_of = |i: usize| clusters.iter().position(|r| r.contains(&i)).unwrap();
        for n in 0..keep {
            for m in 0..keep {
                let want = if cluster_of(n) == cluster_of(m) {
                    C64::new(0.0, 0.0)
                } else {
                    field[(n, m)]
                };
                assert!((sum[(n, m)] - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_check() {
        let (p, s) = system(PI / 2.0, 0.0, 20);
        let r = check_truncation(&s.basis, &p, 20).unwrap();
        assert!(r.energy_shift < 1e-12);
        assert!(r.element_shift < 1e-12);
        assert!(r.passed);

        let (p, s) = system(PI / 2.0, 0.2, 20);
        let r = check_truncation(&s.basis, &p, 20).unwrap();
        assert!(r.passed, "{r:?}");

        let (p, s) = system(PI / 2.0, 2.0, 5);
        let r = check_truncation(&s.basis, &p, 10).unwrap();
        assert!(!r.passed, "{r:?}");
    }

    #[test]
    fn csv_dump() {
        let (_, s) = system(PI / 2.0, 0.2, 3);
        let mut buf = Vec::new();
        s.basis.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + s.basis.dim());
        assert!(text.starts_with("index,energy,parity\n0,"));
    }
}
