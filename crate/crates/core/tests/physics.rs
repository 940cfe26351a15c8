use std::f64::consts::PI;

use parity_bundle::correlations::{g2_tau_with, tau_min};
use parity_bundle::evolution::{lindblad_evolve, schrodinger_evolve, DensityMatrix, StateVector};
use parity_bundle::hilbert::Qubit;
use parity_bundle::steady::PeriodicState;
use parity_bundle::trajectories::{Channel, TrajectoryOptions, TrajectorySimulator};
use parity_bundle::{DrivenModel, Numerics, SteadyStateMethod, SystemParams};

fn closed(theta: f64) -> SystemParams {
    SystemParams {
        kappa: 0.0,
        gamma_q: 0.0,
        n_max: 12,
        omega_l: 7.03,
        ..SystemParams::reference(theta)
    }
}

fn max_gap(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn lossless_master_equation_matches_schrodinger() {
    for theta in [PI / 2.0, PI / 6.0] {
        let p = closed(theta);
        let psi0 = StateVector::basis(p.n_max, 0, Qubit::Ground).unwrap();
        let a = schrodinger_evolve(&p, &psi0, 2000.0, 100.0).unwrap();
        let b = lindblad_evolve(&p, &DensityMatrix::pure(&psi0), 2000.0, 100.0).unwrap();
        assert_eq!(a.times, b.times);
        assert!(max_gap(&a.populations, &b.populations) < 1e-8);
    }
}

#[test]
fn lossless_trajectory_is_the_pure_state() {
    let p = closed(PI / 6.0);
    let sim = TrajectorySimulator::new(&p, &TrajectoryOptions::default()).unwrap();
    let run = sim.run(3, 0, 2000.0, Some(100.0)).unwrap();
    assert!(run.clicks.is_empty());
    let psi0 = StateVector::basis(p.n_max, 0, Qubit::Ground).unwrap();
    let reference = schrodinger_evolve(&p, &psi0, 2000.0, 100.0).unwrap();
    assert!(max_gap(&run.populations, &reference.populations) < 1e-8);
}

#[test]
fn uncoupled_cavity_clicks_remove_one_photon() {
    // with the coupling off the field stays in a Fock state, so every
    // cavity click lowers the photon number by exactly one
    let p = SystemParams {
        lambda: 0.0,
        omega_q: 4.7,
        kappa: 0.02,
        gamma_q: 1e-3,
        n_max: 10,
        ..SystemParams::reference(PI / 2.0)
    };
    let opts = TrajectoryOptions {
        initial: Some(StateVector::basis(p.n_max, 3, Qubit::Ground).unwrap()),
        ..TrajectoryOptions::default()
    };
    let sim = TrajectorySimulator::new(&p, &opts).unwrap();
    let mut cavity = 0;
    for index in 0..4 {
        let run = sim.run(9, index, 2000.0, None).unwrap();
        for (c, dn) in run.clicks.iter().zip(&run.photon_jumps) {
            if c.channel == Channel::Cavity {
                cavity += 1;
                assert!((dn + 1.0).abs() < 1e-6, "photon change {dn}");
            }
        }
    }
    assert!(cavity >= 8, "only {cavity} cavity clicks");
}

#[test]
fn steady_state_routes_agree() {
    let p = SystemParams {
        kappa: 0.02,
        gamma_q: 2e-3,
        n_max: 12,
        omega_l: 7.05,
        ..SystemParams::reference(PI / 2.0)
    };
    let numerics = Numerics {
        steady_tolerance: 1e-11,
        ..Numerics::default()
    };
    let model = DrivenModel::new(&p, &numerics).unwrap();
    let hb = PeriodicState::compute_with(&model, SteadyStateMethod::HarmonicBalance).unwrap();
    let pm = PeriodicState::compute_with(&model, SteadyStateMethod::PeriodMap).unwrap();
    let gap = (hb.average() - pm.average()).iter().map(|z| z.norm()).fold(0.0, f64::max);
    assert!(gap < 1e-6, "routes differ by {gap:e}");
    let (a, b) = (hb.photon_flux(), pm.photon_flux());
    assert!((a - b).abs() <= 1e-4 * a.abs(), "{a} vs {b}");
}

fn lossy() -> SystemParams {
    SystemParams {
        kappa: 0.02,
        gamma_q: 2e-3,
        n_max: 12,
        omega_l: 7.05,
        ..SystemParams::reference(PI / 2.0)
    }
}

#[test]
fn correlations_lose_memory_at_long_delay() {
    let p = lossy();
    let c = g2_tau_with(&p, 1, &[6000.0], &Numerics::default()).unwrap();
    let g = c.values[0].unwrap();
    assert!((g - 1.0).abs() < 0.05, "g2(large tau) = {g}");
}

#[test]
fn phase_average_is_converged() {
    let p = lossy();
    let t = [tau_min(&p), 5.0 * tau_min(&p)];
    let coarse = g2_tau_with(&p, 2, &t, &Numerics::default()).unwrap();
    let fine_numerics = Numerics {
        n_phase: 2 * Numerics::default().n_phase,
        ..Numerics::default()
    };
    let fine = g2_tau_with(&p, 2, &t, &fine_numerics).unwrap();
    for (a, b) in coarse.values.iter().zip(&fine.values) {
        let (a, b) = (a.unwrap(), b.unwrap());
        assert!((a - b).abs() < 0.02 * b.abs(), "{a} vs {b}");
    }
}
