//! Fixed-grid propagators for the periodically driven model.
//!
//! Time is cut into `substeps` equal pieces per drive period. Wave functions
//! use a fourth-order commutator-free Magnus step with exact exponentials,
//! so a Hermitian generator stays unitary to round-off. Density matrices use
//! a symmetric splitting between those unitary steps and the time-independent
//! dissipator, exponentiated to machine precision. Both pieces are completely
//! positive and trace preserving, so the composed map is as well, and without
//! damping the scheme reduces to the wave-function one.

use crate::hilbert::{C64, ONE};
use crate::linalg::{unitary_exp, unvectorize, vectorize, CMat, CVec};

const GRID_SNAP: f64 = 1e-9;
const SQRT3: f64 = 1.732_050_807_568_877_2;

/// A piece of a time interval as seen by the substep grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Segment {
    /// A complete substep with the given index inside the period.
    Grid(usize),
    Partial(f64, f64),
}

/// Walk `[t_a, t_b]` in grid-aligned pieces.
pub(crate) fn for_each_segment(t_a: f64, t_b: f64, h: f64, substeps: usize, mut f: impl FnMut(Segment)) {
    let mut t = t_a;
    while t_b - t > GRID_SNAP * h {
        let x = t / h;
        let nearest = x.round();
        let on_grid = (x - nearest).abs() < GRID_SNAP;
        let cell = if on_grid { nearest } else { x.floor() };
        let next = (cell + 1.0) * h;
        if on_grid && next <= t_b + GRID_SNAP * h {
            let k = (cell as i64).rem_euclid(substeps as i64) as usize;
            f(Segment::Grid(k));
            t = next;
        } else {
            let end = next.min(t_b);
            f(Segment::Partial(t, end));
            t = end;
        }
    }
}

/// Substep propagators of `i dψ/dt = (H0 − iΓ/2 + cos(ω_L t) V) ψ`.
#[derive(Clone, Debug)]
pub struct PeriodStepper {
    m0: CMat,
    drive: CMat,
    hermitian: bool,
    omega_l: f64,
    period: f64,
    steps: Vec<CMat>,
}

impl PeriodStepper {
    pub(crate) fn new(
        h0: CMat,
        drive: CMat,
        decay: Option<CMat>,
        omega_l: f64,
        period: f64,
        substeps: usize,
    ) -> Self {
        let hermitian = decay.is_none();
        let m0 = match decay {
            Some(g) => h0 - g * C64::new(0.0, 0.5),
            None => h0,
        };
        let mut s = Self {
            m0,
            drive,
            hermitian,
            omega_l,
            period,
            steps: Vec::new(),
        };
        let h = period / substeps as f64;
        s.steps = (0..substeps)
            .map(|k| s.cf4(k as f64 * h, (k + 1) as f64 * h))
            .collect();
        s
    }

    pub fn dim(&self) -> usize {
        self.m0.nrows()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn substeps(&self) -> usize {
        self.steps.len()
    }

    pub fn dt(&self) -> f64 {
        self.period / self.steps.len() as f64
    }

    fn exp_generator(&self, m: &CMat, s: f64) -> CMat {
        if self.hermitian {
            unitary_exp(m, s)
        } else {
            (m * C64::new(0.0, -s)).exp()
        }
    }

    /// One commutator-free Magnus step over `[t_a, t_b]`.
    pub(crate) fn cf4(&self, t_a: f64, t_b: f64) -> CMat {
        let s = t_b - t_a;
        let f1 = (self.omega_l * (t_a + (0.5 - SQRT3 / 6.0) * s)).cos();
        let f2 = (self.omega_l * (t_a + (0.5 + SQRT3 / 6.0) * s)).cos();
        let big = 0.25 + SQRT3 / 6.0;
        let small = 0.25 - SQRT3 / 6.0;
        let half = &self.m0 * C64::new(0.5, 0.0);
        let first = &half + &self.drive * C64::new(big * f1 + small * f2, 0.0);
        let second = &half + &self.drive * C64::new(small * f1 + big * f2, 0.0);
        self.exp_generator(&second, s) * self.exp_generator(&first, s)
    }

    pub fn step(&self, k: usize) -> &CMat {
        &self.steps[k]
    }

    /// Propagator over one period starting at phase zero.
    pub fn period_map(&self) -> CMat {
        let mut u = CMat::identity(self.dim(), self.dim());
        for w in &self.steps {
            u = w * u;
        }
        u
    }

    pub fn propagator(&self, t_a: f64, t_b: f64) -> CMat {
        let mut u = CMat::identity(self.dim(), self.dim());
        for_each_segment(t_a, t_b, self.dt(), self.substeps(), |seg| {
            u = match seg {
                Segment::Grid(k) => &self.steps[k] * &u,
                Segment::Partial(a, b) => self.cf4(a, b) * &u,
            };
        });
        u
    }

    pub fn apply(&self, psi: &CVec, t_a: f64, t_b: f64) -> CVec {
        let mut v = psi.clone();
        for_each_segment(t_a, t_b, self.dt(), self.substeps(), |seg| {
            v = match seg {
                Segment::Grid(k) => &self.steps[k] * &v,
                Segment::Partial(a, b) => self.cf4(a, b) * &v,
            };
        });
        v
    }
}

/// Density-matrix propagator for `dρ/dt = −i[H(t),ρ] + Σ_c L_c ρ L_c† − ½{L_c†L_c, ρ}`.
#[derive(Clone, Debug)]
pub struct LindbladPropagator {
    coherent: PeriodStepper,
    /// Σ L†L.
    decay: CMat,
    channels: Vec<CMat>,
    channels_adj: Vec<CMat>,
    half_step: CMat,
    full_step: CMat,
    powers: Vec<CMat>,
    average: CMat,
}

impl LindbladPropagator {
    /// `coherent` carries H0, the drive and the grid; `channels` are the
    /// rate-weighted jump operators √κ X, √γ D.
    pub(crate) fn new(coherent: PeriodStepper, channels: Vec<CMat>) -> Self {
        assert!(coherent.hermitian, "coherent stepper must be unitary");
        let k = coherent.dim();
        let channels_adj: Vec<CMat> = channels.iter().map(|c| c.adjoint()).collect();
        let mut decay = CMat::zeros(k, k);
        for (l, ld) in channels.iter().zip(&channels_adj) {
            decay += ld * l;
        }
        let mut s = Self {
            coherent,
            decay,
            channels,
            channels_adj,
            half_step: CMat::zeros(0, 0),
            full_step: CMat::zeros(0, 0),
            powers: Vec::new(),
            average: CMat::zeros(0, 0),
        };
        if s.is_damped() {
            let h = s.dt();
            s.half_step = s.dissipator_superop(0.5 * h);
            s.full_step = s.dissipator_superop(h);
        }
        s
    }

    fn is_damped(&self) -> bool {
        !self.channels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.coherent.dim()
    }

    pub fn period(&self) -> f64 {
        self.coherent.period
    }

    pub fn dt(&self) -> f64 {
        self.coherent.dt()
    }

    fn substeps(&self) -> usize {
        self.coherent.substeps()
    }

    /// Dissipative part Σ L ρ L† − ½{Σ L†L, ρ}.
    pub(crate) fn dissipator(&self, rho: &CMat) -> CMat {
        let mut out = (&self.decay * rho + rho * &self.decay) * C64::new(-0.5, 0.0);
        for (l, ld) in self.channels.iter().zip(&self.channels_adj) {
            out += l * rho * ld;
        }
        out
    }

    /// exp(s 𝒟) ρ by its Taylor series; every term is traceless.
    fn dissipator_flow(&self, rho: &CMat, s: f64) -> CMat {
        let mut acc = rho.clone();
        let mut term = rho.clone();
        let scale = acc.camax().max(f64::MIN_POSITIVE);
        for n in 1..200 {
            term = self.dissipator(&term) * C64::new(s / n as f64, 0.0);
            acc += &term;
            if term.camax() < 1e-17 * scale {
                break;
            }
        }
        acc
    }

    fn dissipator_superop(&self, s: f64) -> CMat {
        let k = self.dim();
        let n = k * k;
        let mut m = CMat::zeros(n, n);
        for col in 0..n {
            let mut e = CMat::zeros(k, k);
            e[(col % k, col / k)] = ONE;
            let out = self.dissipator_flow(&e, s);
            m.column_mut(col).copy_from(&vectorize(&out));
        }
        m
    }

    fn apply_dissipator(&self, rho: &CMat, s: f64) -> CMat {
        if s <= 0.0 || !self.is_damped() {
            return rho.clone();
        }
        let h = self.dt();
        let k = self.dim();
        if (s - h).abs() < GRID_SNAP * h {
            unvectorize(&(&self.full_step * vectorize(rho)), k)
        } else if (s - 0.5 * h).abs() < GRID_SNAP * h {
            unvectorize(&(&self.half_step * vectorize(rho)), k)
        } else {
            let mut out = rho.clone();
            // keep each Taylor argument within one substep
            let pieces = (s / h).ceil().max(1.0) as usize;
            for _ in 0..pieces {
                out = self.dissipator_flow(&out, s / pieces as f64);
            }
            out
        }
    }

    /// Propagate `rho` from `t_a` to `t_b` on the substep grid.
    pub fn evolve(&self, rho: &CMat, t_a: f64, t_b: f64) -> CMat {
        let h = self.dt();
        let mut out = rho.clone();
        let mut pending = 0.0;
        for_each_segment(t_a, t_b, h, self.substeps(), |seg| {
            let (u, s) = match seg {
                Segment::Grid(k) => (self.coherent.step(k).clone(), h),
                Segment::Partial(a, b) => (self.coherent.cf4(a, b), b - a),
            };
            out = self.apply_dissipator(&out, pending + 0.5 * s);
            out = &u * &out * u.adjoint();
            pending = 0.5 * s;
        });
        self.apply_dissipator(&out, pending)
    }

    fn build_period_maps(&mut self) {
        if !self.powers.is_empty() {
            return;
        }
        let k = self.dim();
        let n = k * k;
        let h = self.dt();
        let mut map = CMat::zeros(n, n);
        let mut sum = CMat::zeros(n, n);
        for col in 0..n {
            let mut rho = CMat::zeros(k, k);
            rho[(col % k, col / k)] = ONE;
            let mut pending = 0.0;
            let mut acc = CMat::zeros(k, k);
            for j in 0..self.substeps() {
                if j > 0 {
                    // the state at t_j is this one after the pending half step
                    acc += &rho;
                }
                rho = self.apply_dissipator(&rho, pending + 0.5 * h);
                let u = self.coherent.step(j);
                rho = u * &rho * u.adjoint();
                pending = 0.5 * h;
            }
            rho = self.apply_dissipator(&rho, pending);
            map.column_mut(col).copy_from(&vectorize(&rho));
            sum.column_mut(col).copy_from(&vectorize(&acc));
        }
        let mut avg = if self.is_damped() {
            &self.half_step * sum
        } else {
            sum
        };
        avg += CMat::identity(n, n);
        avg.apply(|z| *z /= self.substeps() as f64);
        self.average = avg;
        self.powers.push(map);
    }

    /// One-period superoperator from phase zero, column-stacked.
    pub fn period_superop(&mut self) -> &CMat {
        self.build_period_maps();
        &self.powers[0]
    }

    /// Superoperator returning the average of ρ(t) over the substep grid of
    /// one period, for ρ given at phase zero.
    pub fn average_superop(&mut self) -> &CMat {
        self.build_period_maps();
        &self.average
    }

    fn ensure_powers(&mut self, periods: u64) {
        self.build_period_maps();
        let needed = 64 - periods.leading_zeros() as usize;
        while self.powers.len() < needed {
            let last = self.powers.last().unwrap();
            let sq = last * last;
            self.powers.push(sq);
        }
    }

    /// P^(2^j), building it if needed.
    pub fn period_power(&mut self, j: usize) -> &CMat {
        self.ensure_powers(1u64 << j);
        &self.powers[j]
    }

    /// ρ after `periods` whole drive periods, starting at a period boundary.
    pub fn apply_periods(&mut self, rho: &CMat, periods: u64) -> CMat {
        if periods == 0 {
            return rho.clone();
        }
        self.ensure_powers(periods);
        let k = self.dim();
        let mut v = vectorize(rho);
        for (j, p) in self.powers.iter().enumerate() {
            if periods >> j & 1 == 1 {
                v = p * v;
            }
        }
        unvectorize(&v, k)
    }

    /// Propagate over an arbitrary interval, jumping whole periods with the
    /// cached period map.
    pub fn advance(&mut self, rho: &CMat, t_a: f64, t_b: f64) -> CMat {
        let t = self.period();
        if t_b - t_a < 3.0 * t {
            return self.evolve(rho, t_a, t_b);
        }
        let start = (t_a / t - GRID_SNAP).ceil() * t;
        let whole = ((t_b - start) / t + GRID_SNAP).floor() as u64;
        let head = self.evolve(rho, t_a, start);
        let mid = self.apply_periods(&head, whole);
        self.evolve(&mid, start + whole as f64 * t, t_b)
    }

    /// Full generator ℒ(t)ρ.
    pub fn generator(&self, rho: &CMat, t: f64) -> CMat {
        let c = &self.coherent;
        let h = &c.m0 + &c.drive * C64::new((c.omega_l * t).cos(), 0.0);
        (&h * rho - rho * &h) * C64::new(0.0, -1.0) + self.dissipator(rho)
    }
}
