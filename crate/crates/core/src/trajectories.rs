//! Quantum-jump unraveling of the dressed master equation, bundle
//! clustering of the recorded clicks and purity statistics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::correlations::{check_grid, fmt_opt, CorrelationCurve};
use crate::effective_rate::{find_resonance_with, ResonanceSearch};
use crate::error::{Error, Result};
use crate::evolution::{model_for_state, output_grid, StateVector};
use crate::hilbert::{basis_index, basis_state, Qubit, SystemParams, C64};
use crate::linalg::{CMat, CVec};
use crate::model::DrivenModel;
use crate::parallel::{par_map, Execution};
use crate::propagate::PeriodStepper;
use crate::settings::Numerics;

/// Jump times are located until the squared norm is within this of the threshold.
pub const JUMP_NORM_TOLERANCE: f64 = 1e-10;
/// Default bundle window in units of 1/κ.
pub const DEFAULT_WINDOW_KAPPA: f64 = 10.0;
/// Fewer size-2 events than this make the delay histogram unreliable.
pub const MIN_BUNDLE_EVENTS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Channel {
    /// Dressed cavity operator X.
    Cavity,
    /// Dressed qubit operator D.
    Qubit,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Cavity => "cavity",
            Channel::Qubit => "qubit",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClickRecord {
    pub time: f64,
    pub channel: Channel,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryResult {
    pub index: u64,
    /// Master seed; the trajectory uses RNG stream `index` of it.
    pub seed: u64,
    pub t_end: f64,
    pub clicks: Vec<ClickRecord>,
    /// Change of the mean bare photon number across each click.
    pub photon_jumps: Vec<f64>,
    pub times: Vec<f64>,
    /// Bare populations `P[i][2n+s]` at `times[i]`.
    pub populations: Vec<Vec<f64>>,
}

impl TrajectoryResult {
    pub fn population(&self, n: usize, q: Qubit) -> Vec<f64> {
        let b = basis_index(n, q);
        self.populations.iter().map(|row| row[b]).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrajectoryOptions {
    pub numerics: Numerics,
    /// Bare initial state; `None` means `|0,g⟩`.
    pub initial: Option<StateVector>,
}

impl Default for TrajectoryOptions {
    fn default() -> Self {
        Self {
            numerics: Numerics::default(),
            initial: None,
        }
    }
}

/// Position on the substep grid: `step·h + offset` with `0 ≤ offset < h`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
struct Clock {
    step: u64,
    offset: f64,
}

impl Clock {
    fn at(t: f64, h: f64) -> Self {
        let x = t / h;
        let mut step = x.floor();
        let mut offset = t - step * h;
        if offset > h * (1.0 - 1e-9) {
            step += 1.0;
            offset = 0.0;
        } else if offset < h * 1e-9 {
            offset = 0.0;
        }
        Self {
            step: step as u64,
            offset,
        }
    }

    fn time(&self, h: f64) -> f64 {
        self.step as f64 * h + self.offset
    }
}

/// Shared, immutable data for running many trajectories of one model.
pub struct TrajectorySimulator {
    model: DrivenModel,
    stepper: PeriodStepper,
    /// `powers[j]` is the no-jump map over `2^j` periods.
    powers: Vec<CMat>,
    cavity: Option<CMat>,
    qubit: Option<CMat>,
    psi0: CVec,
}

impl TrajectorySimulator {
    pub fn new(p: &SystemParams, opts: &TrajectoryOptions) -> Result<Self> {
        p.validate()?;
        opts.numerics.validate()?;
        if p.drive_period().is_none() {
            return Err(Error::param("omega_l", "trajectories need omega_l > 0"));
        }
        let initial = match &opts.initial {
            Some(s) => s.clone(),
            None => StateVector::basis(p.n_max, 0, Qubit::Ground)?,
        };
        if initial.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: p.dim(),
                found: initial.dim(),
            });
        }
        let a = initial.amplitudes();
        let model = model_for_state(p, &(a * a.adjoint()), &opts.numerics)?;
        let psi0 = model.from_bare_vector(a);
        let psi0 = &psi0 / C64::new(psi0.norm(), 0.0);
        let stepper = model.no_jump_stepper();
        let cavity = (p.kappa > 0.0).then(|| model.cavity() * C64::new(p.kappa.sqrt(), 0.0));
        let qubit = (p.gamma_q > 0.0).then(|| model.qubit() * C64::new(p.gamma_q.sqrt(), 0.0));
        Ok(Self {
            powers: vec![stepper.period_map()],
            model,
            stepper,
            cavity,
            qubit,
            psi0,
        })
    }

    pub fn model(&self) -> &DrivenModel {
        &self.model
    }

    fn dissipative(&self) -> bool {
        self.cavity.is_some() || self.qubit.is_some()
    }

    /// Make period powers available for runs up to `t_end`.
    fn prepare(&mut self, t_end: f64) {
        let periods = t_end / self.stepper.period();
        while self.dissipative() && ((1u64 << self.powers.len()) as f64) <= periods {
            let last = self.powers.last().expect("period map present");
            self.powers.push(last * last);
        }
    }

    /// One trajectory on RNG stream `index` of `seed`, sampling populations
    /// on `0, dt_out, …, t_end` (only at `t_end` when `dt_out` is `None`).
    pub fn run(&self, seed: u64, index: u64, t_end: f64, dt_out: Option<f64>) -> Result<TrajectoryResult> {
        let grid = match dt_out {
            Some(dt) => output_grid(t_end, dt)?,
            None => {
                output_grid(t_end, t_end.max(1.0))?;
                vec![t_end]
            }
        };
        let h = self.stepper.dt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let draw = |rng: &mut ChaCha8Rng| 1.0 - rng.random::<f64>();

        let mut psi = self.psi0.clone();
        let mut clock = Clock { step: 0, offset: 0.0 };
        let mut threshold = draw(&mut rng);
        let mut clicks = Vec::new();
        let mut photon_jumps = Vec::new();
        let mut populations = Vec::with_capacity(grid.len());
        for &t in &grid {
            let target = Clock::at(t, h);
            while self.evolve_until(&mut psi, &mut clock, target, threshold)? {
                let before = self.mean_photons(&psi);
                let channel = self.jump(&mut psi, &mut rng, clock.time(h))?;
                photon_jumps.push(self.mean_photons(&psi) - before);
                clicks.push(ClickRecord {
                    time: clock.time(h),
                    channel,
                });
                threshold = draw(&mut rng);
            }
            populations.push(self.model.bare_populations_vector(&psi));
        }
        Ok(TrajectoryResult {
            index,
            seed,
            t_end,
            clicks,
            photon_jumps,
            times: grid,
            populations,
        })
    }

    fn mean_photons(&self, psi: &CVec) -> f64 {
        self.model
            .bare_populations_vector(psi)
            .iter()
            .enumerate()
            .map(|(i, p)| basis_state(i).0 as f64 * p)
            .sum()
    }

    /// Propagate the unnormalized state towards `target`. Returns `true` with
    /// `clock` at the jump time if the squared norm reaches `threshold` first.
    fn evolve_until(&self, psi: &mut CVec, clock: &mut Clock, target: Clock, threshold: f64) -> Result<bool> {
        let n = self.stepper.substeps() as u64;
        let h = self.stepper.dt();
        let mut hopped = false;
        loop {
            if *clock >= target {
                return Ok(false);
            }
            let k = (clock.step % n) as usize;
            if k == 0 && clock.offset == 0.0 && !hopped {
                // binary search over whole periods with the cached powers
                let mut available = (target.step - clock.step) / n;
                for (j, map) in self.powers.iter().enumerate().rev() {
                    let len = 1u64 << j;
                    if len > available {
                        continue;
                    }
                    let next = map * &*psi;
                    if !self.dissipative() || next.norm_squared() > threshold {
                        *psi = next;
                        clock.step += len * n;
                        available -= len;
                    }
                }
                hopped = true;
                continue;
            }
            hopped = false;
            let (end, end_offset) = if clock.step == target.step {
                (clock.step, target.offset)
            } else {
                (clock.step + 1, 0.0)
            };
            let b = if end == clock.step { end_offset } else { h };
            let base = k as f64 * h;
            let next = if clock.offset == 0.0 && end != clock.step {
                self.stepper.step(k) * &*psi
            } else {
                self.stepper.cf4(base + clock.offset, base + b) * &*psi
            };
            if self.dissipative() && next.norm_squared() <= threshold {
                let (x, state) = self.bisect(psi, base, clock.offset, b, threshold)?;
                *psi = state;
                clock.offset = x;
                return Ok(true);
            }
            *psi = next;
            *clock = Clock {
                step: end,
                offset: end_offset,
            };
        }
    }

    /// Locate the threshold crossing inside `[base+lo, base+hi]` of one substep.
    fn bisect(&self, psi: &CVec, base: f64, mut lo: f64, mut hi: f64, threshold: f64) -> Result<(f64, CVec)> {
        let h = self.stepper.dt();
        let start = lo;
        let at = |x: f64| self.stepper.cf4(base + start, base + x) * psi;
        if psi.norm_squared() <= threshold {
            return Err(Error::Integration("norm crossing not bracketed".into()));
        }
        let mut state = at(hi);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let candidate = at(mid);
            let excess = candidate.norm_squared() - threshold;
            if excess.abs() <= JUMP_NORM_TOLERANCE {
                return Ok((mid, candidate));
            }
            if excess > 0.0 {
                lo = mid;
            } else {
                hi = mid;
                state = candidate;
            }
            if hi - lo < 1e-14 * h {
                break;
            }
        }
        Ok((hi, state))
    }

    fn jump(&self, psi: &mut CVec, rng: &mut ChaCha8Rng, time: f64) -> Result<Channel> {
        let cav = self.cavity.as_ref().map(|c| c * &*psi);
        let qub = self.qubit.as_ref().map(|d| d * &*psi);
        let wc = cav.as_ref().map_or(0.0, |v| v.norm_squared());
        let wq = qub.as_ref().map_or(0.0, |v| v.norm_squared());
        if !(wc + wq > 0.0) {
            return Err(Error::Integration(format!("no jump channel open at t = {time}")));
        }
        let (channel, v) = if rng.random::<f64>() * (wc + wq) < wc {
            (Channel::Cavity, cav.expect("cavity weight is positive"))
        } else {
            (Channel::Qubit, qub.expect("qubit weight is positive"))
        };
        let norm = v.norm();
        *psi = v / C64::new(norm, 0.0);
        Ok(channel)
    }
}

/// Single trajectory from `|0,g⟩` on stream 0 of `seed`.
pub fn mcwf_run(p: &SystemParams, seed: u64, t_end: f64, dt_out: f64) -> Result<TrajectoryResult> {
    let mut sim = TrajectorySimulator::new(p, &TrajectoryOptions::default())?;
    sim.prepare(t_end);
    sim.run(seed, 0, t_end, Some(dt_out))
}

/// Trajectories `0..n_traj` of `seed`, in index order.
pub fn run_ensemble(
    p: &SystemParams,
    opts: &TrajectoryOptions,
    seed: u64,
    n_traj: usize,
    t_end: f64,
    dt_out: Option<f64>,
    exec: Execution,
) -> Result<Vec<TrajectoryResult>> {
    let mut sim = TrajectorySimulator::new(p, opts)?;
    sim.prepare(t_end);
    let indices: Vec<u64> = (0..n_traj as u64).collect();
    par_map(&indices, exec, |&i| sim.run(seed, i, t_end, dt_out))
        .into_iter()
        .collect()
}

/// Mean and standard error of each bare population over an ensemble sharing
/// one output grid.
pub fn ensemble_populations(runs: &[TrajectoryResult]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let first = runs.first().ok_or_else(|| Error::param("runs", "empty ensemble"))?;
    if runs.iter().any(|r| r.times != first.times) {
        return Err(Error::param("runs", "trajectories sampled on different grids"));
    }
    let n = runs.len() as f64;
    let mut mean = vec![vec![0.0; first.populations[0].len()]; first.times.len()];
    let mut sq = mean.clone();
    for r in runs {
        for (i, row) in r.populations.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                mean[i][j] += v / n;
                sq[i][j] += v * v / n;
            }
        }
    }
    let stderr = mean
        .iter()
        .zip(&sq)
        .map(|(m, s)| {
            m.iter()
                .zip(s)
                .map(|(m, s)| ((s - m * m).max(0.0) / (n - 1.0).max(1.0)).sqrt())
                .collect()
        })
        .collect();
    Ok((mean, stderr))
}

pub fn write_clicks_csv<W: Write>(runs: &[TrajectoryResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "trajectory_id,time,channel")?;
    for r in runs {
        for c in &r.clicks {
            writeln!(w, "{},{:.10e},{}", r.index, c.time, c.channel)?;
        }
    }
    Ok(())
}

/// Sampled populations of `states` (bare indices) for every trajectory.
pub fn write_populations_csv<W: Write>(runs: &[TrajectoryResult], states: &[usize], mut w: W) -> std::io::Result<()> {
    write!(w, "trajectory_id,t")?;
    for &s in states {
        write!(w, ",{}", crate::hilbert::population_label(s))?;
    }
    writeln!(w)?;
    for r in runs {
        for (t, row) in r.times.iter().zip(&r.populations) {
            write!(w, "{},{:.10e}", r.index, t)?;
            for &s in states {
                write!(w, ",{:.10e}", row[s])?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// A maximal group of cavity clicks with consecutive gaps below the window.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cluster {
    pub start: f64,
    pub end: f64,
    pub size: usize,
    /// Qubit-channel clicks falling inside `[start, end]`.
    pub qubit_clicks: usize,
}

impl Cluster {
    pub fn centre(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

pub fn cluster_clicks(clicks: &[ClickRecord], window: f64) -> Result<Vec<Cluster>> {
    if !(window > 0.0) {
        return Err(Error::param("window", "must be > 0"));
    }
    let mut out: Vec<Cluster> = Vec::new();
    for c in clicks.iter().filter(|c| c.channel == Channel::Cavity) {
        match out.last_mut() {
            Some(last) if c.time - last.end < window => {
                last.end = c.time;
                last.size += 1;
            }
            _ => out.push(Cluster {
                start: c.time,
                end: c.time,
                size: 1,
                qubit_clicks: 0,
            }),
        }
    }
    for q in clicks.iter().filter(|c| c.channel == Channel::Qubit) {
        if let Some(cl) = out.iter_mut().find(|cl| cl.start <= q.time && q.time <= cl.end) {
            cl.qubit_clicks += 1;
        }
    }
    Ok(out)
}

/// Cluster-size counts of cavity clicks.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BundleStats {
    /// 𝒫_n: number of clusters of size n.
    pub counts: BTreeMap<usize, u64>,
    /// 𝒫_tot.
    pub total: u64,
    pub qubit_clicks: u64,
    /// Simulated time the counts were collected over.
    pub observed_time: f64,
}

impl BundleStats {
    pub fn count(&self, n: usize) -> u64 {
        self.counts.get(&n).copied().unwrap_or(0)
    }

    /// Π_n = 𝒫_n/𝒫_tot, undefined without events.
    pub fn purity(&self, n: usize) -> Option<f64> {
        (self.total > 0).then(|| self.count(n) as f64 / self.total as f64)
    }

    /// Binomial standard error of Π_n.
    pub fn purity_stderr(&self, n: usize) -> Option<f64> {
        let p = self.purity(n)?;
        Some((p * (1.0 - p) / self.total as f64).sqrt())
    }

    pub fn purities(&self) -> Vec<(usize, f64)> {
        self.counts
            .iter()
            .map(|(&n, &c)| (n, c as f64 / self.total as f64))
            .collect()
    }

    /// Emission events per unit time.
    pub fn rate(&self) -> Option<f64> {
        (self.observed_time > 0.0).then(|| self.total as f64 / self.observed_time)
    }

    pub fn merge(&mut self, other: &BundleStats) {
        for (&n, &c) in &other.counts {
            *self.counts.entry(n).or_insert(0) += c;
        }
        self.total += other.total;
        self.qubit_clicks += other.qubit_clicks;
        self.observed_time += other.observed_time;
    }
}

pub fn classify_bundles(clicks: &[ClickRecord], window: f64) -> Result<BundleStats> {
    let clusters = cluster_clicks(clicks, window)?;
    let mut stats = BundleStats {
        qubit_clicks: clicks.iter().filter(|c| c.channel == Channel::Qubit).count() as u64,
        ..BundleStats::default()
    };
    for c in &clusters {
        *stats.counts.entry(c.size).or_insert(0) += 1;
        stats.total += 1;
    }
    Ok(stats)
}

pub fn classify_ensemble(runs: &[TrajectoryResult], window: f64) -> Result<BundleStats> {
    let mut total = BundleStats::default();
    for r in runs {
        let mut s = classify_bundles(&r.clicks, window)?;
        s.observed_time = r.t_end;
        total.merge(&s);
    }
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SweepVariable {
    Kappa,
    Theta,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::Kappa => "kappa",
            SweepVariable::Theta => "theta",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PurityOptions {
    pub n_traj: usize,
    /// Length of each trajectory.
    pub t_end: f64,
    /// Bundle window in units of 1/κ.
    pub window_kappa: f64,
    pub seed: u64,
    pub numerics: Numerics,
    pub search: ResonanceSearch,
    /// Half-width of the resonance bracket around ω_q + 2ω_r, in units of ω_r.
    pub bracket_half_width: f64,
    pub exec: Execution,
}

impl Default for PurityOptions {
    fn default() -> Self {
        Self {
            n_traj: 100,
            t_end: 1e6,
            window_kappa: DEFAULT_WINDOW_KAPPA,
            seed: 0,
            numerics: Numerics::default(),
            search: ResonanceSearch::default(),
            bracket_half_width: 0.25,
            exec: Execution::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PurityPoint {
    pub value: f64,
    pub omega_l: Option<f64>,
    pub purity: Option<f64>,
    pub stderr: Option<f64>,
    pub stats: BundleStats,
    pub window: f64,
    pub flag: Option<String>,
}

/// Two-photon resonance of `p` by closed-system search around ω_q + 2ω_r.
pub fn locate_two_photon(p: &SystemParams, search: &ResonanceSearch, half_width: f64) -> Result<f64> {
    let centre = p.omega_q + 2.0 * p.omega_r;
    let half = half_width * p.omega_r;
    find_resonance_with(p, 2, (centre - half, centre + half), search)
}

/// Π_2 over a κ or θ grid, each point driven at its own two-photon resonance.
pub fn purity_sweep(p: &SystemParams, variable: SweepVariable, grid: &[f64], opts: &PurityOptions) -> Result<Vec<PurityPoint>> {
    check_grid(variable.name(), grid)?;
    if opts.n_traj == 0 {
        return Err(Error::param("n_traj", "must be >= 1"));
    }
    if !(opts.window_kappa > 0.0) {
        return Err(Error::param("window_kappa", "must be > 0"));
    }
    // the closed-system resonance does not depend on κ
    let shared = match variable {
        SweepVariable::Kappa => Some(locate_two_photon(p, &opts.search, opts.bracket_half_width)),
        SweepVariable::Theta => None,
    };
    let mut out = Vec::with_capacity(grid.len());
    for (i, &value) in grid.iter().enumerate() {
        let mut q = p.clone();
        match variable {
            SweepVariable::Kappa => q.kappa = value,
            SweepVariable::Theta => q.theta = value,
        }
        let window = opts.window_kappa / q.kappa;
        let located = match &shared {
            Some(Ok(w)) => Ok(*w),
            Some(Err(e)) => Err(Error::Integration(format!("resonance search failed: {e}"))),
            None => locate_two_photon(&q, &opts.search, opts.bracket_half_width),
        };
        let point = located.and_then(|w| {
            q.omega_l = w;
            let traj = TrajectoryOptions {
                numerics: opts.numerics.clone(),
                initial: None,
            };
            let mut sim = TrajectorySimulator::new(&q, &traj)?;
            sim.prepare(opts.t_end);
            let base = (i as u64) << 32;
            let indices: Vec<u64> = (0..opts.n_traj as u64).map(|k| base | k).collect();
            let runs = par_map(&indices, opts.exec, |&k| sim.run(opts.seed, k, opts.t_end, None))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            Ok((w, classify_ensemble(&runs, window)?))
        });
        out.push(match point {
            Ok((w, stats)) => PurityPoint {
                value,
                omega_l: Some(w),
                purity: stats.purity(2),
                stderr: stats.purity_stderr(2),
                stats,
                window,
                flag: None,
            },
            Err(e) => PurityPoint {
                value,
                omega_l: None,
                purity: None,
                stderr: None,
                stats: BundleStats::default(),
                window,
                flag: Some(e.to_string().replace(',', ";")),
            },
        });
    }
    Ok(out)
}

pub fn write_purity_csv<W: Write>(variable: SweepVariable, points: &[PurityPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{},purity2,stderr,events,bundles2,rate,omega_l,window,flag", variable.name())?;
    for pt in points {
        writeln!(
            w,
            "{:.10e},{},{},{},{},{},{},{:.10e},{}",
            pt.value,
            fmt_opt(pt.purity),
            fmt_opt(pt.stderr),
            pt.stats.total,
            pt.stats.count(2),
            fmt_opt(pt.stats.rate()),
            fmt_opt(pt.omega_l),
            pt.window,
            pt.flag.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}

/// Histogram of delays between centres of size-2 clusters, normalized by the
/// count expected for uncorrelated events at the same rate. `edges` are the
/// delay-bin boundaries.
pub fn bundle_g2_estimator(runs: &[TrajectoryResult], window: f64, edges: &[f64]) -> Result<CorrelationCurve> {
    check_grid("tau_bins", edges)?;
    if edges.len() < 2 || edges[0] < 0.0 {
        return Err(Error::param("tau_bins", "need >= 2 non-negative edges"));
    }
    let bins = edges.len() - 1;
    let tau_max = edges[bins];
    let mut counts = vec![0u64; bins];
    let mut expected = vec![0.0; bins];
    let mut events = 0u64;
    for r in runs {
        let centres: Vec<f64> = cluster_clicks(&r.clicks, window)?
            .iter()
            .filter(|c| c.size == 2)
            .map(Cluster::centre)
            .collect();
        events += centres.len() as u64;
        for (i, a) in centres.iter().enumerate() {
            for b in &centres[i + 1..] {
                let d = b - a;
                if d >= tau_max {
                    break;
                }
                if let Some(k) = edges.windows(2).position(|e| e[0] <= d && d < e[1]) {
                    counts[k] += 1;
                }
            }
        }
        // pairs of n uniform points on [0, T]: delay density 2(T − τ)/T²
        let n = centres.len() as f64;
        let t = r.t_end;
        if t > 0.0 {
            for (k, e) in edges.windows(2).enumerate() {
                let (a, b) = (e[0].min(t), e[1].min(t));
                let integral = t * (b - a) - 0.5 * (b * b - a * a);
                expected[k] += n * (n - 1.0) / (t * t) * integral;
            }
        }
    }
    let warn = (events < MIN_BUNDLE_EVENTS).then(|| format!("only {events} bundle events"));
    let mut values = Vec::with_capacity(bins);
    let mut errors = Vec::with_capacity(bins);
    let mut flags = Vec::with_capacity(bins);
    for k in 0..bins {
        if expected[k] > 0.0 {
            values.push(Some(counts[k] as f64 / expected[k]));
            errors.push((counts[k].max(1) as f64).sqrt() / expected[k]);
            flags.push(warn.clone());
        } else {
            values.push(None);
            errors.push(f64::NAN);
            flags.push(Some("no expected pairs".into()));
        }
    }
    Ok(CorrelationCurve {
        order: 2,
        taus: edges.windows(2).map(|e| 0.5 * (e[0] + e[1])).collect(),
        values,
        errors: Some(errors),
        n_phase: 0,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cav(t: f64) -> ClickRecord {
        ClickRecord {
            time: t,
            channel: Channel::Cavity,
        }
    }

    #[test]
    fn synthetic_clusters() {
        let k = 2e-3;
        let clicks = [cav(0.0), cav(0.5 / k), cav(100.0 / k)];
        let s = classify_bundles(&clicks, 10.0 / k).unwrap();
        assert_eq!(s.count(2), 1);
        assert_eq!(s.count(1), 1);
        assert_eq!(s.total, 2);
        assert_eq!(s.purity(2), Some(0.5));
    }

    #[test]
    fn empty_and_qubit_only() {
        let s = classify_bundles(&[], 1.0).unwrap();
        assert_eq!(s.total, 0);
        assert_eq!(s.purity(2), None);
        let q = ClickRecord {
            time: 1.0,
            channel: Channel::Qubit,
        };
        let s = classify_bundles(&[q], 1.0).unwrap();
        assert_eq!(s.total, 0);
        assert_eq!(s.qubit_clicks, 1);
        assert!(classify_bundles(&[], 0.0).is_err());
    }

    #[test]
    fn qubit_clicks_attach_to_clusters() {
        let q = ClickRecord {
            time: 1.5,
            channel: Channel::Qubit,
        };
        let c = cluster_clicks(&[cav(1.0), q, cav(2.0)], 5.0).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].size, 2);
        assert_eq!(c[0].qubit_clicks, 1);
    }

    #[test]
    fn clock_round_trip() {
        let h = 0.1;
        let c = Clock::at(1.0, h);
        assert_eq!(c.step, 10);
        assert_eq!(c.offset, 0.0);
        let c = Clock::at(1.05, h);
        assert_eq!(c.step, 10);
        assert!((c.time(h) - 1.05).abs() < 1e-12);
    }

    fn small(theta: f64) -> SystemParams {
        SystemParams {
            n_max: 6,
            kappa: 0.05,
            gamma_q: 0.01,
            drive: 0.2,
            omega_l: 5.0,
            ..SystemParams::reference(theta)
        }
    }

    #[test]
    fn reproducible_and_streams_differ() {
        let p = small(PI / 2.0);
        let a = mcwf_run(&p, 7, 400.0, 20.0).unwrap();
        let b = mcwf_run(&p, 7, 400.0, 20.0).unwrap();
        assert_eq!(a.clicks, b.clicks);
        assert_eq!(a.populations, b.populations);
        let opts = TrajectoryOptions::default();
        let runs = run_ensemble(&p, &opts, 7, 4, 400.0, Some(20.0), Execution::Sequential).unwrap();
        assert_eq!(runs[0].clicks, a.clicks);
        assert!(runs.iter().any(|r| r.clicks != a.clicks));
        assert!(a.clicks.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.clicks.iter().all(|c| c.time >= 0.0 && c.time <= 400.0));
    }

    #[test]
    fn norm_crossing_is_located() {
        let p = small(PI / 2.0);
        let mut sim = TrajectorySimulator::new(&p, &TrajectoryOptions::default()).unwrap();
        sim.prepare(1e4);
        let h = sim.stepper.dt();
        let mut psi = sim.psi0.clone();
        let mut clock = Clock { step: 0, offset: 0.0 };
        let mut prev = psi.norm_squared();
        // unnormalized norm decays monotonically towards the threshold
        for t in [10.0, 50.0, 123.4] {
            let hit = sim.evolve_until(&mut psi, &mut clock, Clock::at(t, h), 1e-300).unwrap();
            assert!(!hit);
            assert!(psi.norm_squared() <= prev + 1e-15);
            prev = psi.norm_squared();
        }
        let r = 0.5 * prev;
        let hit = sim.evolve_until(&mut psi, &mut clock, Clock::at(1e4, h), r).unwrap();
        assert!(hit);
        assert!((psi.norm_squared() - r).abs() <= JUMP_NORM_TOLERANCE);
    }

    #[test]
    fn poisson_bundles_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rate = 1e-3;
        let t_end = 2e6;
        let mut clicks = Vec::new();
        let mut t = 0.0;
        loop {
            t += -(1.0 - rng.random::<f64>()).ln() / rate;
            if t > t_end - 1.0 {
                break;
            }
            clicks.push(cav(t));
            clicks.push(cav(t + 0.5));
        }
        let run = TrajectoryResult {
            index: 0,
            seed: 0,
            t_end,
            clicks,
            photon_jumps: Vec::new(),
            times: Vec::new(),
            populations: Vec::new(),
        };
        let edges: Vec<f64> = (0..=10).map(|i| 50.0 + i as f64 * 500.0).collect();
        let g = bundle_g2_estimator(&[run], 5.0, &edges).unwrap();
        for (v, e) in g.values.iter().zip(g.errors.as_ref().unwrap()) {
            let v = v.unwrap();
            assert!((v - 1.0).abs() < 3.0 * e + 1e-9, "{v} ± {e}");
        }
    }
}
