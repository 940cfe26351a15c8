//! Effective two-photon Rabi rate: closed form, resonance search and
//! numerical extraction from closed-system dynamics.

use std::f64::consts::PI;
use std::io::Write;

use rustfft::FftPlanner;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hilbert::{basis_index, Qubit, SystemParams, C64};
use crate::linalg::{CMat, CVec};
use crate::model::DrivenModel;
use crate::parallel::{par_map, Execution};
use crate::settings::Numerics;

/// Reject ω_q within this fraction of ω_r from the pole at ω_q = ω_r.
const POLE_GUARD: f64 = 1e-6;
const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Closed-form two-photon rate
/// (√2 Ωλ²/2){sin²θ[1/(ω_q+ω_r) + 1/(ω_q−ω_r)][1/(2ω_r) − 1/(ω_q+ω_r)] + 2cos²θ/ω_r²}.
///
/// The population of `|2,e⟩` oscillates as sin²(Ω_eff t), i.e. at angular
/// frequency 2Ω_eff.
pub fn omega_eff_analytic(p: &SystemParams) -> Result<f64> {
    let (wr, wq) = (p.omega_r, p.omega_q);
    if !(wr > 0.0) {
        return Err(Error::param("omega_r", "must be > 0"));
    }
    if (wq - wr).abs() < POLE_GUARD * wr {
        return Err(Error::param("omega_q", "too close to the pole at omega_q = omega_r"));
    }
    let (s, c) = p.theta.sin_cos();
    let transverse = s * s * (1.0 / (wq + wr) + 1.0 / (wq - wr)) * (1.0 / (2.0 * wr) - 1.0 / (wq + wr));
    let longitudinal = 2.0 * c * c / (wr * wr);
    Ok(2f64.sqrt() * p.drive * p.lambda * p.lambda / 2.0 * (transverse + longitudinal))
}

/// Settings for [`find_resonance_with`].
#[derive(Clone, Debug, Serialize)]
pub struct ResonanceSearch {
    /// Length of each closed-system run; `None` picks 3π/(2Ω_eff).
    pub horizon: Option<f64>,
    pub scan_points: usize,
    /// Final bracket width relative to ω_L.
    pub rel_tol: f64,
    pub numerics: Numerics,
}

impl Default for ResonanceSearch {
    fn default() -> Self {
        Self {
            horizon: None,
            scan_points: 41,
            rel_tol: 1e-7,
            numerics: Numerics::default(),
        }
    }
}

/// Stroboscopic closed-system evolution from `|0,g⟩`: ψ(mT) = U_Tᵐ ψ(0),
/// with U_T diagonalized once.
struct Stroboscope {
    period: f64,
    values: Vec<C64>,
    /// Bare-basis rows times eigenvectors: `rows[b][i] = ⟨b|E v_i⟩ c_i`.
    weights: Vec<Vec<C64>>,
}

impl Stroboscope {
    fn new(p: &SystemParams, targets: &[usize], numerics: &Numerics) -> Result<Self> {
        let closed = SystemParams {
            kappa: 0.0,
            gamma_q: 0.0,
            ..p.clone()
        };
        if closed.drive_period().is_none() {
            return Err(Error::param("omega_l", "resonance search needs omega_l > 0"));
        }
        let full = Numerics {
            dynamics_levels: Some(closed.dim()),
            ..numerics.clone()
        };
        let model = DrivenModel::new(&closed, &full)?;
        let stepper = model.unitary_stepper();
        let u = stepper.period_map();
        let (q, t) = u.schur().unpack();
        let values: Vec<C64> = (0..t.nrows()).map(|i| t[(i, i)]).collect();
        let mut psi0 = CVec::zeros(closed.dim());
        psi0[basis_index(0, Qubit::Ground)] = C64::new(1.0, 0.0);
        let coeff = q.adjoint() * model.from_bare_vector(&psi0);
        let bare_vectors: CMat = model.embedding() * &q;
        let weights = targets
            .iter()
            .map(|&b| (0..values.len()).map(|i| bare_vectors[(b, i)] * coeff[i]).collect())
            .collect();
        Ok(Self {
            period: stepper.period(),
            values,
            weights,
        })
    }

    /// Populations of each target at t = mT, m = 0..steps.
    fn series(&self, steps: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::with_capacity(steps + 1); self.weights.len()];
        let mut z: Vec<Vec<C64>> = self.weights.clone();
        for _ in 0..=steps {
            for (series, zs) in out.iter_mut().zip(&z) {
                series.push(zs.iter().sum::<C64>().norm_sqr());
            }
            for zs in z.iter_mut() {
                for (zi, l) in zs.iter_mut().zip(&self.values) {
                    *zi *= l;
                }
            }
        }
        out
    }

    fn max_population(&self, steps: usize) -> f64 {
        self.series(steps)[0].iter().cloned().fold(0.0, f64::max)
    }
}

fn default_horizon(p: &SystemParams) -> Result<f64> {
    let rate = omega_eff_analytic(p)?.abs();
    if !(rate > 0.0) {
        return Err(Error::param("drive", "no two-photon coupling to set the horizon"));
    }
    Ok(3.0 * PI / (2.0 * rate))
}

pub fn find_resonance(p: &SystemParams, j: usize, bracket: (f64, f64)) -> Result<f64> {
    find_resonance_with(p, j, bracket, &ResonanceSearch::default())
}

/// Drive frequency in `bracket` maximizing max_t P_{j,e}(t) of closed-system
/// evolution from `|0,g⟩`.
pub fn find_resonance_with(p: &SystemParams, j: usize, bracket: (f64, f64), search: &ResonanceSearch) -> Result<f64> {
    p.validate()?;
    let (lo, hi) = bracket;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::param("bracket", "need 0 < lo < hi"));
    }
    if j > p.n_max {
        return Err(Error::param("j", "photon number beyond the truncation"));
    }
    if search.scan_points < 3 {
        return Err(Error::param("scan_points", "need at least 3 scan points"));
    }
    let horizon = match search.horizon {
        Some(h) if h > 0.0 => h,
        Some(_) => return Err(Error::param("horizon", "must be > 0")),
        None => default_horizon(p)?,
    };
    let target = basis_index(j, Qubit::Excited);
    let objective = |w: f64| -> Result<f64> {
        let q = SystemParams {
            omega_l: w,
            ..p.clone()
        };
        let s = Stroboscope::new(&q, &[target], &search.numerics)?;
        let steps = (horizon / s.period).ceil() as usize;
        Ok(s.max_population(steps))
    };

    // coarse scan, then zoom in around the best point
    let mut a = lo;
    let mut b = hi;
    let mut points = search.scan_points;
    let mut first = true;
    let (mut best_w, mut best_v);
    loop {
        let step = (b - a) / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| a + i as f64 * step).collect();
        let values = grid.iter().map(|&w| objective(w)).collect::<Result<Vec<f64>>>()?;
        let (imax, vmax) = values
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        if first && (imax == 0 || imax == points - 1) {
            return Err(Error::NoResonance { lo, hi });
        }
        first = false;
        best_w = grid[imax];
        best_v = vmax;
        a = (best_w - 2.0 * step).max(lo);
        b = (best_w + 2.0 * step).min(hi);
        points = 21;
        // stop zooming once the grid resolves the line shape over the horizon
        if step < 0.5 / horizon {
            break;
        }
    }

    // golden-section refinement on [a, b]
    let tol = search.rel_tol * best_w;
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = objective(x1)?;
    let mut f2 = objective(x2)?;
    while b - a > tol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = objective(x1)?;
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = objective(x2)?;
        }
    }
    let (w, v) = if f1 > f2 { (x1, f1) } else { (x2, f2) };
    Ok(if v >= best_v { w } else { best_w })
}

/// Located resonance and the rate extracted there.
#[derive(Clone, Debug, Serialize)]
pub struct ResonanceFit {
    /// Located drive frequency ω_L*.
    pub omega_l: f64,
    /// Ω_num: half the angular frequency of the slow P_{2,e} oscillation.
    pub omega_num: f64,
    /// The oscillation frequency itself.
    pub oscillation: f64,
    /// Share of the spectral power in the peak, in [0, 1].
    pub quality: f64,
}

/// Settings for [`omega_eff_numeric_with`].
#[derive(Clone, Debug, Serialize)]
pub struct RateExtraction {
    pub search: ResonanceSearch,
    /// Half-width of the resonance bracket around ω_q + 2ω_r, in units of ω_r.
    pub bracket_half_width: f64,
    /// Length of the analyzed series in units of the expected oscillation period.
    pub oscillations: f64,
    /// Reject fits whose peak holds less than this share of the power.
    pub min_quality: f64,
}

impl Default for RateExtraction {
    fn default() -> Self {
        Self {
            search: ResonanceSearch::default(),
            bracket_half_width: 0.25,
            oscillations: 8.0,
            min_quality: 0.3,
        }
    }
}

pub fn omega_eff_numeric(p: &SystemParams) -> Result<ResonanceFit> {
    omega_eff_numeric_with(p, &RateExtraction::default())
}

/// Locate the two-photon resonance, evolve `|0,g⟩` there and read the slow
/// oscillation frequency of P_{2,e} off its stroboscopic (once per period)
/// samples.
pub fn omega_eff_numeric_with(p: &SystemParams, cfg: &RateExtraction) -> Result<ResonanceFit> {
    let centre = p.omega_q + 2.0 * p.omega_r;
    let half = cfg.bracket_half_width * p.omega_r;
    let omega_l = find_resonance_with(p, 2, (centre - half, centre + half), &cfg.search)?;
    let at = SystemParams {
        omega_l,
        ..p.clone()
    };
    let expected = 2.0 * omega_eff_analytic(p)?.abs();
    let length = cfg.oscillations * 2.0 * PI / expected;
    let s = Stroboscope::new(&at, &[basis_index(2, Qubit::Excited)], &cfg.search.numerics)?;
    let steps = (length / s.period).ceil() as usize;
    let series = s.series(steps).swap_remove(0);
    let (oscillation, quality) = dominant_frequency(&series, s.period)?;
    if quality < cfg.min_quality {
        return Err(Error::NoSpectralPeak { quality });
    }
    Ok(ResonanceFit {
        omega_l,
        omega_num: oscillation / 2.0,
        oscillation,
        quality,
    })
}

/// Angular frequency of the strongest non-constant component of a uniformly
/// sampled series, plus the share of spectral power in that peak.
pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<(f64, f64)> {
    let n = series.len();
    if n < 16 {
        return Err(Error::NoSpectralPeak { quality: 0.0 });
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect();
    let x: Vec<f64> = series.iter().zip(&window).map(|(v, w)| (v - mean) * w).collect();

    let pad = 4;
    let len = (n * pad).next_power_of_two();
    let mut buf: Vec<C64> = x.iter().map(|&v| C64::new(v, 0.0)).collect();
    buf.resize(len, C64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let power: Vec<f64> = buf[..len / 2].iter().map(|z| z.norm_sqr()).collect();
    // skip the window's main lobe around zero frequency
    let first = 2 * len / n + 1;
    if first + 2 >= power.len() {
        return Err(Error::NoSpectralPeak { quality: 0.0 });
    }
    let (k, _) = power
        .iter()
        .enumerate()
        .skip(first)
        .fold((first, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    let bin = 2.0 * PI / (len as f64 * dt);
    let band = 3 * len / n;
    let total: f64 = power[first..].iter().sum();
    let peak: f64 = power[k.saturating_sub(band).max(first)..(k + band + 1).min(power.len())]
        .iter()
        .sum();
    let quality = if total > 0.0 { peak / total } else { 0.0 };

    // refine by least-squares fit of c0 + c1 cos(wt) + c2 sin(wt), which does
    // not suffer from the negative-frequency image of a short record
    let explained = |w: f64| -> f64 {
        let mut ata = nalgebra::Matrix3::<f64>::zeros();
        let mut atb = nalgebra::Vector3::<f64>::zeros();
        for (i, &v) in series.iter().enumerate() {
            let (s, c) = (w * i as f64 * dt).sin_cos();
            let row = nalgebra::Vector3::new(1.0, c, s);
            ata += row * row.transpose();
            atb += row * v;
        }
        match ata.cholesky() {
            Some(ch) => atb.dot(&ch.solve(&atb)),
            None => f64::MIN,
        }
    };
    let (mut a, mut b) = ((k as f64 - 1.5) * bin, (k as f64 + 1.5) * bin);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let (mut f1, mut f2) = (explained(x1), explained(x2));
    while b - a > 1e-10 * bin * len as f64 {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = explained(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = explained(x2);
        }
    }
    Ok((0.5 * (a + b), quality))
}

/// Maximum over `[0, t_end]` of the bare populations `targets` in the closed
/// system started from `|0,g⟩`, sampled at every integrator substep.
pub fn population_maxima(p: &SystemParams, targets: &[(usize, Qubit)], t_end: f64, numerics: &Numerics) -> Result<Vec<f64>> {
    let closed = SystemParams {
        kappa: 0.0,
        gamma_q: 0.0,
        ..p.clone()
    };
    closed.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::param("t_end", "must be > 0"));
    }
    if let Some(&(n, _)) = targets.iter().find(|(n, _)| *n > p.n_max) {
        return Err(Error::param("targets", format!("photon number {n} beyond the truncation")));
    }
    let full = Numerics {
        dynamics_levels: Some(closed.dim()),
        ..numerics.clone()
    };
    let model = DrivenModel::new(&closed, &full)?;
    let stepper = model.unitary_stepper();
    let rows: Vec<_> = targets
        .iter()
        .map(|&(n, q)| model.embedding().row(basis_index(n, q)).into_owned())
        .collect();
    let mut psi0 = CVec::zeros(closed.dim());
    psi0[basis_index(0, Qubit::Ground)] = C64::new(1.0, 0.0);
    let mut psi = model.from_bare_vector(&psi0);
    let mut maxima: Vec<f64> = rows.iter().map(|r| (r * &psi)[0].norm_sqr()).collect();
    let steps = (t_end / stepper.dt()).ceil() as usize;
    for k in 0..steps {
        psi = stepper.step(k % stepper.substeps()) * &psi;
        for (m, r) in maxima.iter_mut().zip(&rows) {
            *m = m.max((r * &psi)[0].norm_sqr());
        }
    }
    let drift = (psi.norm() - 1.0).abs();
    if drift > crate::evolution::NORM_TOLERANCE {
        return Err(Error::Integration(format!("norm drift {drift:.3e}")));
    }
    Ok(maxima)
}

/// One row of the analytic-versus-numeric comparison.
#[derive(Clone, Debug, Serialize)]
pub struct RateRow {
    pub theta: f64,
    pub analytic: f64,
    pub numeric: Option<f64>,
    pub quality: Option<f64>,
    pub omega_l: Option<f64>,
    pub flag: Option<String>,
}

/// Compare closed form and numerics over a θ grid.
pub fn rate_comparison(p: &SystemParams, thetas: &[f64], cfg: &RateExtraction, exec: Execution) -> Result<Vec<RateRow>> {
    crate::correlations::check_grid("theta_grid", thetas)?;
    par_map(thetas, exec, |&theta| {
        let q = SystemParams { theta, ..p.clone() };
        let analytic = omega_eff_analytic(&q)?;
        Ok(match omega_eff_numeric_with(&q, cfg) {
            Ok(fit) => RateRow {
                theta,
                analytic,
                numeric: Some(fit.omega_num),
                quality: Some(fit.quality),
                omega_l: Some(fit.omega_l),
                flag: None,
            },
            Err(e) => RateRow {
                theta,
                analytic,
                numeric: None,
                quality: None,
                omega_l: None,
                flag: Some(e.to_string().replace(',', ";")),
            },
        })
    })
    .into_iter()
    .collect()
}

pub fn write_rate_csv<W: Write>(rows: &[RateRow], mut w: W) -> std::io::Result<()> {
    use crate::correlations::fmt_opt;
    writeln!(w, "theta,omega_analytic,omega_numeric,fit_quality,omega_l,flag")?;
    for r in rows {
        writeln!(
            w,
            "{:.10e},{:.10e},{},{},{},{}",
            r.theta,
            r.analytic,
            fmt_opt(r.numeric),
            fmt_opt(r.quality),
            fmt_opt(r.omega_l),
            r.flag.as_deref().unwrap_or("")
        )?;
    }
    Ok(())
}
