//! Ensemble reductions: Lyapunov exponent, CLT shape diagnostics, dissipation
//! frequency, oscillation moments, decay-exponent fits and the tail sum.
//!
//! Every reduction sums with [`pairwise_sum`] over trajectories in
//! trajectory-id order, so results do not depend on how the ensemble was
//! scheduled.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};
use crate::solver::{first_exceedance_time, StepRecord};
use crate::torus::pairwise_sum;

/// `γ₂(σ) = (σ²/8)(1 + σ²/12)`.
pub fn gamma2(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 / 8.0 * (1.0 + s2 / 12.0)
}

/// Almost-sure limit of `t⁻¹ log w(t, x)`: `μ - 2γ₂(σ)`.
pub fn lyapunov_target(mu: f64, sigma: f64) -> f64 {
    mu - 2.0 * gamma2(sigma)
}

/// A log-profile recorded at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub log_profile: Vec<f64>,
}

impl Snapshot {
    pub fn mean_log(&self) -> f64 {
        pairwise_sum(&self.log_profile) / self.log_profile.len() as f64
    }

    /// `sup_x log w - inf_x log w`.
    pub fn log_spread(&self) -> f64 {
        let hi = self.log_profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.log_profile.iter().copied().fold(f64::INFINITY, f64::min);
        hi - lo
    }

    fn require_positive(&self) -> Result<()> {
        if self.log_profile.iter().any(|v| !v.is_finite()) {
            return Err(Error::Positivity(format!(
                "field not strictly positive at t = {}",
                self.time
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectorySeries {
    pub trajectory_id: u64,
    pub rows: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
}

impl TrajectorySeries {
    pub fn snapshot_at(&self, t: f64) -> Result<&Snapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.time - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or_else(|| Error::domain(format!("trajectory {} has no snapshot at t = {t}", self.trajectory_id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    /// Free-form description of the run (spec, solver config, seed, …).
    pub metadata: serde_json::Value,
    pub trajectories: Vec<TrajectorySeries>,
}

impl EnsembleResult {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    fn snapshots_at(&self, t: f64) -> Result<Vec<&Snapshot>> {
        if self.trajectories.is_empty() {
            return Err(Error::domain("empty ensemble"));
        }
        let snaps = self
            .trajectories
            .iter()
            .map(|tr| tr.snapshot_at(t))
            .collect::<Result<Vec<_>>>()?;
        for s in &snaps {
            s.require_positive()?;
        }
        Ok(snaps)
    }
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    let mean = pairwise_sum(xs) / n as f64;
    let dev: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = if n > 1 {
        pairwise_sum(&dev) / (n - 1) as f64
    } else {
        0.0
    };
    MeanSe {
        mean,
        se: (var / n as f64).sqrt(),
        n,
    }
}

/// Sample skewness and excess kurtosis (moment estimators).
pub fn skew_kurtosis(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let pow = |k: i32| pairwise_sum(&xs.iter().map(|x| (x - mean).powi(k)).collect::<Vec<_>>()) / n;
    let m2 = pow(2);
    if m2 == 0.0 {
        return (0.0, 0.0);
    }
    (pow(3) / m2.powf(1.5), pow(4) / (m2 * m2) - 3.0)
}

/// Ordinary least squares `y ≈ a + b x`; returns `(a, b, se(b), residual dof)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64, usize) {
    let n = x.len();
    let mx = pairwise_sum(x) / n as f64;
    let my = pairwise_sum(y) / n as f64;
    let sxx = pairwise_sum(&x.iter().map(|v| (v - mx) * (v - mx)).collect::<Vec<_>>());
    let sxy = pairwise_sum(&x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).collect::<Vec<_>>());
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = n.saturating_sub(2);
    let rss = pairwise_sum(
        &x.iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .collect::<Vec<_>>(),
    );
    let se = if dof > 0 {
        (rss / dof as f64 / sxx).sqrt()
    } else {
        f64::NAN
    };
    (intercept, slope, se, dof)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    /// Ensemble mean of `t⁻¹ · mean_x log w(t, x)` at the window end.
    pub lambda_hat: f64,
    pub stderr: f64,
    /// Ensemble mean of per-trajectory slopes of `mean_x log w` over the window.
    pub regression_lambda: f64,
    pub regression_stderr: f64,
    pub n_trajectories: usize,
}

/// Lyapunov exponent from the snapshots in `t_window = (t_start, t_end)`.
pub fn lyapunov_estimate(ensemble: &EnsembleResult, t_window: (f64, f64)) -> Result<LyapunovEstimate> {
    let (t0, t1) = t_window;
    if !(t1 > 0.0) || t0 > t1 {
        return Err(Error::domain(format!("bad window ({t0}, {t1})")));
    }
    let end = ensemble.snapshots_at(t1)?;
    let direct: Vec<f64> = end.iter().map(|s| s.mean_log() / t1).collect();
    let mut slopes = Vec::with_capacity(ensemble.len());
    for tr in &ensemble.trajectories {
        let pts: Vec<&Snapshot> = tr
            .snapshots
            .iter()
            .filter(|s| s.time >= t0 - 1e-12 && s.time <= t1 + 1e-12)
            .collect();
        for s in &pts {
            s.require_positive()?;
        }
        if pts.len() >= 2 {
            let x: Vec<f64> = pts.iter().map(|s| s.time).collect();
            let y: Vec<f64> = pts.iter().map(|s| s.mean_log()).collect();
            slopes.push(linear_fit(&x, &y).1);
        }
    }
    let d = mean_se(&direct);
    let (reg, reg_se) = if slopes.len() == ensemble.len() {
        let r = mean_se(&slopes);
        (r.mean, r.se)
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(LyapunovEstimate {
        lambda_hat: d.mean,
        stderr: d.se,
        regression_lambda: reg,
        regression_stderr: reg_se,
        n_trajectories: d.n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltReport {
    pub time: f64,
    /// Ensemble mean of `sup_x log w - inf_x log w`.
    pub spatial_flatness: f64,
    pub flatness_se: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Mean and standard deviation of `Y = (mean_x log w - (μ - 2γ₂)t)/√t`.
    pub y_mean: f64,
    pub y_sd: f64,
    pub n_trajectories: usize,
}

pub fn clt_diagnostics(ensemble: &EnsembleResult, t: f64, mu: f64, sigma: f64) -> Result<CltReport> {
    let snaps = ensemble.snapshots_at(t)?;
    let drift = lyapunov_target(mu, sigma) * t;
    let y: Vec<f64> = snaps.iter().map(|s| (s.mean_log() - drift) / t.sqrt()).collect();
    let spread: Vec<f64> = snaps.iter().map(|s| s.log_spread()).collect();
    let flat = mean_se(&spread);
    let ys = mean_se(&y);
    let (skewness, excess_kurtosis) = skew_kurtosis(&y);
    Ok(CltReport {
        time: t,
        spatial_flatness: flat.mean,
        flatness_se: flat.se,
        skewness,
        excess_kurtosis,
        y_mean: ys.mean,
        y_sd: ys.se * (ys.n as f64).sqrt(),
        n_trajectories: ys.n,
    })
}

/// A binomial frequency with its 95% Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub frequency: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn wilson_interval(successes: usize, trials: usize) -> Proportion {
    let z = Normal::standard().inverse_cdf(0.975);
    let n = trials as f64;
    let p = if trials == 0 { 0.0 } else { successes as f64 / n };
    if trials == 0 {
        return Proportion {
            successes,
            trials,
            frequency: 0.0,
            lower: 0.0,
            upper: 1.0,
        };
    }
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    Proportion {
        successes,
        trials,
        frequency: p,
        lower: (centre - half).max(0.0),
        upper: (centre + half).min(1.0),
    }
}

/// Fraction of trajectories whose recorded `sup w` stays at or below
/// `e^{-γt}` for every recorded `t ∈ [t_from, horizon]`.
pub fn dissipation_probability(series: &[&[StepRecord]], gamma: f64, t_from: f64, horizon: f64) -> Result<Proportion> {
    let mut ok = 0;
    for rows in series {
        let last = rows.last().map(|r| r.time).unwrap_or(f64::NEG_INFINITY);
        if last < horizon - 1e-9 * horizon.abs().max(1.0) {
            return Err(Error::domain(format!(
                "series ends at {last}, before the horizon {horizon}"
            )));
        }
        let window: Vec<StepRecord> = rows.iter().copied().filter(|r| r.time <= horizon).collect();
        if first_exceedance_time(&window, gamma, t_from).is_none() {
            ok += 1;
        }
    }
    Ok(wilson_interval(ok, series.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OscillationReport {
    pub k: u32,
    /// `(t, mean, se)` of `(sup w / inf w)^k`.
    pub moments: Vec<(f64, f64, f64)>,
    pub max_moment: f64,
    /// Least-squares slope of the moment against `t`, and its standard error.
    pub trend_slope: f64,
    pub trend_se: f64,
}

/// Monte Carlo `E[(sup w / inf w)^k]` at each time of `t_list`.
pub fn oscillation_moments(ensemble: &EnsembleResult, t_list: &[f64], k: u32) -> Result<OscillationReport> {
    if t_list.is_empty() || k == 0 {
        return Err(Error::domain("need at least one time and k ≥ 1"));
    }
    let mut moments = Vec::with_capacity(t_list.len());
    for &t in t_list {
        let snaps = ensemble.snapshots_at(t)?;
        let vals: Vec<f64> = snaps.iter().map(|s| (k as f64 * s.log_spread()).exp()).collect();
        let m = mean_se(&vals);
        moments.push((t, m.mean, m.se));
    }
    let max_moment = moments.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
    let (trend_slope, trend_se) = if moments.len() >= 3 {
        let x: Vec<f64> = moments.iter().map(|m| m.0).collect();
        let y: Vec<f64> = moments.iter().map(|m| m.1).collect();
        let (_, b, se, _) = linear_fit(&x, &y);
        (b, se)
    } else if moments.len() == 2 {
        let (a, b) = (moments[0], moments[1]);
        ((b.1 - a.1) / (b.0 - a.0), (a.2 * a.2 + b.2 * b.2).sqrt() / (b.0 - a.0))
    } else {
        (0.0, 0.0)
    };
    Ok(OscillationReport {
        k,
        moments,
        max_moment,
        trend_slope,
        trend_se,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    /// `-slope` of `log(series)` against `log(T_n)`.
    pub beta_hat: f64,
    /// Half-width of the 95% confidence interval of `beta_hat`.
    pub half_width: f64,
    pub window: (f64, f64),
    pub points_used: usize,
    pub points_excluded: usize,
}

impl DecayFit {
    /// `beta_hat - half_width > 0`.
    pub fn positive_at_95(&self) -> bool {
        self.beta_hat - self.half_width > 0.0
    }
}

/// Minimum number of usable stage points for a decay fit.
pub const MIN_FIT_POINTS: usize = 10;

/// Least-squares power-law fit of a stage series against the stage times.
/// Nonpositive or non-finite values are excluded and counted.
pub fn decay_exponent_fit(times: &[f64], series: &[f64]) -> Result<DecayFit> {
    if times.len() != series.len() {
        return Err(Error::domain("times and series differ in length"));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (&t, &s) in times.iter().zip(series) {
        if s > 0.0 && s.is_finite() && t > 0.0 {
            x.push(t.ln());
            y.push(s.ln());
        }
    }
    let excluded = times.len() - x.len();
    if x.len() < MIN_FIT_POINTS {
        return Err(Error::domain(format!(
            "decay fit needs {MIN_FIT_POINTS} positive points, got {} ({excluded} excluded)",
            x.len()
        )));
    }
    let (_, slope, se, dof) = linear_fit(&x, &y);
    let tq = StudentsT::new(0.0, 1.0, dof as f64)
        .map_err(|e| Error::domain(format!("t distribution: {e}")))?
        .inverse_cdf(0.975);
    let kept: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    Ok(DecayFit {
        beta_hat: -slope,
        half_width: tq * se,
        window: (kept[0], kept[kept.len() - 1]),
        points_used: x.len(),
        points_excluded: excluded,
    })
}

/// Remainder target of the tail sum.
pub const TAIL_REMAINDER: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailSumRow {
    pub delta: f64,
    pub sum: f64,
    /// `sum / δ^{1/3}`.
    pub ratio: f64,
    /// Last index summed.
    pub terms: u64,
    /// Integral-test bound on the neglected tail.
    pub remainder_bound: f64,
}

/// `S(δ) = Σ_{n≥3} exp(-δ^{-1/2} (log n)^{3/2})`, truncated where the
/// integral-test bound on the tail drops below [`TAIL_REMAINDER`].
///
/// With `φ(y) = y - c y^{3/2}` and `c = δ^{-1/2}`, the tail beyond `N` is at
/// most `∫_{log N}^∞ e^{φ(y)} dy ≤ e^{φ(y₀)} / |φ'(y₀)|` for `y₀ = log N` once
/// `φ' < 0` (φ is concave).
pub fn tail_sum(delta: f64) -> Result<TailSumRow> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::domain(format!("tail sum needs 0 < δ < 1, got {delta}")));
    }
    let c = delta.powf(-0.5);
    let bound = |y: f64| {
        let dphi = 1.0 - 1.5 * c * y.sqrt();
        if dphi >= 0.0 {
            f64::INFINITY
        } else {
            (y - c * y.powf(1.5)).exp() / -dphi
        }
    };
    let mut n: u64 = 3;
    while bound((n as f64).ln()) >= TAIL_REMAINDER {
        n = (n as f64 * 1.05).ceil() as u64 + 1;
    }
    let terms: Vec<f64> = (3..=n).map(|k| (-c * (k as f64).ln().powf(1.5)).exp()).collect();
    let sum = pairwise_sum(&terms);
    Ok(TailSumRow {
        delta,
        sum,
        ratio: sum / delta.cbrt(),
        terms: n,
        remainder_bound: bound((n as f64).ln()),
    })
}

pub fn tail_sum_check(deltas: &[f64]) -> Result<Vec<TailSumRow>> {
    deltas.iter().map(|&d| tail_sum(d)).collect()
}

/// `∫_0^∞ exp(z - z^{3/2}) dz`, the constant of the tail-sum bound
/// (composite Simpson on `[0, 40]`; the integrand is below `e^{-200}` beyond).
pub fn tail_sum_constant() -> f64 {
    let (a, b, m) = (0.0_f64, 40.0_f64, 40_000usize);
    let h = (b - a) / m as f64;
    let f = |z: f64| (z - z.powf(1.5)).exp();
    let terms: Vec<f64> = (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * f(a + i as f64 * h)
        })
        .collect();
    pairwise_sum(&terms) * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gamma2_examples() {
        assert_eq!(gamma2(0.0), 0.0);
        assert_abs_diff_eq!(gamma2(1.0), 13.0 / 96.0, epsilon = 1e-15);
        assert_abs_diff_eq!(gamma2(2.0), 2.0 / 3.0, epsilon = 1e-15);
        assert_eq!(gamma2(-1.5), gamma2(1.5));
        assert_abs_diff_eq!(lyapunov_target(0.0, 1.0), -13.0 / 48.0, epsilon = 1e-15);
    }

    #[test]
    fn planted_power_laws_are_recovered() {
        let times: Vec<f64> = (0..20).map(|k| 30.0 + k as f64 * 0.4).collect();
        let series: Vec<f64> = times.iter().map(|t| 3.0 * t.powf(-0.5)).collect();
        let fit = decay_exponent_fit(&times, &series).unwrap();
        assert_abs_diff_eq!(fit.beta_hat, 0.5, epsilon = 1e-6);
        let flat = vec![0.7; 20];
        let fit = decay_exponent_fit(&times, &flat).unwrap();
        assert_abs_diff_eq!(fit.beta_hat, 0.0, epsilon = 1e-12);
        let zeros = vec![0.0; 20];
        assert!(decay_exponent_fit(&times, &zeros).is_err());
    }

    #[test]
    fn wilson_interval_brackets_the_frequency() {
        let p = wilson_interval(160, 200);
        assert_eq!(p.frequency, 0.8);
        assert!(p.lower < 0.8 && p.upper > 0.8);
        // Reference values of the 95% Wilson interval for 160/200.
        assert_abs_diff_eq!(p.lower, 0.7391, epsilon = 1e-4);
        assert_abs_diff_eq!(p.upper, 0.8495, epsilon = 1e-4);
        let all = wilson_interval(200, 200);
        assert_eq!(all.upper, 1.0);
        assert!(all.lower > 0.98);
    }

    #[test]
    fn tail_sum_small_case_matches_direct_summation() {
        let row = tail_sum(0.05).unwrap();
        let c = 0.05f64.powf(-0.5);
        let direct: f64 = (3..200_000u64).map(|k| (-c * (k as f64).ln().powf(1.5)).exp()).sum();
        assert_abs_diff_eq!(row.sum, direct, epsilon = 1e-14);
        assert!(row.remainder_bound < TAIL_REMAINDER);
    }

    #[test]
    fn tail_sum_constant_value() {
        // Independent check with a much finer trapezoid rule.
        let m = 400_000;
        let h = 40.0 / m as f64;
        let trap: f64 = (0..=m)
            .map(|i| {
                let z = i as f64 * h;
                let w = if i == 0 || i == m { 0.5 } else { 1.0 };
                w * (z - z.powf(1.5)).exp()
            })
            .sum::<f64>()
            * h;
        assert_abs_diff_eq!(tail_sum_constant(), trap, epsilon = 1e-8);
    }

    #[test]
    fn moments_and_fits() {
        let (s, k) = skew_kurtosis(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_abs_diff_eq!(s, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k, -1.3, epsilon = 1e-12);
        let (a, b, se, _) = linear_fit(&[0.0, 1.0, 2.0, 3.0], &[1.0, 3.0, 5.0, 7.0]);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(b, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(se, 0.0, epsilon = 1e-14);
    }
}
