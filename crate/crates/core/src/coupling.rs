//! Noise-mixing couplings of parabolic Anderson models.
//!
//! Two PAM copies driven by `Ẇ` and by `Ψ_α(y)Ẇ + Φ_α(y)Ẇ₀` respectively
//! (`y` the relative gap) feel identical noise where they agree and
//! independent noise where they differ, so they meet in finite time. The
//! staged construction chains such couplings over the intervals
//! `I_n = [T_n, T_{n+1})` to follow a solution `w` of the nonlinear equation
//! by a single PAM solution `u`.
//!
//! In the standalone pair the second copy `v` takes the mixed noise and
//! `y = (u - v)/v`. In the staged run the roles are reversed: the auxiliary
//! PAM `v` (restarted from `w` at every `T_n`) follows `Ẇ`, and `u` takes the
//! mixed noise with `y = (v - u)/u`.

use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::reaction::ReactionSpec;
use crate::solver::{
    evolve, first_exceedance_time, step_plan, Equation, SeriesRecorder, SolverConfig, StepRecord, TrajectoryState,
};
use crate::torus::{pairwise_sum, Field};

/// Relative sup-distance below which two copies are declared to have met.
pub const DEFAULT_MEET_TOL: f64 = 1e-8;
/// Relative floor on the denominator of the mixing argument.
pub const DEFAULT_FLOOR_V: f64 = 1e-30;
/// Clamp budget: fraction of cell-steps allowed to hit the positivity floor.
pub const CLAMP_BUDGET: f64 = 1e-3;

/// `Φ_α(y) = sqrt(min(α|y|, 1))`, `Ψ_α(y) = sqrt(1 - min(α|y|, 1))`.
#[inline]
pub fn mixing(y: f64, alpha: f64) -> (f64, f64) {
    let m = (alpha * y.abs()).min(1.0);
    let m = if m.is_nan() { 1.0 } else { m };
    (m.sqrt(), (1.0 - m).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MixingProfile {
    pub alpha: f64,
}

impl MixingProfile {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::domain(format!("mixing gain must be positive, got {alpha}")));
        }
        Ok(MixingProfile { alpha })
    }

    pub fn phi_psi(&self, y: f64) -> (f64, f64) {
        mixing(y, self.alpha)
    }
}

/// `log₊ x = log(max(x, e))`.
pub fn log_plus(x: f64) -> f64 {
    x.max(std::f64::consts::E).ln()
}

/// Upper end (exclusive) of the admissible range of `ε`: `exp(-e^e)`.
pub fn epsilon_limit() -> f64 {
    (-std::f64::consts::E.powf(std::f64::consts::E)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingSchedule {
    pub epsilon: f64,
    /// `1 / log log(1/ε)`.
    pub delta: f64,
    pub l_star: f64,
    pub eta: f64,
    pub n_max: usize,
    /// `T_0, …, T_{n_max}`.
    pub times: Vec<f64>,
    /// `T_n - T_0`, accumulated separately so differences stay exact.
    pub offsets: Vec<f64>,
    /// `ε_n`; the stage-0 value repeats `ε_1`.
    pub eps: Vec<f64>,
    /// `α_n`; stage 0 mixes with gain 1.
    pub alpha: Vec<f64>,
    /// `η_n`; `η_0 = 1/|log δ|`.
    pub eta_seq: Vec<f64>,
}

pub fn build_schedule(epsilon: f64, l_star: f64, eta: f64, n_max: usize) -> Result<CouplingSchedule> {
    if !(epsilon > 0.0 && epsilon < epsilon_limit()) {
        return Err(Error::domain(format!(
            "ε = {epsilon:e} lies outside (0, exp(-e^e)) = (0, {:e})",
            epsilon_limit()
        )));
    }
    if !(l_star > 1.0) || !l_star.is_finite() {
        return Err(Error::domain(format!("L_star must exceed 1, got {l_star}")));
    }
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::domain(format!("η must be positive, got {eta}")));
    }
    if n_max == 0 {
        return Err(Error::domain("schedule needs at least one stage"));
    }
    let delta = 1.0 / (1.0 / epsilon).ln().ln();
    let log_delta = delta.ln().abs();
    let t0 = l_star * (l_star / epsilon).ln();

    let mut offsets = Vec::with_capacity(n_max + 1);
    offsets.push(0.0);
    for n in 0..n_max {
        let gap = delta * log_plus(n as f64).powi(-3);
        offsets.push(offsets[n] + gap);
    }
    let times = offsets.iter().map(|o| t0 + o).collect();
    let eps_at = |n: usize| delta * (n.max(1) as f64).powf(-2.0 - 4.0 * eta) / log_delta.powi(4);
    let eta_at = |n: usize| (n.max(1) as f64).powf(-eta) / log_delta;
    let eps = (0..=n_max).map(eps_at).collect();
    let eta_seq = (0..=n_max).map(eta_at).collect();
    let alpha = (0..=n_max).map(|n| if n == 0 { 1.0 } else { eta_at(n) }).collect();
    Ok(CouplingSchedule {
        epsilon,
        delta,
        l_star,
        eta,
        n_max,
        times,
        offsets,
        eps,
        alpha,
        eta_seq,
    })
}

impl CouplingSchedule {
    pub fn t0(&self) -> f64 {
        self.times[0]
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.n_max]
    }

    /// True when `T_n`, `ε_n` (n ≥ 1) and `α_n` (n ≥ 1) are strictly monotone.
    pub fn is_monotone(&self) -> bool {
        let inc = self.times.windows(2).all(|w| w[1] > w[0]);
        let dec = |s: &[f64]| s[1..].windows(2).all(|w| w[1] < w[0]);
        inc && dec(&self.eps) && dec(&self.alpha)
    }
}

/// `(T_n - T_0) / (n δ (log₊ n)^{-3})` for `n = 1..=n_max`.
pub fn growth_ratios(delta: f64, n_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_max);
    let mut offset = 0.0;
    for n in 1..=n_max {
        offset += delta * log_plus((n - 1) as f64).powi(-3);
        let reference = n as f64 * delta * log_plus(n as f64).powi(-3);
        out.push(offset / reference);
    }
    out
}

/// Per-cell mixed increment `ψ dW + φ dW_aux` with `y = (leader - follower)/follower`.
fn mixed_increment(
    leader: &[f64],
    follower: &[f64],
    alpha: f64,
    floor_v: f64,
    dw: &[f64],
    dw_aux: &[f64],
    out: &mut [f64],
) {
    let top = follower.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = floor_v * top;
    for i in 0..out.len() {
        let den = follower[i].max(floor);
        let y = if den > 0.0 {
            (leader[i] - follower[i]) / den
        } else {
            f64::INFINITY
        };
        let (phi, psi) = mixing(y, alpha);
        out[i] = psi * dw[i] + phi * dw_aux[i];
    }
}

/// Gap statistics between two states, expressed against the follower's exponent.
struct Gap {
    /// `∫ (leader - follower)` in units of `2^e`.
    integral: f64,
    sup_abs: f64,
    min: f64,
    follower_sup: f64,
    e: i32,
}

fn gap(leader: &TrajectoryState, follower: &TrajectoryState) -> Gap {
    let e = follower.exponent();
    let a = leader.values_at_exponent(e);
    let b = follower.mantissa();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Gap {
        integral: leader.grid().spacing() * pairwise_sum(&d),
        sup_abs: d.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        min: d.iter().copied().fold(f64::INFINITY, f64::min),
        follower_sup: b.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        e,
    }
}

fn scale(e: i32) -> f64 {
    2f64.powi(e)
}

/// Sign of `leader - follower` when it is the same in every cell and not
/// identically zero.
fn definite_sign(leader: &TrajectoryState, follower: &TrajectoryState) -> Option<f64> {
    let a = leader.values_at_exponent(follower.exponent());
    let d = a.iter().zip(follower.mantissa()).map(|(x, y)| x - y);
    let (mut pos, mut neg) = (false, false);
    for v in d {
        pos |= v > 0.0;
        neg |= v < 0.0;
    }
    match (pos, neg) {
        (true, false) => Some(1.0),
        (false, true) => Some(-1.0),
        _ => None,
    }
}

/// Meeting rule shared by the pair and the staged run: the relative
/// sup-distance falls below `meet_tol`, or, for a gap that started with one
/// sign everywhere, its integral reaches zero.
fn has_met(g: &Gap, meet_tol: f64, sign: Option<f64>) -> bool {
    if g.sup_abs <= meet_tol * g.follower_sup {
        return true;
    }
    matches!(sign, Some(s) if s * g.integral <= 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairOptions {
    pub meet_tol: f64,
    pub floor_v: f64,
    /// Record the gap every `stride` steps (0 disables recording).
    pub stride: u64,
}

impl Default for PairOptions {
    fn default() -> Self {
        PairOptions {
            meet_tol: DEFAULT_MEET_TOL,
            floor_v: DEFAULT_FLOOR_V,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairRecord {
    pub time: f64,
    /// `X(t) = ∫ (v - u)`.
    pub x: f64,
    pub sup_gap: f64,
    /// `min (v - u)`.
    pub min_gap: f64,
    pub v_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairOutcome {
    pub meeting: Option<f64>,
    pub series: Vec<PairRecord>,
    /// `v` clamped on more than the budgeted fraction of cell-steps.
    pub degenerate: bool,
}

fn pair_record(u: &TrajectoryState, v: &TrajectoryState) -> PairRecord {
    // Gap of v over u, measured against v's exponent.
    let g = gap(v, u);
    let s = scale(g.e);
    PairRecord {
        time: u.time,
        x: g.integral * s,
        sup_gap: g.sup_abs * s,
        min_gap: g.min * s,
        v_sup: v.sup(),
    }
}

/// Evolves `u` (driven by `u.noise`) and `v` (driven by the mixed noise built
/// from `u.noise` and the independent `v.noise`) to `t_end`.
///
/// Once the copies meet, `v` is set equal to `u` after every step; both
/// streams keep advancing so the draws never depend on the meeting time.
#[allow(clippy::too_many_arguments)]
pub fn evolve_coupled_pam_pair(
    u: &mut TrajectoryState,
    v: &mut TrajectoryState,
    profile: MixingProfile,
    mu: f64,
    sigma: f64,
    cfg: &SolverConfig,
    t_end: f64,
    opts: &PairOptions,
) -> Result<PairOutcome> {
    cfg.validate(u.grid())?;
    if u.grid() != v.grid() || u.time != v.time {
        return Err(Error::domain("coupled pair must share grid and time"));
    }
    if t_end < u.time {
        return Err(Error::domain(format!("cannot evolve backwards to {t_end}")));
    }
    if v.mantissa().iter().any(|x| *x <= 0.0) {
        return Err(Error::Degeneracy(
            "v must be strictly positive for the mixing argument".into(),
        ));
    }
    let n = u.grid().n_points();
    let var_scale = 1.0 / u.grid().spacing();
    let (mut dw, mut dw0, mut mixed) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let sign = definite_sign(u, v);
    let mut series = Vec::new();
    let record = |series: &mut Vec<PairRecord>, u: &TrajectoryState, v: &TrajectoryState| {
        if opts.stride > 0 && u.steps % opts.stride == 0 {
            series.push(pair_record(u, v));
        }
    };
    record(&mut series, u, v);

    let mut meeting = if has_met(&gap(u, v), opts.meet_tol, None) {
        v.copy_profile_from(u);
        Some(u.time)
    } else {
        None
    };
    let start = u.time;
    let (whole, partial) = step_plan(start, t_end, cfg.dt);
    let total = whole + u64::from(partial > 0.0);
    for k in 0..total {
        let dt = if k < whole { cfg.dt } else { partial };
        u.noise.fill_gaussian(dt * var_scale, &mut dw);
        v.noise.fill_gaussian(dt * var_scale, &mut dw0);
        let now = if k + 1 == total {
            t_end
        } else {
            start + (k + 1) as f64 * cfg.dt
        };
        if meeting.is_some() {
            u.step_pam_with(cfg, dt, mu, sigma, &dw)?;
            v.copy_profile_from(u);
            v.steps += 1;
            v.cell_steps += n as u64;
        } else {
            let lead = u.values_at_exponent(v.exponent());
            mixed_increment(&lead, v.mantissa(), profile.alpha, opts.floor_v, &dw, &dw0, &mut mixed);
            u.step_pam_with(cfg, dt, mu, sigma, &dw)?;
            v.step_pam_with(cfg, dt, mu, sigma, &mixed)?;
        }
        u.time = now;
        v.time = now;
        if meeting.is_none() && has_met(&gap(u, v), opts.meet_tol, sign) {
            v.copy_profile_from(u);
            meeting = Some(now);
        }
        record(&mut series, u, v);
    }
    let degenerate = v.clamp_fraction() > CLAMP_BUDGET;
    if degenerate {
        log::warn!(
            "v hit the positivity floor on {:.3}% of cell-steps; the mixing argument is ill-conditioned",
            100.0 * v.clamp_fraction()
        );
    }
    Ok(PairOutcome {
        meeting,
        series,
        degenerate,
    })
}

/// `(t, X(t))` from a recorded pair run whose initial data were ordered
/// (`u_0 ≤ v_0`). Fails if the order was lost by more than `1e-9` relative
/// to `sup v`.
pub fn l1_difference_series(outcome: &PairOutcome) -> Result<Vec<(f64, f64)>> {
    const TOL: f64 = 1e-9;
    for r in &outcome.series {
        if r.min_gap < -TOL * r.v_sup.max(f64::MIN_POSITIVE) {
            return Err(Error::Ordering {
                time: r.time,
                gap: r.min_gap,
            });
        }
    }
    Ok(outcome.series.iter().map(|r| (r.time, r.x)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagedOptions {
    pub meet_tol: f64,
    pub floor_v: f64,
    /// Stride of the recorded `w` series during the stages.
    pub stride: u64,
}

impl Default for StagedOptions {
    fn default() -> Self {
        StagedOptions {
            meet_tol: DEFAULT_MEET_TOL,
            floor_v: DEFAULT_FLOOR_V,
            stride: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageEvent {
    pub n: usize,
    pub t_n: f64,
    pub eps_n: f64,
    pub alpha_n: f64,
    /// Meeting of `u` and `v` inside `I_n` (none for the final row).
    pub meeting_time: Option<f64>,
    /// Stage 0 carries `τ(T_0) = ∞` within the horizon; later rows carry
    /// `‖w(T_n) - u(T_n)‖ ≤ ε_n ‖w(T_n)‖`.
    pub a_n: bool,
    /// `sup_{I_n} ‖u - w‖ ≤ M_n` (none for the final row).
    pub b_n: Option<bool>,
    /// `‖v(T_n-) - v(T_n)‖` (none at `T_0`).
    pub jump_gap: Option<f64>,
    /// `‖log w(T_n) - log u(T_n)‖`.
    pub log_ratio_sup: f64,
    pub log_w_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingEventLog {
    pub events: Vec<StageEvent>,
}

impl CouplingEventLog {
    pub const CSV_HEADER: &'static str = "n,T_n,eps_n,alpha_n,meeting_time,A_n,B_n,jump_gap,log_ratio_sup";

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.events {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.n,
                e.t_n,
                e.eps_n,
                e.alpha_n,
                opt(e.meeting_time),
                e.a_n,
                e.b_n.map(|b| b.to_string()).unwrap_or_default(),
                opt(e.jump_gap),
                e.log_ratio_sup
            );
        }
        out
    }

    pub fn log_ratio_series(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.log_ratio_sup).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StagedRun {
    pub log: CouplingEventLog,
    /// First exceedance of `e^{-γt}` by `sup w` on `[T_0, T_{n_max}]`.
    pub tau: Option<f64>,
    pub w_series: Vec<StepRecord>,
    pub w: TrajectoryState,
    pub u: TrajectoryState,
    pub w_clamp_fraction: f64,
}

/// `sup |a - b|` with both states expressed against `2^e`.
fn sup_diff_at(a: &TrajectoryState, b: &TrajectoryState, e: i32) -> f64 {
    let x = a.values_at_exponent(e);
    let y = b.values_at_exponent(e);
    x.iter().zip(&y).fold(0.0_f64, |m, (p, q)| m.max((p - q).abs()))
}

fn log_ratio_sup(w: &TrajectoryState, u: &TrajectoryState) -> f64 {
    let (a, b) = (w.log_profile(), u.log_profile());
    a.iter().zip(&b).fold(0.0_f64, |m, (p, q)| {
        let d = (p - q).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    })
}

fn require_positive(state: &TrajectoryState, what: &str) -> Result<()> {
    if state.mantissa().iter().any(|v| *v <= 0.0) {
        return Err(Error::Oscillation(format!(
            "{what} is not strictly positive at t = {}",
            state.time
        )));
    }
    Ok(())
}

/// Runs the staged construction for one trajectory.
///
/// `w` follows the nonlinear equation on `[0, T_{n_max}]` with stream 0 of
/// `noise`; stage `n` uses the auxiliary stream `n + 1`.
pub fn run_staged_coupling(
    spec: Arc<ReactionSpec>,
    w0: &Field,
    schedule: &CouplingSchedule,
    cfg: &SolverConfig,
    noise: NoiseStream,
    opts: &StagedOptions,
) -> Result<StagedRun> {
    let report = spec.check_high_noise();
    if !report.holds {
        return Err(Error::domain(format!(
            "high-noise condition fails: sup f/z = {} ≥ L_g²/64 = {}",
            report.sup_f_ratio, report.threshold
        )));
    }
    spec.require_coupling_ready()?;
    if w0.values().iter().any(|v| *v < 0.0) || w0.max() <= 0.0 {
        return Err(Error::domain(
            "initial data must be nonnegative and not identically zero",
        ));
    }
    cfg.validate(w0.grid())?;
    let gamma = spec.dissipation_rate();
    let (mu, sigma) = (spec.mu, spec.sigma);
    let n = w0.grid().n_points();
    let var_scale = 1.0 / w0.grid().spacing();

    let mut w = TrajectoryState::new(Arc::clone(&spec), w0, noise.sibling(0));
    let mut rec = SeriesRecorder::new(opts.stride);
    evolve(&mut w, cfg, Equation::Nonlinear, schedule.t0(), &mut [&mut rec])?;
    let mut w_series = rec.rows;
    w_series.push(w.snapshot());
    require_positive(&w, "w(T_0)")?;

    let mut u = w.clone();
    let mut v = w.clone();
    let (mut dw, mut dw_aux, mut mixed) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut events = Vec::with_capacity(schedule.n_max + 1);
    let mut prev_v_end: Option<TrajectoryState> = None;

    for stage in 0..=schedule.n_max {
        let t_n = schedule.times[stage];
        let e_ref = w.exponent();
        let w_sup = w.sup_at(e_ref);
        let k_n = sup_diff_at(&u, &w, e_ref);
        let jump_gap = prev_v_end.as_ref().map(|pv| sup_diff_at(pv, &w, e_ref) * scale(e_ref));
        require_positive(&w, "w")?;
        require_positive(&u, "u")?;
        let mut event = StageEvent {
            n: stage,
            t_n,
            eps_n: schedule.eps[stage],
            alpha_n: schedule.alpha[stage],
            meeting_time: None,
            a_n: if stage == 0 {
                true
            } else {
                k_n <= schedule.eps[stage] * w_sup
            },
            b_n: None,
            jump_gap,
            log_ratio_sup: log_ratio_sup(&w, &u),
            log_w_sup: w.log_sup(),
        };
        if stage == schedule.n_max {
            events.push(event);
            break;
        }

        // Restart the auxiliary PAM from w.
        v.copy_profile_from(&w);
        let m_n = k_n + (schedule.eps[stage] + schedule.alpha[stage].max(schedule.eps[stage])) * w_sup;
        let mut worst = 0.0_f64;
        let mut aux = noise.sibling(stage as u64 + 1);
        let alpha = schedule.alpha[stage];
        let sign = definite_sign(&v, &u);
        let mut met = has_met(&gap(&v, &u), opts.meet_tol, None);
        if met {
            u.copy_profile_from(&v);
            event.meeting_time = Some(t_n);
        }

        let t_next = schedule.times[stage + 1];
        let (whole, partial) = step_plan(t_n, t_next, cfg.dt);
        let total = whole + u64::from(partial > 0.0);
        for k in 0..total {
            let dt = if k < whole { cfg.dt } else { partial };
            let now = if k + 1 == total {
                t_next
            } else {
                t_n + (k + 1) as f64 * cfg.dt
            };
            w.noise.fill_gaussian(dt * var_scale, &mut dw);
            aux.fill_gaussian(dt * var_scale, &mut dw_aux);
            if !met {
                let lead = v.values_at_exponent(u.exponent());
                mixed_increment(&lead, u.mantissa(), alpha, opts.floor_v, &dw, &dw_aux, &mut mixed);
            }
            w.step_she_with(cfg, dt, &dw)?;
            v.step_pam_with(cfg, dt, mu, sigma, &dw)?;
            if met {
                u.copy_profile_from(&v);
                u.steps += 1;
                u.cell_steps += n as u64;
            } else {
                u.step_pam_with(cfg, dt, mu, sigma, &mixed)?;
            }
            for s in [&mut w, &mut v, &mut u] {
                s.time = now;
            }
            if !met && has_met(&gap(&v, &u), opts.meet_tol, sign) {
                u.copy_profile_from(&v);
                met = true;
                event.meeting_time = Some(now);
            }
            worst = worst.max(sup_diff_at(&u, &w, e_ref));
            if w.steps % opts.stride.max(1) == 0 {
                w_series.push(w.snapshot());
            }
        }
        event.b_n = Some(worst <= m_n);
        events.push(event);
        prev_v_end = Some(v.clone());
    }

    if w_series.last().map(|r| r.time) != Some(w.time) {
        w_series.push(w.snapshot());
    }
    let w_clamp_fraction = w.clamp_fraction();
    if w_clamp_fraction > CLAMP_BUDGET {
        return Err(Error::Degeneracy(format!(
            "w hit the positivity floor on {:.3}% of cell-steps",
            100.0 * w_clamp_fraction
        )));
    }
    let tau = first_exceedance_time(&w_series, gamma, schedule.t0());
    if let Some(first) = events.first_mut() {
        first.a_n = tau.is_none();
    }
    Ok(StagedRun {
        log: CouplingEventLog { events },
        tau,
        w_series,
        w,
        u,
        w_clamp_fraction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::Grid;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mixing_examples() {
        assert_eq!(mixing(0.0, 1.0), (0.0, 1.0));
        assert_eq!(mixing(2.0, 0.5), (1.0, 0.0));
        assert_eq!(mixing(-5.0, 1.0), (1.0, 0.0));
        let (p, s) = mixing(0.3, 0.7);
        assert_abs_diff_eq!(p * p + s * s, 1.0, epsilon = 1e-12);
        assert!(MixingProfile::new(0.0).is_err());
    }

    #[test]
    fn schedule_examples() {
        let eps = epsilon_limit() * (1.0 - 1e-15);
        let s = build_schedule(eps, 2.0, 0.1, 5).unwrap();
        assert_abs_diff_eq!(s.delta, (-1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(s.times[1] - s.times[0], s.delta, epsilon = 1e-12);
        assert_abs_diff_eq!(s.times[2] - s.times[0], 2.0 * s.delta, epsilon = 1e-12);
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(s.t0(), 2.0 * (2f64.ln() + e.powf(e)), epsilon = 1e-9);
        assert_abs_diff_eq!(s.eps[3], (-1f64).exp() * 3f64.powf(-2.4), epsilon = 1e-9);
        assert!(s.is_monotone());
        assert!(build_schedule(0.1, 2.0, 0.1, 5).is_err());
        assert!(build_schedule(1e-10, 1.0, 0.1, 5).is_err());
        assert!(build_schedule(1e-10, 2.0, 0.0, 5).is_err());
    }

    fn pam_state(w0: &Field, seed: u64, stream: u64) -> TrajectoryState {
        let spec = Arc::new(ReactionSpec::linear(0.0, 1.0).unwrap());
        TrajectoryState::new(spec, w0, NoiseStream::new(seed, stream, 0))
    }

    #[test]
    fn equal_data_meet_at_once_and_stay_equal() {
        let g = Grid::new(32).unwrap();
        let w0 = Field::constant(g, 1.0);
        let (mut u, mut v) = (pam_state(&w0, 1, 0), pam_state(&w0, 1, 1));
        let cfg = SolverConfig::with_dt(1e-3);
        let out = evolve_coupled_pam_pair(
            &mut u,
            &mut v,
            MixingProfile::new(1.0).unwrap(),
            0.0,
            1.0,
            &cfg,
            0.2,
            &PairOptions::default(),
        )
        .unwrap();
        assert_eq!(out.meeting, Some(0.0));
        assert!(u.same_profile(&v));
        assert!(out.series.iter().all(|r| r.x == 0.0));
    }

    #[test]
    fn deterministic_pair_conserves_mass_gap() {
        let g = Grid::new(32).unwrap();
        let u0 = Field::constant(g, 1.0);
        let v0 = Field::from_fn(g, |x| 1.1 + 0.05 * (std::f64::consts::PI * x).cos()).unwrap();
        let (mut u, mut v) = (pam_state(&u0, 1, 0), pam_state(&v0, 1, 1));
        let cfg = SolverConfig::with_dt(1e-3);
        let out = evolve_coupled_pam_pair(
            &mut u,
            &mut v,
            MixingProfile::new(1.0).unwrap(),
            0.0,
            0.0,
            &cfg,
            0.3,
            &PairOptions::default(),
        )
        .unwrap();
        assert_eq!(out.meeting, None);
        let xs = l1_difference_series(&out).unwrap();
        for (_, x) in &xs {
            assert_abs_diff_eq!(*x, xs[0].1, epsilon = 1e-12);
        }
    }
}
