//! Linearly implicit Euler–Maruyama time stepping for
//!
//! ```text
//! ∂_t w = ∂²_x w + f(w) + g(w) Ẇ        (nonlinear equation)
//! ∂_t u = ∂²_x u + μ u + σ u Ẇ          (parabolic Anderson model)
//! ```
//!
//! One step of size `dt` with weight `θ` solves
//!
//! ```text
//! (I - θ dt Δ_h) w' = e^{μ dt} [ w + dt (1-θ) Δ_h w + dt (f(w) - μ w) + g(w) ΔW ]
//! ```
//!
//! with `μ = f'(0+)`. The linear part of the drift is integrated exactly, so a
//! constant shift of `μ` multiplies the whole trajectory by `e^{μt}` and the
//! remaining reaction term is explicit. Noise is evaluated at the pre-step
//! field (Itô).
//!
//! A state stores its profile as `mantissa · 2^exponent`. The exponent is
//! renormalized by exact powers of two whenever the largest mantissa leaves
//! `[2^-64, 2^64]`, so strongly dissipative runs never underflow: reactions
//! are evaluated through their rates, `f(w)/2^e = mantissa · f(w)/w`.

use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::reaction::ReactionSpec;
use crate::torus::{pairwise_sum, Field, Grid};

const RENORM_HI: f64 = 18_446_744_073_709_551_616.0; // 2^64
const RENORM_LO: f64 = 1.0 / RENORM_HI;

/// Relative slack used when splitting an interval into whole steps.
const STEP_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub dt: f64,
    /// Implicitness of the Laplacian: 1 is backward Euler, 0 is explicit.
    pub theta: f64,
    pub positivity_floor: f64,
    pub blowup_cap: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 2.5e-4,
            theta: 1.0,
            positivity_floor: 0.0,
            blowup_cap: 1e12,
        }
    }
}

impl SolverConfig {
    pub fn with_dt(dt: f64) -> Self {
        SolverConfig {
            dt,
            ..Default::default()
        }
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::domain(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::domain(format!("theta must lie in [0, 1], got {}", self.theta)));
        }
        if !(self.positivity_floor >= 0.0) || !self.positivity_floor.is_finite() {
            return Err(Error::domain(format!(
                "positivity floor must be finite and ≥ 0, got {}",
                self.positivity_floor
            )));
        }
        if !(self.blowup_cap > 0.0) {
            return Err(Error::domain(format!(
                "blow-up cap must be positive, got {}",
                self.blowup_cap
            )));
        }
        let h2 = grid.spacing() * grid.spacing();
        if self.theta == 0.0 && self.dt > 0.5 * h2 {
            return Err(Error::domain(format!(
                "explicit scheme needs dt ≤ spacing²/2 = {:e}, got {:e}",
                0.5 * h2,
                self.dt
            )));
        }
        Ok(())
    }
}

/// Solver for `(I - r Δ)x = d` with the cyclic second difference `Δ`
/// (unit spacing absorbed in `r`), via Sherman–Morrison on top of a
/// precomputed Thomas factorization.
#[derive(Debug, Clone)]
pub struct CyclicSolver {
    r: f64,
    cp: Vec<f64>,
    inv_denom: Vec<f64>,
    /// `r · inv_denom`, so the forward sweep is one multiply-add per cell.
    r_inv_denom: Vec<f64>,
    /// `B⁻¹ u` for the rank-one correction vector `u`.
    z: Vec<f64>,
    beta_over_gamma: f64,
    correction_denom: f64,
}

impl CyclicSolver {
    pub fn new(n: usize, r: f64) -> Self {
        assert!(n >= 3, "cyclic solve needs n ≥ 3");
        let b = 1.0 + 2.0 * r;
        let off = -r;
        let gamma = -b;
        let (alpha, beta) = (off, off);
        let mut diag = vec![b; n];
        diag[0] = b - gamma;
        diag[n - 1] = b - alpha * beta / gamma;

        let mut cp = vec![0.0; n];
        let mut inv_denom = vec![0.0; n];
        inv_denom[0] = 1.0 / diag[0];
        cp[0] = off * inv_denom[0];
        for i in 1..n {
            let denom = diag[i] - off * cp[i - 1];
            inv_denom[i] = 1.0 / denom;
            cp[i] = off * inv_denom[i];
        }
        let r_inv_denom = inv_denom.iter().map(|d| r * d).collect();
        let mut solver = CyclicSolver {
            r,
            cp,
            inv_denom,
            r_inv_denom,
            z: vec![0.0; n],
            beta_over_gamma: beta / gamma,
            correction_denom: 1.0,
        };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        solver.thomas(&mut u);
        solver.correction_denom = 1.0 + u[0] + solver.beta_over_gamma * u[n - 1];
        solver.z = u;
        solver
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    fn thomas(&self, d: &mut [f64]) {
        let n = d.len();
        d[0] *= self.inv_denom[0];
        for i in 1..n {
            d[i] = self.inv_denom[i] * d[i] + self.r_inv_denom[i] * d[i - 1];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cp[i] * d[i + 1];
        }
    }

    /// Solves the tridiagonal part in place and returns the weight of the
    /// rank-one correction; the solution is `d - weight · z`.
    fn sweep(&self, d: &mut [f64]) -> f64 {
        let n = d.len();
        debug_assert_eq!(n, self.z.len());
        self.thomas(d);
        (d[0] + self.beta_over_gamma * d[n - 1]) / self.correction_denom
    }

    /// Overwrites `d` with the solution.
    pub fn solve_in_place(&self, d: &mut [f64]) {
        let factor = self.sweep(d);
        for (x, z) in d.iter_mut().zip(&self.z) {
            *x -= factor * z;
        }
    }
}

/// Linear drift and noise coefficients of a PAM, or the full nonlinear pair.
#[derive(Debug, Clone, Copy)]
enum Dynamics<'a> {
    Nonlinear(&'a ReactionSpec),
    Pam { mu: f64, sigma: f64 },
}

#[derive(Debug, Clone, Default)]
struct Workspace {
    rhs: Vec<f64>,
    noise: Vec<f64>,
    solver: Option<(u64, u64, CyclicSolver)>,
}

/// Everything a recorder sees after a step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub time: f64,
    pub sup: f64,
    pub inf: f64,
    pub log_sup: f64,
    pub log_inf: f64,
    pub mass: f64,
    pub clamp_count: u64,
}

pub trait Recorder {
    /// Record every `stride()`-th step (by global step index).
    fn stride(&self) -> u64 {
        1
    }
    fn wants_profile(&self) -> bool {
        false
    }
    fn record(&mut self, rec: &StepRecord, log_profile: Option<&[f64]>);
}

/// One trajectory of the nonlinear equation or of a PAM.
#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub time: f64,
    mantissa: Vec<f64>,
    exponent: i32,
    grid: Grid,
    pub spec: Arc<ReactionSpec>,
    pub noise: NoiseStream,
    /// Steps taken since construction (partial steps included).
    pub steps: u64,
    pub clamp_count: u64,
    pub cell_steps: u64,
    work: Workspace,
}

#[inline]
fn pow2(e: i32) -> f64 {
    // Exact for every exponent the renormalization produces; underflows to
    // zero (or saturates to infinity) only far outside any physical range.
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        2f64.powi(e)
    }
}

impl TrajectoryState {
    pub fn new(spec: Arc<ReactionSpec>, initial: &Field, noise: NoiseStream) -> Self {
        let mut state = TrajectoryState {
            time: 0.0,
            mantissa: initial.values().to_vec(),
            exponent: 0,
            grid: initial.grid(),
            spec,
            noise,
            steps: 0,
            clamp_count: 0,
            cell_steps: 0,
            work: Workspace::default(),
        };
        state.renormalize();
        state
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn mantissa(&self) -> &[f64] {
        &self.mantissa
    }

    /// Binary exponent: true values are `mantissa · 2^exponent`.
    pub fn exponent(&self) -> i32 {
        self.exponent
    }

    /// The profile in ordinary floating point (may underflow to zero).
    pub fn field(&self) -> Field {
        let s = pow2(self.exponent);
        let values = self.mantissa.iter().map(|m| m * s).collect();
        Field::from_values(self.grid, values).expect("state values stay finite")
    }

    /// The profile expressed against the binary exponent `e`.
    pub fn values_at_exponent(&self, e: i32) -> Vec<f64> {
        let s = pow2(self.exponent - e);
        self.mantissa.iter().map(|m| m * s).collect()
    }

    /// `log w(x_i)`, exact even when `w` itself is below the f64 range.
    pub fn log_profile(&self) -> Vec<f64> {
        let shift = self.exponent as f64 * std::f64::consts::LN_2;
        self.mantissa.iter().map(|m| m.ln() + shift).collect()
    }

    pub fn log_sup(&self) -> f64 {
        let m = self.mantissa.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        m.ln() + self.exponent as f64 * std::f64::consts::LN_2
    }

    pub fn log_inf(&self) -> f64 {
        let m = self.mantissa.iter().copied().fold(f64::INFINITY, f64::min);
        m.ln() + self.exponent as f64 * std::f64::consts::LN_2
    }

    /// `sup |w|` in units of `2^e`.
    pub fn sup_at(&self, e: i32) -> f64 {
        self.mantissa.iter().fold(0.0_f64, |a, v| a.max(v.abs())) * pow2(self.exponent - e)
    }

    pub fn sup(&self) -> f64 {
        self.mantissa.iter().fold(0.0_f64, |a, v| a.max(v.abs())) * pow2(self.exponent)
    }

    pub fn inf(&self) -> f64 {
        self.mantissa.iter().copied().fold(f64::INFINITY, f64::min) * pow2(self.exponent)
    }

    pub fn mass(&self) -> f64 {
        self.grid.spacing() * pairwise_sum(&self.mantissa) * pow2(self.exponent)
    }

    pub fn snapshot(&self) -> StepRecord {
        StepRecord {
            time: self.time,
            sup: self.sup(),
            inf: self.inf(),
            log_sup: self.log_sup(),
            log_inf: self.log_inf(),
            mass: self.mass(),
            clamp_count: self.clamp_count,
        }
    }

    /// Fraction of cell-steps whose value had to be raised to the floor.
    pub fn clamp_fraction(&self) -> f64 {
        if self.cell_steps == 0 {
            0.0
        } else {
            self.clamp_count as f64 / self.cell_steps as f64
        }
    }

    /// Replaces the profile with that of `other` (bit-exact, exponent included).
    pub fn copy_profile_from(&mut self, other: &TrajectoryState) {
        self.mantissa.copy_from_slice(&other.mantissa);
        self.exponent = other.exponent;
    }

    pub fn same_profile(&self, other: &TrajectoryState) -> bool {
        self.exponent == other.exponent && self.mantissa == other.mantissa
    }

    fn renormalize(&mut self) {
        let m = self.mantissa.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        if m == 0.0 || (RENORM_LO..=RENORM_HI).contains(&m) {
            return;
        }
        let k = m.log2().floor() as i32;
        let s = pow2(-k);
        for v in &mut self.mantissa {
            *v *= s;
        }
        self.exponent += k;
    }

    fn solver_for(&mut self, dt: f64, theta: f64) -> &CyclicSolver {
        let key = (dt.to_bits(), theta.to_bits());
        let stale = !matches!(&self.work.solver, Some((a, b, _)) if (*a, *b) == key);
        if stale {
            let h = self.grid.spacing();
            let solver = CyclicSolver::new(self.grid.n_points(), theta * dt / (h * h));
            self.work.solver = Some((key.0, key.1, solver));
        }
        &self.work.solver.as_ref().unwrap().2
    }

    /// One step of size `dt` driven by the increment `dw` (not drawn from
    /// the state's own stream).
    fn advance(&mut self, dynamics: Dynamics<'_>, cfg: &SolverConfig, dt: f64, dw: &[f64]) -> Result<()> {
        let n = self.grid.n_points();
        debug_assert_eq!(dw.len(), n);
        let h = self.grid.spacing();
        let explicit_weight = (1.0 - cfg.theta) * dt / (h * h);
        let mut rhs = std::mem::take(&mut self.work.rhs);
        rhs.resize(n, 0.0);

        let v = &self.mantissa;
        let mu = match dynamics {
            Dynamics::Nonlinear(spec) => {
                let scale = pow2(self.exponent);
                let mu = spec.mu;
                for i in 0..n {
                    let vi = v[i];
                    let z = vi * scale;
                    let (rf, rg) = (spec.f.rate(z), spec.g.rate(z));
                    rhs[i] = vi + dt * vi * (rf - mu) + vi * rg * dw[i];
                }
                mu
            }
            // Same arithmetic as above with `rf - μ = 0`, so a linear spec
            // reproduces this branch bit for bit.
            Dynamics::Pam { mu, sigma } => {
                for ((r, &vi), &d) in rhs.iter_mut().zip(v).zip(dw) {
                    *r = vi + vi * sigma * d;
                }
                mu
            }
        };
        if explicit_weight != 0.0 {
            for i in 0..n {
                let lap = v[self.grid.left(i)] - 2.0 * v[i] + v[self.grid.right(i)];
                rhs[i] += explicit_weight * lap;
            }
        }
        let growth = (mu * dt).exp();
        if growth != 1.0 {
            for r in &mut rhs {
                *r *= growth;
            }
        }

        let floor = if cfg.positivity_floor == 0.0 {
            0.0
        } else {
            (cfg.positivity_floor * pow2(-self.exponent)).min(f64::MAX)
        };
        let mut clamps = 0u64;
        let mut top = 0.0_f64;
        let mut check = 0.0_f64;
        let mut finish = |x: &mut f64| {
            check += *x;
            if *x < floor {
                *x = floor;
                clamps += 1;
            }
            top = top.max(x.abs());
        };
        if cfg.theta > 0.0 {
            let solver = self.solver_for(dt, cfg.theta);
            let factor = solver.sweep(&mut rhs);
            for (x, z) in rhs.iter_mut().zip(&solver.z) {
                *x -= factor * z;
                finish(x);
            }
        } else {
            rhs.iter_mut().for_each(&mut finish);
        }
        if !check.is_finite() {
            let time = self.time + dt;
            self.work.rhs = rhs;
            return Err(Error::Numeric {
                time,
                message: "non-finite value in field".into(),
            });
        }
        std::mem::swap(&mut self.mantissa, &mut rhs);
        self.work.rhs = rhs;
        self.clamp_count += clamps;
        self.cell_steps += n as u64;
        self.steps += 1;
        self.time += dt;

        if top != 0.0 && !(RENORM_LO..=RENORM_HI).contains(&top) {
            self.renormalize();
        }
        let log_sup = self.log_sup();
        if log_sup > cfg.blowup_cap.ln() {
            return Err(Error::Blowup {
                time: self.time,
                sup: log_sup.exp(),
                cap: cfg.blowup_cap,
            });
        }
        Ok(())
    }

    fn draw_increment(&mut self, dt: f64) -> Vec<f64> {
        let mut dw = std::mem::take(&mut self.work.noise);
        dw.resize(self.grid.n_points(), 0.0);
        self.noise.fill_gaussian(dt / self.grid.spacing(), &mut dw);
        dw
    }

    fn step_own_noise(&mut self, dynamics: Dynamics<'_>, cfg: &SolverConfig, dt: f64) -> Result<()> {
        let dw = self.draw_increment(dt);
        let out = self.advance(dynamics, cfg, dt, &dw);
        self.work.noise = dw;
        out
    }

    /// Step of the nonlinear equation with a caller-supplied increment field.
    pub fn step_she_with(&mut self, cfg: &SolverConfig, dt: f64, dw: &[f64]) -> Result<()> {
        let spec = Arc::clone(&self.spec);
        self.advance(Dynamics::Nonlinear(&spec), cfg, dt, dw)
    }

    /// PAM step with a caller-supplied increment field.
    pub fn step_pam_with(&mut self, cfg: &SolverConfig, dt: f64, mu: f64, sigma: f64, dw: &[f64]) -> Result<()> {
        self.advance(Dynamics::Pam { mu, sigma }, cfg, dt, dw)
    }
}

/// One step of the nonlinear equation, consuming one increment of `state.noise`.
pub fn step_she(state: &mut TrajectoryState, cfg: &SolverConfig) -> Result<()> {
    let spec = Arc::clone(&state.spec);
    state.step_own_noise(Dynamics::Nonlinear(&spec), cfg, cfg.dt)
}

/// One PAM step with coefficients `(μ, σ)`, consuming one increment of `state.noise`.
pub fn step_pam(state: &mut TrajectoryState, cfg: &SolverConfig, mu: f64, sigma: f64) -> Result<()> {
    state.step_own_noise(Dynamics::Pam { mu, sigma }, cfg, cfg.dt)
}

/// Splits `[t0, t1]` into whole steps of `dt` plus a shortened last step.
/// Returns the number of whole steps and the length of the partial one (0 if none).
pub fn step_plan(t0: f64, t1: f64, dt: f64) -> (u64, f64) {
    let span = t1 - t0;
    if span <= dt * STEP_SLACK {
        return (0, 0.0);
    }
    let ratio = span / dt;
    let whole = ratio.round();
    if (ratio - whole).abs() <= STEP_SLACK * ratio.max(1.0) {
        return (whole as u64, 0.0);
    }
    let whole = ratio.floor();
    let rest = span - whole * dt;
    (whole as u64, if rest > dt * STEP_SLACK { rest } else { 0.0 })
}

/// Which equation [`evolve`] integrates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Equation {
    Nonlinear,
    Pam { mu: f64, sigma: f64 },
}

/// Steps `state` to `t_end`, feeding `recorders` after every step whose
/// global index is a multiple of their stride. The clock is recomputed as
/// `start + k·dt` so long runs do not accumulate rounding, and lands exactly
/// on `t_end`.
pub fn evolve(
    state: &mut TrajectoryState,
    cfg: &SolverConfig,
    equation: Equation,
    t_end: f64,
    recorders: &mut [&mut dyn Recorder],
) -> Result<()> {
    cfg.validate(state.grid)?;
    if t_end < state.time {
        return Err(Error::domain(format!(
            "cannot evolve backwards from t = {} to {t_end}",
            state.time
        )));
    }
    let spec = Arc::clone(&state.spec);
    let dynamics = match equation {
        Equation::Nonlinear => Dynamics::Nonlinear(&spec),
        Equation::Pam { mu, sigma } => Dynamics::Pam { mu, sigma },
    };
    let start = state.time;
    let (whole, partial) = step_plan(start, t_end, cfg.dt);
    let total = whole + u64::from(partial > 0.0);
    for k in 0..total {
        let dt = if k < whole { cfg.dt } else { partial };
        state.step_own_noise(dynamics, cfg, dt)?;
        state.time = if k + 1 == total {
            t_end
        } else {
            start + (k + 1) as f64 * cfg.dt
        };
        notify(state, recorders);
    }
    Ok(())
}

pub(crate) fn notify(state: &TrajectoryState, recorders: &mut [&mut dyn Recorder]) {
    if recorders.is_empty() {
        return;
    }
    let due: Vec<bool> = recorders.iter().map(|r| state.steps % r.stride().max(1) == 0).collect();
    if !due.iter().any(|d| *d) {
        return;
    }
    let snap = state.snapshot();
    let profile = recorders
        .iter()
        .zip(&due)
        .any(|(r, d)| *d && r.wants_profile())
        .then(|| state.log_profile());
    for (r, d) in recorders.iter_mut().zip(&due) {
        if *d {
            r.record(&snap, profile.as_deref());
        }
    }
}

/// Stores every recorded step, optionally with log-profiles.
#[derive(Debug, Clone, Default)]
pub struct SeriesRecorder {
    pub stride: u64,
    pub keep_profiles: bool,
    pub rows: Vec<StepRecord>,
    pub profiles: Vec<Vec<f64>>,
}

impl SeriesRecorder {
    pub fn new(stride: u64) -> Self {
        SeriesRecorder {
            stride: stride.max(1),
            ..Default::default()
        }
    }

    pub fn with_profiles(stride: u64) -> Self {
        SeriesRecorder {
            keep_profiles: true,
            ..Self::new(stride)
        }
    }

    /// Adds the current state as a row (used for the initial condition).
    pub fn observe(&mut self, state: &TrajectoryState) {
        self.rows.push(state.snapshot());
        if self.keep_profiles {
            self.profiles.push(state.log_profile());
        }
    }

    pub const CSV_HEADER: &'static str = "time,sup,inf,mass,clamp_count,log_sup,log_inf";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.time, r.sup, r.inf, r.mass, r.clamp_count, r.log_sup, r.log_inf
            );
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

impl Recorder for SeriesRecorder {
    fn stride(&self) -> u64 {
        self.stride
    }

    fn wants_profile(&self) -> bool {
        self.keep_profiles
    }

    fn record(&mut self, rec: &StepRecord, log_profile: Option<&[f64]>) {
        self.rows.push(*rec);
        if self.keep_profiles {
            if let Some(p) = log_profile {
                self.profiles.push(p.to_vec());
            }
        }
    }
}

/// First recorded `t ≥ t_from` with `sup w(t) > e^{-γt}`, compared in log
/// space; `None` when the bound holds over the whole record.
pub fn first_exceedance_time(rows: &[StepRecord], gamma: f64, t_from: f64) -> Option<f64> {
    rows.iter()
        .filter(|r| r.time >= t_from)
        .find(|r| r.log_sup > -gamma * r.time)
        .map(|r| r.time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn state(spec: ReactionSpec, w0: &Field, seed: u64) -> TrajectoryState {
        TrajectoryState::new(Arc::new(spec), w0, NoiseStream::new(seed, 0, 0))
    }

    #[test]
    fn cyclic_solver_inverts_the_operator() {
        for n in [4, 7, 64] {
            let r = 3.7;
            let solver = CyclicSolver::new(n, r);
            let x: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 4.0).collect();
            let d: Vec<f64> = (0..n)
                .map(|i| x[i] - r * (x[(i + n - 1) % n] - 2.0 * x[i] + x[(i + 1) % n]))
                .collect();
            let mut sol = d.clone();
            solver.solve_in_place(&mut sol);
            for (a, b) in sol.iter().zip(&x) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn explicit_scheme_checks_cfl() {
        let g = Grid::new(64).unwrap();
        let cfg = SolverConfig {
            dt: 1e-3,
            theta: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate(g).is_err());
        let cfg = SolverConfig {
            dt: 1e-4,
            theta: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate(g).is_ok());
        assert!(SolverConfig::with_dt(0.0).validate(g).is_err());
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = Grid::new(32).unwrap();
        let mut s = state(ReactionSpec::fisher_kpp(1.0, 1.0, 2.0).unwrap(), &Field::zeros(g), 1);
        let cfg = SolverConfig::with_dt(1e-3);
        evolve(&mut s, &cfg, Equation::Nonlinear, 0.5, &mut []).unwrap();
        assert!(s.field().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_growth_matches_the_exponential() {
        let g = Grid::new(16).unwrap();
        let mut s = state(ReactionSpec::linear(1.0, 0.0).unwrap(), &Field::constant(g, 1.0), 1);
        evolve(&mut s, &SolverConfig::with_dt(1e-3), Equation::Nonlinear, 1.0, &mut []).unwrap();
        for v in s.field().values() {
            assert_abs_diff_eq!(*v, 1f64.exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn heat_eigenfunction_decays() {
        let g = Grid::new(256).unwrap();
        let w0 = Field::from_fn(g, |x| (PI * x).cos() + 1.5).unwrap();
        let mut s = state(ReactionSpec::linear(0.0, 0.0).unwrap(), &w0, 1);
        evolve(&mut s, &SolverConfig::with_dt(1e-4), Equation::Nonlinear, 0.2, &mut []).unwrap();
        let decay = (-PI * PI * 0.2).exp();
        for (x, v) in g.points().zip(s.field().values()) {
            let want = decay * (PI * x).cos();
            assert!((v - 1.5 - want).abs() <= 0.01 * decay, "x = {x}");
        }
    }

    #[test]
    fn evolve_in_two_calls_is_bit_exact() {
        let g = Grid::new(32).unwrap();
        let w0 = Field::from_fn(g, |x| 1.0 + 0.3 * (PI * x).sin()).unwrap();
        let spec = ReactionSpec::fisher_kpp(0.5, 1.0, 2.0).unwrap();
        let cfg = SolverConfig::with_dt(1e-3);
        let mut a = state(spec.clone(), &w0, 9);
        let mut b = state(spec, &w0, 9);
        evolve(&mut a, &cfg, Equation::Nonlinear, 0.3, &mut []).unwrap();
        evolve(&mut a, &cfg, Equation::Nonlinear, 0.7, &mut []).unwrap();
        evolve(&mut b, &cfg, Equation::Nonlinear, 0.7, &mut []).unwrap();
        assert!(a.same_profile(&b));
        assert_eq!(a.time, 0.7);
        assert_eq!(a.noise, b.noise);
        let before = a.clone();
        evolve(&mut a, &cfg, Equation::Nonlinear, 0.7, &mut []).unwrap();
        assert!(a.same_profile(&before));
    }

    #[test]
    fn partial_last_step_lands_on_t_end() {
        assert_eq!(step_plan(0.0, 1.0, 0.25), (4, 0.0));
        let (k, rest) = step_plan(0.0, 1.1, 0.25);
        assert_eq!(k, 4);
        assert_abs_diff_eq!(rest, 0.1, epsilon = 1e-12);
        assert_eq!(step_plan(0.3, 0.3, 0.1), (0, 0.0));
    }

    #[test]
    fn linear_she_and_pam_agree_bit_for_bit() {
        let g = Grid::new(32).unwrap();
        let w0 = Field::from_fn(g, |x| 1.0 + 0.5 * (PI * x).cos()).unwrap();
        let cfg = SolverConfig::with_dt(1e-3);
        let mut a = state(ReactionSpec::linear(0.3, 1.5).unwrap(), &w0, 4);
        let mut b = a.clone();
        evolve(&mut a, &cfg, Equation::Nonlinear, 0.5, &mut []).unwrap();
        evolve(&mut b, &cfg, Equation::Pam { mu: 0.3, sigma: 1.5 }, 0.5, &mut []).unwrap();
        assert!(a.same_profile(&b));
    }

    #[test]
    fn binary_rescaling_is_invisible() {
        let g = Grid::new(32).unwrap();
        let w0 = Field::from_fn(g, |x| 1.0 + 0.5 * (PI * x).cos()).unwrap();
        let tiny = Field::from_values(g, w0.values().iter().map(|v| v * 2f64.powi(-300)).collect()).unwrap();
        let spec = ReactionSpec::linear(0.0, 3.0).unwrap();
        let cfg = SolverConfig::with_dt(1e-3);
        let mut a = state(spec.clone(), &w0, 2);
        let mut b = state(spec, &tiny, 2);
        evolve(&mut a, &cfg, Equation::Nonlinear, 1.0, &mut []).unwrap();
        evolve(&mut b, &cfg, Equation::Nonlinear, 1.0, &mut []).unwrap();
        assert_eq!(a.mantissa(), b.mantissa());
        assert_eq!(a.exponent() - b.exponent(), 300);
    }

    #[test]
    fn deep_dissipation_stays_representable() {
        let g = Grid::new(16).unwrap();
        let mut s = state(ReactionSpec::linear(-200.0, 0.0).unwrap(), &Field::constant(g, 1.0), 0);
        evolve(&mut s, &SolverConfig::with_dt(1e-2), Equation::Nonlinear, 10.0, &mut []).unwrap();
        assert_abs_diff_eq!(s.log_sup(), -2000.0, epsilon = 1e-6);
        assert_eq!(s.sup(), 0.0);
    }

    #[test]
    fn blowup_is_reported() {
        let g = Grid::new(16).unwrap();
        let mut s = state(ReactionSpec::linear(50.0, 0.0).unwrap(), &Field::constant(g, 1.0), 0);
        let cfg = SolverConfig {
            dt: 1e-2,
            blowup_cap: 1e6,
            ..Default::default()
        };
        let err = evolve(&mut s, &cfg, Equation::Nonlinear, 10.0, &mut []).unwrap_err();
        match err {
            Error::Blowup { time, .. } => assert!(time > 0.2 && time < 0.4),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn recorders_follow_their_stride() {
        let g = Grid::new(16).unwrap();
        let mut s = state(ReactionSpec::linear(0.0, 1.0).unwrap(), &Field::constant(g, 1.0), 0);
        let mut every = SeriesRecorder::new(1);
        let mut sparse = SeriesRecorder::with_profiles(5);
        evolve(
            &mut s,
            &SolverConfig::with_dt(0.01),
            Equation::Nonlinear,
            0.2,
            &mut [&mut every, &mut sparse],
        )
        .unwrap();
        assert_eq!(every.rows.len(), 20);
        assert_eq!(sparse.rows.len(), 4);
        assert_eq!(sparse.profiles.len(), 4);
        assert_eq!(every.rows.last().unwrap().time, 0.2);
        assert!(every.to_csv().starts_with(SeriesRecorder::CSV_HEADER));
    }

    fn synthetic(times: &[f64], log_sup: impl Fn(f64) -> f64) -> Vec<StepRecord> {
        times
            .iter()
            .map(|&t| StepRecord {
                time: t,
                sup: log_sup(t).exp(),
                inf: 0.0,
                log_sup: log_sup(t),
                log_inf: f64::NEG_INFINITY,
                mass: 0.0,
                clamp_count: 0,
            })
            .collect()
    }

    #[test]
    fn exceedance_examples() {
        let times: Vec<f64> = (0..100).map(|k| k as f64 * 0.5).collect();
        let gamma = 0.25;
        let zero = synthetic(&times, |_| f64::NEG_INFINITY);
        assert_eq!(first_exceedance_time(&zero, gamma, 10.0), None);
        let half = synthetic(&times, |t| -gamma * t - 2f64.ln());
        assert_eq!(first_exceedance_time(&half, gamma, 10.0), None);
        let spike = synthetic(&times, |t| {
            if t == 30.0 {
                -gamma * t + 2f64.ln()
            } else {
                -gamma * t - 2f64.ln()
            }
        });
        assert_eq!(first_exceedance_time(&spike, gamma, 10.0), Some(30.0));
        assert_eq!(first_exceedance_time(&spike, gamma, 31.0), None);
    }
}
