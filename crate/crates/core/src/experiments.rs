//! Experiment drivers shared by the command line and the acceptance suite.
//! Each returns a serializable report; none of them writes files.

use std::sync::Arc;

use serde::Serialize;

use crate::coupling::{
    build_schedule, evolve_coupled_pam_pair, mixing, run_staged_coupling, CouplingEventLog, CouplingSchedule,
    MixingProfile, PairOptions, StagedOptions,
};
use crate::ensemble::{EnsembleConfig, Runner};
use crate::error::{Error, Result};
use crate::noise::{mix_noise, NoiseStream};
use crate::reaction::ReactionSpec;
use crate::solver::{evolve, step_plan, Equation, Recorder, SolverConfig, StepRecord, TrajectoryState};
use crate::stats::{
    clt_diagnostics, decay_exponent_fit, gamma2, linear_fit, lyapunov_target, mean_se, wilson_interval, CltReport,
    DecayFit, MeanSe, Proportion,
};
use crate::torus::{convolve, pairwise_sum, Field, Grid};

/// `E u(t, x)` of a PAM against `e^{μt} (p_t * u_0)(x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PamMeanPoint {
    pub x: f64,
    pub mean: f64,
    pub se: f64,
    pub exact: f64,
    /// `(mean - exact) / se`.
    pub z: f64,
}

pub fn pam_mean(
    initial: &Field,
    mu: f64,
    sigma: f64,
    solver: SolverConfig,
    t: f64,
    probes: &[usize],
    trajectories: u64,
    seed: u64,
    runner: &Runner,
) -> Result<Vec<PamMeanPoint>> {
    let grid = initial.grid();
    if probes.iter().any(|&i| i >= grid.n_points()) {
        return Err(Error::config("probe index outside the grid"));
    }
    let spec = Arc::new(ReactionSpec::linear(mu, sigma)?);
    let mut cfg = EnsembleConfig::new(spec, initial.clone(), Equation::Pam { mu, sigma }, t);
    cfg.solver = solver;
    cfg.seed = seed;
    cfg.trajectories = trajectories;
    let ens = cfg.run(runner)?;
    let exact = convolve(t, initial)?;
    Ok(probes
        .iter()
        .map(|&i| {
            let vals: Vec<f64> = ens
                .trajectories
                .iter()
                .map(|tr| tr.snapshots[0].log_profile[i].exp())
                .collect();
            let m = mean_se(&vals);
            let e = (mu * t).exp() * exact.values()[i];
            PamMeanPoint {
                x: grid.point(i),
                mean: m.mean,
                se: m.se,
                exact: e,
                z: (m.mean - e) / m.se,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WhitenessReport {
    pub samples: usize,
    /// Empirical variance of the mixed increments over `dt/spacing`.
    pub variance_ratio: f64,
    /// Largest `|ρ|` between neighbouring cells and between consecutive steps.
    pub max_correlation: f64,
    /// `|ρ|` between the two raw streams.
    pub stream_correlation: f64,
    /// `max |φ² + ψ² - 1|` over the profile evaluations.
    pub normalization_error: f64,
    pub profile_evaluations: usize,
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = pairwise_sum(a) / a.len() as f64;
    let mb = pairwise_sum(b) / b.len() as f64;
    let cov: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    pairwise_sum(&cov) / (pairwise_sum(&va) * pairwise_sum(&vb)).sqrt()
}

/// Mixed increments `ψ dW + φ dW0` with an adapted profile: the mixing
/// argument of each cell is a running sum of that cell's past `dW`, so `φ`
/// varies in space and time but never looks ahead.
pub fn mixing_whiteness(grid: Grid, dt: f64, steps: usize, alpha: f64, seed: u64) -> Result<WhitenessReport> {
    let n = grid.n_points();
    let mut s = NoiseStream::new(seed, 0, 0);
    let mut s0 = s.sibling(1);
    let mut memory = vec![0.0; n];
    let (mut mixed, mut raw, mut raw0) = (Vec::with_capacity(n * steps), Vec::new(), Vec::new());
    let mut norm_err = 0.0_f64;
    for _ in 0..steps {
        let dw = s.sample_increment(grid, dt)?;
        let dw0 = s0.sample_increment(grid, dt)?;
        let (mut phi, mut psi) = (Field::zeros(grid), Field::zeros(grid));
        for i in 0..n {
            let (p, q) = mixing(memory[i], alpha);
            norm_err = norm_err.max((p * p + q * q - 1.0).abs());
            phi.values_mut()[i] = p;
            psi.values_mut()[i] = q;
        }
        let m = mix_noise(&dw, &dw0, &phi, &psi)?;
        mixed.extend_from_slice(m.values());
        raw.extend_from_slice(dw.values());
        raw0.extend_from_slice(dw0.values());
        for i in 0..n {
            memory[i] += dw.values()[i];
        }
    }
    let var = dt / grid.spacing();
    let mean = pairwise_sum(&mixed) / mixed.len() as f64;
    let sq: Vec<f64> = mixed.iter().map(|x| (x - mean) * (x - mean)).collect();
    let variance_ratio = pairwise_sum(&sq) / (mixed.len() - 1) as f64 / var;

    let (mut left, mut right) = (Vec::new(), Vec::new());
    for row in mixed.chunks_exact(n) {
        for i in 0..n {
            left.push(row[i]);
            right.push(row[grid.right(i)]);
        }
    }
    let spatial = correlation(&left, &right);
    let temporal = correlation(&mixed[..mixed.len() - n], &mixed[n..]);

    // Profile normalization over a wide sweep of mixing arguments.
    let mut evaluations = 0;
    for k in 0..1_000_000u32 {
        let y = (k as f64 / 1e6 * 40.0 - 20.0).exp() * if k % 2 == 0 { 1.0 } else { -1.0 };
        let (p, q) = mixing(y, alpha);
        norm_err = norm_err.max((p * p + q * q - 1.0).abs());
        evaluations += 1;
    }
    Ok(WhitenessReport {
        samples: mixed.len(),
        variance_ratio,
        max_correlation: spatial.abs().max(temporal.abs()),
        stream_correlation: correlation(&raw, &raw0).abs(),
        normalization_error: norm_err,
        profile_evaluations: evaluations + n * steps,
    })
}

/// `X(t) = ∫ (v - u)` of a coupled PAM pair, averaged over the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingalePoint {
    pub t: f64,
    pub x0: f64,
    pub mean: f64,
    pub se: f64,
    pub z: f64,
}

fn integral_gap(u: &TrajectoryState, v: &TrajectoryState) -> f64 {
    let (a, b) = (u.field(), v.field());
    let d: Vec<f64> = a.values().iter().zip(b.values()).map(|(p, q)| q - p).collect();
    u.grid().spacing() * pairwise_sum(&d)
}

fn pair_states(
    spec: &Arc<ReactionSpec>,
    u0: &Field,
    v0: &Field,
    seed: u64,
    id: u64,
) -> (TrajectoryState, TrajectoryState) {
    let u = TrajectoryState::new(Arc::clone(spec), u0, NoiseStream::new(seed, 0, id));
    let v = TrajectoryState::new(Arc::clone(spec), v0, NoiseStream::new(seed, 1, id));
    (u, v)
}

#[allow(clippy::too_many_arguments)]
pub fn coupling_martingale(
    u0: &Field,
    v0: &Field,
    sigma: f64,
    alpha: f64,
    solver: SolverConfig,
    times: &[f64],
    trajectories: u64,
    seed: u64,
    runner: &Runner,
) -> Result<Vec<MartingalePoint>> {
    let spec = Arc::new(ReactionSpec::linear(0.0, sigma)?);
    let profile = MixingProfile::new(alpha)?;
    let opts = PairOptions {
        stride: 0,
        ..Default::default()
    };
    let paths = runner.map(trajectories, |id| {
        let (mut u, mut v) = pair_states(&spec, u0, v0, seed, id);
        let mut xs = Vec::with_capacity(times.len());
        for &t in times {
            evolve_coupled_pam_pair(&mut u, &mut v, profile, 0.0, sigma, &solver, t, &opts)?;
            xs.push(integral_gap(&u, &v));
        }
        Ok(xs)
    })?;
    let x0 = {
        let d: Vec<f64> = u0.values().iter().zip(v0.values()).map(|(p, q)| q - p).collect();
        u0.grid().spacing() * pairwise_sum(&d)
    };
    Ok(times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let vals: Vec<f64> = paths.iter().map(|p| p[k]).collect();
            let m = mean_se(&vals);
            MartingalePoint {
                t,
                x0,
                mean: m.mean,
                se: m.se,
                z: (m.mean - x0) / m.se,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailurePoint {
    pub distance: f64,
    pub failures: Proportion,
    /// Meeting time of each trajectory, in id order.
    #[serde(skip)]
    pub meeting_times: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureReport {
    pub alpha: f64,
    pub t: f64,
    pub points: Vec<FailurePoint>,
    /// Least-squares slope of `log P(fail)` against `log distance`.
    pub slope: f64,
    pub monotone: bool,
}

/// Frequency with which a PAM pair from `u_0 ≡ level` and
/// `v_0 ≡ level + d` has not met by `t`, for each `d`. All distances use the
/// same trajectory streams.
#[allow(clippy::too_many_arguments)]
pub fn coupling_failure(
    grid: Grid,
    level: f64,
    distances: &[f64],
    sigma: f64,
    alpha: f64,
    solver: SolverConfig,
    t: f64,
    trajectories: u64,
    seed: u64,
    runner: &Runner,
) -> Result<FailureReport> {
    let spec = Arc::new(ReactionSpec::linear(0.0, sigma)?);
    let profile = MixingProfile::new(alpha)?;
    let opts = PairOptions {
        stride: 0,
        ..Default::default()
    };
    let u0 = Field::constant(grid, level);
    let mut points = Vec::with_capacity(distances.len());
    for &d in distances {
        let v0 = Field::constant(grid, level + d);
        let meeting_times = runner.map(trajectories, |id| {
            let (mut u, mut v) = pair_states(&spec, &u0, &v0, seed, id);
            let out = evolve_coupled_pam_pair(&mut u, &mut v, profile, 0.0, sigma, &solver, t, &opts)?;
            Ok(out.meeting)
        })?;
        let count = meeting_times.iter().filter(|m| m.is_none()).count();
        points.push(FailurePoint {
            distance: d,
            failures: wilson_interval(count, meeting_times.len()),
            meeting_times,
        });
    }
    let usable: Vec<&FailurePoint> = points.iter().filter(|p| p.failures.frequency > 0.0).collect();
    let slope = if usable.len() >= 2 {
        let x: Vec<f64> = usable.iter().map(|p| p.distance.ln()).collect();
        let y: Vec<f64> = usable.iter().map(|p| p.failures.frequency.ln()).collect();
        linear_fit(&x, &y).1
    } else {
        f64::NAN
    };
    let mut order: Vec<&FailurePoint> = points.iter().collect();
    order.sort_by(|a, b| b.distance.total_cmp(&a.distance));
    let monotone = order
        .windows(2)
        .all(|w| w[1].failures.frequency < w[0].failures.frequency);
    Ok(FailureReport {
        alpha,
        t,
        points,
        slope,
        monotone,
    })
}

/// Tracks, for several start times `T`, the first step at or after `T` with
/// `sup w > e^{-γt}`. Checks every step without storing the series.
#[derive(Debug, Clone)]
pub struct ExceedanceRecorder {
    pub gamma: f64,
    pub starts: Vec<f64>,
    pub first: Vec<Option<f64>>,
}

impl ExceedanceRecorder {
    pub fn new(gamma: f64, starts: &[f64]) -> Self {
        ExceedanceRecorder {
            gamma,
            starts: starts.to_vec(),
            first: vec![None; starts.len()],
        }
    }
}

impl Recorder for ExceedanceRecorder {
    fn record(&mut self, rec: &StepRecord, _: Option<&[f64]>) {
        if rec.log_sup > -self.gamma * rec.time {
            for (s, f) in self.starts.iter().zip(self.first.iter_mut()) {
                if f.is_none() && rec.time >= *s {
                    *f = Some(rec.time);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationPoint {
    pub start: f64,
    /// Trajectories with no exceedance on `[T, horizon]`.
    pub dissipated: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationReport {
    pub gamma: f64,
    pub horizon: f64,
    pub points: Vec<DissipationPoint>,
    /// Largest per-trajectory fraction of clamped cell-steps.
    pub max_clamp_fraction: f64,
}

/// Dissipation frequencies of the nonlinear equation (or of the PAM with the
/// spec's linearization when `pam` is set) from `w_0`.
#[allow(clippy::too_many_arguments)]
pub fn dissipation(
    spec: Arc<ReactionSpec>,
    initial: &Field,
    pam: bool,
    solver: SolverConfig,
    gamma: f64,
    starts: &[f64],
    horizon: f64,
    trajectories: u64,
    seed: u64,
    runner: &Runner,
) -> Result<DissipationReport> {
    if starts.iter().any(|s| *s > horizon || *s < 0.0) {
        return Err(Error::config("start times must lie in [0, horizon]"));
    }
    let equation = if pam {
        Equation::Pam {
            mu: spec.mu,
            sigma: spec.sigma,
        }
    } else {
        Equation::Nonlinear
    };
    let runs = runner.map(trajectories, |id| {
        let mut state = TrajectoryState::new(Arc::clone(&spec), initial, NoiseStream::new(seed, 0, id));
        let mut rec = ExceedanceRecorder::new(gamma, starts);
        // The initial condition counts when a start time is 0.
        rec.record(&state.snapshot(), None);
        evolve(&mut state, &solver, equation, horizon, &mut [&mut rec])?;
        Ok((rec.first, state.clamp_fraction()))
    })?;
    let points = starts
        .iter()
        .enumerate()
        .map(|(k, &start)| {
            let ok = runs.iter().filter(|(f, _)| f[k].is_none()).count();
            DissipationPoint {
                start,
                dissipated: wilson_interval(ok, runs.len()),
            }
        })
        .collect();
    Ok(DissipationReport {
        gamma,
        horizon,
        points,
        max_clamp_fraction: runs.iter().map(|r| r.1).fold(0.0, f64::max),
    })
}

/// Per-trajectory `t⁻¹ mean_x log u(t, x)` on a fine grid and on a coarse
/// grid driven by the same noise realization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementSample {
    pub fine: f64,
    /// One entry per drift in [`Refinement::coarse_mus`].
    pub coarse: Vec<f64>,
}

/// Coarse and fine PAM runs sharing one realization: every coarse increment
/// is the average over `space` fine cells of the sum over `time` fine steps.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Refinement {
    pub coarse_n: usize,
    pub coarse_dt: f64,
    pub space: usize,
    pub time: usize,
    pub fine_mu: f64,
    pub coarse_mus: Vec<f64>,
    pub sigma: f64,
    pub t_end: f64,
    pub seed: u64,
}

impl Refinement {
    pub fn trajectory(&self, id: u64) -> Result<RefinementSample> {
        let coarse_grid = Grid::new(self.coarse_n)?;
        let fine_grid = Grid::new(self.coarse_n * self.space)?;
        // Linear runs never blow up in the representable sense.
        let uncapped = |dt| SolverConfig {
            blowup_cap: f64::INFINITY,
            ..SolverConfig::with_dt(dt)
        };
        let coarse_cfg = uncapped(self.coarse_dt);
        let fine_dt = self.coarse_dt / self.time as f64;
        let fine_cfg = uncapped(fine_dt);
        let (steps, partial) = step_plan(0.0, self.t_end, self.coarse_dt);
        if partial > 0.0 {
            return Err(Error::config("t_end must be a whole number of coarse steps"));
        }
        let stream = NoiseStream::new(self.seed, 0, id);
        let spec = Arc::new(ReactionSpec::linear(self.fine_mu, self.sigma)?);
        let mut fine = TrajectoryState::new(Arc::clone(&spec), &Field::constant(fine_grid, 1.0), stream);
        let mut coarse: Vec<TrajectoryState> = self
            .coarse_mus
            .iter()
            .map(|_| TrajectoryState::new(Arc::clone(&spec), &Field::constant(coarse_grid, 1.0), stream))
            .collect();
        let mut noise = stream;
        let fine_var = fine_dt / fine_grid.spacing();
        let mut fine_dw = vec![0.0; fine_grid.n_points()];
        let mut coarse_dw = vec![0.0; self.coarse_n];
        let w = 1.0 / self.space as f64;
        for _ in 0..steps {
            coarse_dw.iter_mut().for_each(|o| *o = 0.0);
            for _ in 0..self.time {
                noise.fill_gaussian(fine_var, &mut fine_dw);
                fine.step_pam_with(&fine_cfg, fine_dt, self.fine_mu, self.sigma, &fine_dw)?;
                for (o, chunk) in coarse_dw.iter_mut().zip(fine_dw.chunks_exact(self.space)) {
                    *o += chunk.iter().sum::<f64>();
                }
            }
            coarse_dw.iter_mut().for_each(|o| *o *= w);
            for (state, &mu) in coarse.iter_mut().zip(&self.coarse_mus) {
                state.step_pam_with(&coarse_cfg, self.coarse_dt, mu, self.sigma, &coarse_dw)?;
            }
        }
        let rate = |s: &TrajectoryState| pairwise_sum(&s.log_profile()) / s.grid().n_points() as f64 / self.t_end;
        Ok(RefinementSample {
            fine: rate(&fine),
            coarse: coarse.iter().map(rate).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefinementReport {
    pub target: f64,
    pub fine: MeanSe,
    pub coarse: Vec<MeanSe>,
    /// Mean and SE of the paired difference `fine - coarse[0]`.
    pub paired_gap: MeanSe,
    /// Largest per-trajectory `|λ(μ_k) - λ(μ_0) - (μ_k - μ_0)|`.
    pub max_shift_error: f64,
    pub samples: Vec<RefinementSample>,
}

pub fn lyapunov_refinement(r: &Refinement, trajectories: u64, runner: &Runner) -> Result<RefinementReport> {
    if r.coarse_mus.is_empty() {
        return Err(Error::config("need at least one coarse drift"));
    }
    let samples = runner.map(trajectories, |id| r.trajectory(id))?;
    let fine: Vec<f64> = samples.iter().map(|s| s.fine).collect();
    let coarse: Vec<MeanSe> = (0..r.coarse_mus.len())
        .map(|k| mean_se(&samples.iter().map(|s| s.coarse[k]).collect::<Vec<_>>()))
        .collect();
    let gap: Vec<f64> = samples.iter().map(|s| s.fine - s.coarse[0]).collect();
    let mut max_shift_error = 0.0_f64;
    for s in &samples {
        for (k, mu) in r.coarse_mus.iter().enumerate() {
            let shift = mu - r.coarse_mus[0];
            max_shift_error = max_shift_error.max((s.coarse[k] - s.coarse[0] - shift).abs());
        }
    }
    Ok(RefinementReport {
        target: lyapunov_target(r.coarse_mus[0], r.sigma),
        fine: mean_se(&fine),
        coarse,
        paired_gap: mean_se(&gap),
        max_shift_error,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CltStudy {
    pub gamma2: f64,
    pub reports: Vec<CltReport>,
    /// Flatness at each later time exceeds the previous by at most two
    /// combined standard errors.
    pub flatness_non_growing: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn clt_study(
    grid: Grid,
    mu: f64,
    sigma: f64,
    solver: SolverConfig,
    times: &[f64],
    trajectories: u64,
    seed: u64,
    runner: &Runner,
) -> Result<CltStudy> {
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let spec = Arc::new(ReactionSpec::linear(mu, sigma)?);
    let mut cfg = EnsembleConfig::new(spec, Field::constant(grid, 1.0), Equation::Pam { mu, sigma }, t_end);
    cfg.solver = solver;
    cfg.snapshot_times = times.to_vec();
    cfg.seed = seed;
    cfg.trajectories = trajectories;
    let ens = cfg.run(runner)?;
    let reports = times
        .iter()
        .map(|&t| clt_diagnostics(&ens, t, mu, sigma))
        .collect::<Result<Vec<_>>>()?;
    let flatness_non_growing = reports.windows(2).all(|w| {
        let se = (w[0].flatness_se.powi(2) + w[1].flatness_se.powi(2)).sqrt();
        w[1].spatial_flatness <= w[0].spatial_flatness + 2.0 * se
    });
    Ok(CltStudy {
        gamma2: gamma2(sigma),
        reports,
        flatness_non_growing,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StagedStudy {
    pub schedule: CouplingSchedule,
    pub runs: usize,
    /// Median over runs of `‖log w(T_n) - log u(T_n)‖` per stage.
    pub median_log_ratio: Vec<f64>,
    /// The medians never increase over the last `window` stages.
    pub nonincreasing_tail: bool,
    pub window: usize,
    pub fit: Option<DecayFit>,
    pub fit_error: Option<String>,
    /// Fraction of stage rows with `A_n` true, over all runs.
    pub a_frequency: f64,
    pub meetings: usize,
    #[serde(skip)]
    pub logs: Vec<CouplingEventLog>,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

#[allow(clippy::too_many_arguments)]
pub fn staged_study(
    spec: Arc<ReactionSpec>,
    initial: &Field,
    solver: SolverConfig,
    epsilon: f64,
    l_star: f64,
    eta: f64,
    n_max: usize,
    window: usize,
    runs: u64,
    seed: u64,
    runner: &Runner,
) -> Result<StagedStudy> {
    let schedule = build_schedule(epsilon, l_star, eta, n_max)?;
    let opts = StagedOptions::default();
    let logs = runner.map(runs, |id| {
        let run = run_staged_coupling(
            Arc::clone(&spec),
            initial,
            &schedule,
            &solver,
            NoiseStream::new(seed, 0, id),
            &opts,
        )?;
        Ok(run.log)
    })?;
    let stages = n_max + 1;
    let median_log_ratio: Vec<f64> = (0..stages)
        .map(|n| median(&mut logs.iter().map(|l| l.events[n].log_ratio_sup).collect::<Vec<_>>()))
        .collect();
    let tail = &median_log_ratio[stages.saturating_sub(window)..];
    let nonincreasing_tail = tail.windows(2).all(|w| w[1] <= w[0]);
    let (fit, fit_error) = match decay_exponent_fit(&schedule.times[1..], &median_log_ratio[1..]) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let rows = logs.len() * stages;
    let a_true = logs.iter().flat_map(|l| &l.events).filter(|e| e.a_n).count();
    let meetings = logs
        .iter()
        .flat_map(|l| &l.events)
        .filter(|e| e.meeting_time.is_some())
        .count();
    Ok(StagedStudy {
        schedule,
        runs: logs.len(),
        median_log_ratio,
        nonincreasing_tail,
        window,
        fit,
        fit_error,
        a_frequency: a_true as f64 / rows as f64,
        meetings,
        logs,
    })
}
