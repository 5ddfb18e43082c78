//! Command-line experiment runner: `run`, `validate` and `report`.
//!
//! A run resolves the configuration file (plus `--seed`), executes one
//! experiment and writes `resolved.conf`, `report.json` and the CSV tables of
//! that experiment into the output directory. Worker counts never enter any
//! output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::{json, Value};

use crate::config::{render, RawConfig, Resolver};
use crate::coupling::{build_schedule, epsilon_limit, growth_ratios};
use crate::ensemble::{EnsembleConfig, Runner};
use crate::error::{Error, Result};
use crate::experiments::{clt_study, coupling_failure, dissipation, staged_study};
use crate::reaction::{ReactionSpec, DEFAULT_CAP};
use crate::solver::{Equation, SolverConfig, StepRecord};
use crate::stats::{
    dissipation_probability, lyapunov_estimate, mean_se, oscillation_moments, tail_sum_check, tail_sum_constant,
    EnsembleResult,
};
use crate::torus::{Field, Grid};

pub const SCHEMA_VERSION: u32 = 1;

/// Largest `L_g·sqrt(dt/h)` that `validate` accepts.
pub const NOISE_STEP_SD_MAX: f64 = 0.2;

pub const KINDS: &[&str] = &[
    "simulate",
    "pam",
    "couple-pair",
    "staged-coupling",
    "lyapunov",
    "clt",
    "dissipation",
    "oscillation",
    "schedule",
    "tailsum",
];

/// Everything a run produces, before it touches the disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub kind: String,
    pub resolved: BTreeMap<String, String>,
    pub report: Value,
    /// `(relative path, contents)` of each CSV table.
    pub tables: Vec<(String, String)>,
}

impl RunOutput {
    pub fn write(&self, out: &Path) -> Result<()> {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("resolved.conf"), render(&self.resolved))?;
        for (name, contents) in &self.tables {
            let path = out.join(name);
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(path, contents)?;
        }
        let mut text = serde_json::to_string_pretty(&self.report).map_err(|e| Error::config(e.to_string()))?;
        text.push('\n');
        std::fs::write(out.join("report.json"), text)?;
        Ok(())
    }
}

pub fn error_report(err: &Error) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "error",
        "error": err.kind(),
        "message": err.to_string(),
        "exit_code": err.exit_code(),
    })
}

/// Grid, solver, reaction and initial data shared by all trajectory kinds.
struct Common {
    grid: Grid,
    solver: SolverConfig,
    spec: Arc<ReactionSpec>,
    initial: Field,
    seed: u64,
}

fn resolve_spec(r: &mut Resolver) -> Result<ReactionSpec> {
    let name: String = r.get("reaction", "linear".to_string())?;
    let mut params = BTreeMap::new();
    match name.as_str() {
        "linear" => {
            params.insert("mu", r.get("mu", 0.0)?);
            params.insert("sigma", r.get("sigma", 1.0)?);
        }
        "fisher_kpp" | "allen_cahn" => {
            params.insert("a", r.require("a")?);
            params.insert("b", r.require("b")?);
            params.insert("noise", r.get("noise", 1.0)?);
            params.insert("cap", r.get("cap", DEFAULT_CAP)?);
        }
        other => return Err(Error::config(format!("unknown reaction `{other}`"))),
    }
    if let Some(chi) = r.peek_f64("chi")? {
        params.insert("chi", chi);
    }
    ReactionSpec::preset(&name, |k| params.get(k).copied())
}

fn resolve_common(r: &mut Resolver, seed_override: Option<u64>) -> Result<Common> {
    let n: usize = r.get("n", 128)?;
    let grid = Grid::new(n).map_err(|e| Error::config(e.to_string()))?;
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        dt: r.get("dt", defaults.dt)?,
        theta: r.get("theta", defaults.theta)?,
        positivity_floor: r.get("floor", defaults.positivity_floor)?,
        blowup_cap: r.get("blowup_cap", defaults.blowup_cap)?,
    };
    let spec = Arc::new(resolve_spec(r)?);
    let level: f64 = r.get("init", 1.0)?;
    let amp: f64 = r.get("init_cos", 0.0)?;
    let initial = Field::from_fn(grid, |x| level + amp * (std::f64::consts::PI * x).cos())?;
    let seed = r.get_seed("seed", 0, seed_override)?;
    Ok(Common {
        grid,
        solver,
        spec,
        initial,
        seed,
    })
}

fn equation_key(r: &mut Resolver, default: &str, spec: &ReactionSpec) -> Result<Equation> {
    let name: String = r.get("equation", default.to_string())?;
    match name.as_str() {
        "nonlinear" => Ok(Equation::Nonlinear),
        "pam" => Ok(Equation::Pam {
            mu: spec.mu,
            sigma: spec.sigma,
        }),
        other => Err(Error::config(format!("unknown equation `{other}` (nonlinear | pam)"))),
    }
}

fn default_epsilon() -> f64 {
    f64::from_bits(epsilon_limit().to_bits() - 1)
}

fn series_csv(rows: &[StepRecord]) -> String {
    let mut out = String::from(crate::solver::SeriesRecorder::CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.time, r.sup, r.inf, r.mass, r.clamp_count, r.log_sup, r.log_inf
        );
    }
    out
}

fn parse_series_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(crate::solver::SeriesRecorder::CSV_HEADER) {
        return Err(Error::config("series CSV has an unexpected header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(Error::config(format!("malformed series row `{line}`")));
            }
            let num = |i: usize| -> Result<f64> {
                f[i].parse()
                    .map_err(|_| Error::config(format!("bad number `{}` in series row", f[i])))
            };
            Ok(StepRecord {
                time: num(0)?,
                sup: num(1)?,
                inf: num(2)?,
                mass: num(3)?,
                clamp_count: f[4]
                    .parse()
                    .map_err(|_| Error::config(format!("bad count `{}` in series row", f[4])))?,
                log_sup: num(5)?,
                log_inf: num(6)?,
            })
        })
        .collect()
}

/// Per-time ensemble means of `log sup`, `log inf` and the mass.
fn summary_csv(series: &[&[StepRecord]]) -> (String, usize) {
    let rows = series.iter().map(|s| s.len()).min().unwrap_or(0);
    let mut out = String::from("time,mean_log_sup,se_log_sup,mean_log_inf,se_log_inf,mean_mass,se_mass\n");
    for k in 0..rows {
        let col = |f: fn(&StepRecord) -> f64| mean_se(&series.iter().map(|s| f(&s[k])).collect::<Vec<_>>());
        let (a, b, c) = (col(|r| r.log_sup), col(|r| r.log_inf), col(|r| r.mass));
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            series[0][k].time, a.mean, a.se, b.mean, b.se, c.mean, c.se
        );
    }
    (out, rows)
}

fn ensemble_tables(ens: &EnsembleResult, tables: &mut Vec<(String, String)>) {
    for tr in &ens.trajectories {
        if !tr.rows.is_empty() {
            tables.push((format!("series/traj_{:05}.csv", tr.trajectory_id), series_csv(&tr.rows)));
        }
    }
    let series: Vec<&[StepRecord]> = ens.trajectories.iter().map(|t| t.rows.as_slice()).collect();
    if series.iter().all(|s| !s.is_empty()) {
        tables.push(("summary.csv".into(), summary_csv(&series).0));
    }
    let mut snaps = String::from("trajectory_id,time,mean_log,log_spread\n");
    for tr in &ens.trajectories {
        for s in &tr.snapshots {
            let _ = writeln!(
                snaps,
                "{},{},{},{}",
                tr.trajectory_id,
                s.time,
                s.mean_log(),
                s.log_spread()
            );
        }
    }
    tables.push(("snapshots.csv".into(), snaps));
}

fn envelope(kind: &str, resolved: &BTreeMap<String, String>, results: Value) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "status": "ok",
        "kind": kind,
        "inputs": resolved,
        "results": results,
    })
}

/// Parses and executes a configuration.
pub fn run(raw: RawConfig, seed: Option<u64>, runner: &Runner) -> Result<RunOutput> {
    let mut r = Resolver::new(raw);
    let kind: String = r.require("kind")?;
    if !KINDS.contains(&kind.as_str()) {
        return Err(Error::config(format!(
            "unknown kind `{kind}`; expected one of {}",
            KINDS.join(", ")
        )));
    }
    let mut tables = Vec::new();
    let results = match kind.as_str() {
        "schedule" => {
            let epsilon = r.get("epsilon", default_epsilon())?;
            let l_star = r.get("l_star", 2.0)?;
            let eta = r.get("eta", 0.1)?;
            let n_max: usize = r.get("n_max", 10)?;
            // Deterministic kinds still echo the seed.
            r.get_seed("seed", 0, seed)?;
            let resolved = r.finish()?;
            let s = build_schedule(epsilon, l_star, eta, n_max)?;
            let mut csv = String::from("n,T_n,offset,eps_n,alpha_n,eta_n\n");
            for n in 0..=n_max {
                let _ = writeln!(
                    csv,
                    "{n},{},{},{},{},{}",
                    s.times[n], s.offsets[n], s.eps[n], s.alpha[n], s.eta_seq[n]
                );
            }
            tables.push(("schedule.csv".into(), csv));
            let ratios = growth_ratios(s.delta, n_max);
            let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
            let results = json!({
                "delta": s.delta,
                "T0": s.t0(),
                "T1_minus_T0": s.offsets[1],
                "horizon": s.horizon(),
                "monotone": s.is_monotone(),
                "max_growth_ratio": max_ratio,
                "schedule": s,
            });
            return Ok(finish_output(kind, resolved, results, tables));
        }
        "tailsum" => {
            let deltas: Vec<f64> = r.get_list("deltas", &[0.05, 0.1, 0.2, 0.4])?;
            // Deterministic kinds still echo the seed.
            r.get_seed("seed", 0, seed)?;
            let resolved = r.finish()?;
            let rows = tail_sum_check(&deltas)?;
            let mut csv = String::from("delta,sum,ratio,terms,remainder_bound\n");
            for row in &rows {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    row.delta, row.sum, row.ratio, row.terms, row.remainder_bound
                );
            }
            tables.push(("tailsum.csv".into(), csv));
            let c = tail_sum_constant();
            let results = json!({
                "rows": rows,
                "constant": c,
                "bounded": rows.iter().all(|x| x.ratio <= c),
            });
            return Ok(finish_output(kind, resolved, results, tables));
        }
        _ => {
            let c = resolve_common(&mut r, seed)?;
            run_trajectory_kind(&kind, r, c, runner, &mut tables)?
        }
    };
    let (resolved, results) = results;
    Ok(finish_output(kind, resolved, results, tables))
}

fn finish_output(
    kind: String,
    resolved: BTreeMap<String, String>,
    results: Value,
    tables: Vec<(String, String)>,
) -> RunOutput {
    RunOutput {
        report: envelope(&kind, &resolved, results),
        kind,
        resolved,
        tables,
    }
}

type Resolved = (BTreeMap<String, String>, Value);

fn run_trajectory_kind(
    kind: &str,
    mut r: Resolver,
    c: Common,
    runner: &Runner,
    tables: &mut Vec<(String, String)>,
) -> Result<Resolved> {
    match kind {
        "simulate" | "pam" => {
            let equation = if kind == "pam" {
                Equation::Pam {
                    mu: c.spec.mu,
                    sigma: c.spec.sigma,
                }
            } else {
                equation_key(&mut r, "nonlinear", &c.spec)?
            };
            let t_end: f64 = r.get("t_end", 1.0)?;
            let mut cfg = EnsembleConfig::new(Arc::clone(&c.spec), c.initial, equation, t_end);
            cfg.solver = c.solver;
            cfg.stride = r.get("stride", 100)?;
            cfg.snapshot_times = r.get_list("snapshot_times", &[t_end])?;
            cfg.trajectories = r.get("trajectories", 10)?;
            cfg.seed = c.seed;
            let resolved = r.finish()?;
            let ens = cfg.run(runner)?;
            ensemble_tables(&ens, tables);
            let last: Vec<f64> = ens
                .trajectories
                .iter()
                .filter_map(|t| t.snapshots.last().map(|s| s.mean_log()))
                .collect();
            let results = json!({
                "metadata": ens.metadata,
                "final_mean_log": mean_se(&last),
            });
            Ok((resolved, results))
        }
        "lyapunov" => {
            let equation = equation_key(&mut r, "pam", &c.spec)?;
            let t_end: f64 = r.get("t_end", 100.0)?;
            let t_start: f64 = r.get("t_start", t_end / 2.0)?;
            let points: usize = r.get("snapshots", 11)?;
            if points < 2 || !(t_start > 0.0 && t_start < t_end) {
                return Err(Error::config(
                    "lyapunov needs 0 < t_start < t_end and at least 2 snapshots",
                ));
            }
            let mut cfg = EnsembleConfig::new(Arc::clone(&c.spec), c.initial, equation, t_end);
            cfg.solver = c.solver;
            cfg.snapshot_times = (0..points)
                .map(|k| t_start + (t_end - t_start) * k as f64 / (points - 1) as f64)
                .collect();
            cfg.trajectories = r.get("trajectories", 200)?;
            cfg.seed = c.seed;
            let resolved = r.finish()?;
            let ens = cfg.run(runner)?;
            let est = lyapunov_estimate(&ens, (t_start, t_end))?;
            let mut csv = String::from("trajectory_id,lambda\n");
            for tr in &ens.trajectories {
                let s = tr.snapshot_at(t_end)?;
                let _ = writeln!(csv, "{},{}", tr.trajectory_id, s.mean_log() / t_end);
            }
            tables.push(("lyapunov.csv".into(), csv));
            let results = json!({
                "estimate": est,
                "target": crate::stats::lyapunov_target(c.spec.mu, c.spec.sigma),
                "gamma2": crate::stats::gamma2(c.spec.sigma),
            });
            Ok((resolved, results))
        }
        "clt" => {
            let times: Vec<f64> = r.get_list("times", &[25.0, 50.0, 100.0])?;
            let trajectories = r.get("trajectories", 500)?;
            let resolved = r.finish()?;
            if !c.spec.is_linear() {
                return Err(Error::config("clt runs a PAM; use reaction = linear"));
            }
            let s = clt_study(
                c.grid,
                c.spec.mu,
                c.spec.sigma,
                c.solver,
                &times,
                trajectories,
                c.seed,
                runner,
            )?;
            let mut csv = String::from("time,spatial_flatness,flatness_se,skewness,excess_kurtosis,y_mean,y_sd\n");
            for x in &s.reports {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    x.time, x.spatial_flatness, x.flatness_se, x.skewness, x.excess_kurtosis, x.y_mean, x.y_sd
                );
            }
            tables.push(("clt.csv".into(), csv));
            Ok((
                resolved,
                serde_json::to_value(&s).map_err(|e| Error::config(e.to_string()))?,
            ))
        }
        "dissipation" => {
            let equation = equation_key(&mut r, "nonlinear", &c.spec)?;
            let gamma = r.get("gamma", c.spec.dissipation_rate())?;
            let starts: Vec<f64> = r.get_list("starts", &[10.0, 20.0, 30.0])?;
            let horizon = r.get("horizon", 60.0)?;
            let trajectories = r.get("trajectories", 200)?;
            let resolved = r.finish()?;
            let pam = matches!(equation, Equation::Pam { .. });
            let rep = dissipation(
                Arc::clone(&c.spec),
                &c.initial,
                pam,
                c.solver,
                gamma,
                &starts,
                horizon,
                trajectories,
                c.seed,
                runner,
            )?;
            let mut csv = String::from("start,frequency,lower,upper,trajectories\n");
            for p in &rep.points {
                let d = p.dissipated;
                let _ = writeln!(csv, "{},{},{},{},{}", p.start, d.frequency, d.lower, d.upper, d.trials);
            }
            tables.push(("dissipation.csv".into(), csv));
            let results = json!({
                "high_noise": c.spec.check_high_noise(),
                "dissipation": rep,
            });
            Ok((resolved, results))
        }
        "oscillation" => {
            let equation = equation_key(&mut r, "nonlinear", &c.spec)?;
            let t_list: Vec<f64> = r.get_list("t_list", &[1.0, 5.0, 20.0])?;
            let k: u32 = r.get("k", 2)?;
            let t_end = t_list.iter().copied().fold(0.0, f64::max);
            let mut cfg = EnsembleConfig::new(Arc::clone(&c.spec), c.initial, equation, t_end);
            cfg.solver = c.solver;
            cfg.snapshot_times = t_list.clone();
            cfg.trajectories = r.get("trajectories", 200)?;
            cfg.seed = c.seed;
            let resolved = r.finish()?;
            let ens = cfg.run(runner)?;
            let rep = oscillation_moments(&ens, &t_list, k)?;
            let mut csv = String::from("time,moment,se\n");
            for (t, m, se) in &rep.moments {
                let _ = writeln!(csv, "{t},{m},{se}");
            }
            tables.push(("oscillation.csv".into(), csv));
            Ok((
                resolved,
                serde_json::to_value(&rep).map_err(|e| Error::config(e.to_string()))?,
            ))
        }
        "couple-pair" => {
            let alpha = r.get("alpha", 1.0)?;
            let t_end = r.get("t_end", 0.5)?;
            let distances: Vec<f64> = r.get_list("distances", &[0.2, 0.1, 0.05, 0.025])?;
            let trajectories = r.get("trajectories", 500)?;
            let resolved = r.finish()?;
            if !c.spec.is_linear() {
                return Err(Error::config("couple-pair runs a PAM pair; use reaction = linear"));
            }
            let level = c.initial.min();
            if c.initial.max() != level {
                return Err(Error::config("couple-pair starts from constant data; set init_cos = 0"));
            }
            if c.spec.mu != 0.0 {
                log::warn!(
                    "couple-pair with mu = {}: the gap integral is no longer a martingale",
                    c.spec.mu
                );
            }
            let rep = coupling_failure(
                c.grid,
                level,
                &distances,
                c.spec.sigma,
                alpha,
                c.solver,
                t_end,
                trajectories,
                c.seed,
                runner,
            )?;
            let mut csv = String::from("distance,trajectory_id,meeting_time\n");
            for p in &rep.points {
                for (id, m) in p.meeting_times.iter().enumerate() {
                    let m = m.map(|t| t.to_string()).unwrap_or_default();
                    let _ = writeln!(csv, "{},{id},{m}", p.distance);
                }
            }
            tables.push(("meetings.csv".into(), csv));
            Ok((
                resolved,
                serde_json::to_value(&rep).map_err(|e| Error::config(e.to_string()))?,
            ))
        }
        "staged-coupling" => {
            let epsilon = r.get("epsilon", default_epsilon())?;
            let l_star = r.get("l_star", 2.0)?;
            let eta = r.get("eta", 0.1)?;
            let n_max: usize = r.get("n_max", 30)?;
            let window: usize = r.get("window", 20)?;
            let runs = r.get("trajectories", 10)?;
            let resolved = r.finish()?;
            let s = staged_study(
                Arc::clone(&c.spec),
                &c.initial,
                c.solver,
                epsilon,
                l_star,
                eta,
                n_max,
                window,
                runs,
                c.seed,
                runner,
            )?;
            for (id, log) in s.logs.iter().enumerate() {
                tables.push((format!("events/run_{id:05}.csv"), log.to_csv()));
            }
            let mut csv = String::from("n,T_n,median_log_ratio\n");
            for (n, m) in s.median_log_ratio.iter().enumerate() {
                let _ = writeln!(csv, "{n},{},{m}", s.schedule.times[n]);
            }
            tables.push(("medians.csv".into(), csv));
            Ok((
                resolved,
                serde_json::to_value(&s).map_err(|e| Error::config(e.to_string()))?,
            ))
        }
        other => Err(Error::config(format!("unhandled kind `{other}`"))),
    }
}

/// Dry-run checks of a configuration. Never launches trajectories.
pub fn validate(raw: RawConfig) -> Result<Value> {
    let mut r = Resolver::new(raw.clone());
    let kind: String = r.get("kind", "simulate".to_string())?;
    let n: usize = r.get("n", 128)?;
    let grid = Grid::new(n).map_err(|e| Error::config(e.to_string()))?;
    let defaults = SolverConfig::default();
    let solver = SolverConfig {
        dt: r.get("dt", defaults.dt)?,
        theta: r.get("theta", defaults.theta)?,
        positivity_floor: r.get("floor", defaults.positivity_floor)?,
        blowup_cap: r.get("blowup_cap", defaults.blowup_cap)?,
    };
    let mut checks = serde_json::Map::new();
    let mut all_ok = true;
    let mut push = |name: &str, ok: bool, detail: Value| {
        all_ok &= ok;
        let mut entry = json!({ "ok": ok });
        if let (Value::Object(e), Value::Object(d)) = (&mut entry, detail) {
            e.extend(d);
        }
        checks.insert(name.to_string(), entry);
    };

    let h = grid.spacing();
    let limit = h * h / (2.0 * (1.0 - solver.theta).max(f64::MIN_POSITIVE));
    push(
        "cfl",
        solver.validate(grid).is_ok(),
        json!({ "dt": solver.dt, "theta": solver.theta, "explicit_limit": if solver.theta < 1.0 { json!(limit) } else { Value::Null } }),
    );

    if !matches!(kind.as_str(), "schedule" | "tailsum") {
        match resolve_spec(&mut r) {
            Ok(spec) => {
                // A multiplicative increment below -1 drives a cell negative;
                // keep its standard deviation well under that.
                let step_sd = spec.lip_g * (solver.dt / h).sqrt();
                push(
                    "noise_resolution",
                    step_sd <= NOISE_STEP_SD_MAX,
                    json!({ "step_sd": step_sd, "limit": NOISE_STEP_SD_MAX }),
                );
                let hn = spec.check_high_noise();
                push(
                    "high_noise",
                    hn.holds,
                    json!({
                        "sup_f_over_z": hn.sup_f_ratio,
                        "lg_squared_over_64": hn.threshold,
                        "margin": hn.margin,
                    }),
                );
            }
            Err(e) => push("reaction", false, json!({ "message": e.to_string() })),
        }
    }

    if matches!(kind.as_str(), "schedule" | "staged-coupling") || raw.entries.contains_key("epsilon") {
        let epsilon = r.get("epsilon", default_epsilon())?;
        let l_star = r.get("l_star", 2.0)?;
        let eta = r.get("eta", 0.1)?;
        let n_max: usize = r.get("n_max", if kind == "schedule" { 10 } else { 30 })?;
        let in_range = epsilon > 0.0 && epsilon < epsilon_limit();
        push(
            "epsilon_range",
            in_range,
            json!({ "epsilon": epsilon, "upper_limit": epsilon_limit() }),
        );
        if in_range {
            match build_schedule(epsilon, l_star, eta, n_max) {
                Ok(s) => push(
                    "schedule_monotone",
                    s.is_monotone(),
                    json!({ "delta": s.delta, "T0": s.t0() }),
                ),
                Err(e) => push("schedule_monotone", false, json!({ "message": e.to_string() })),
            }
        }
    }
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "status": "validated",
        "kind": kind,
        "all_ok": all_ok,
        "checks": checks,
    }))
}

/// Re-aggregates the per-trajectory series CSVs written by an earlier run.
/// With `dissipation = Some((γ, T, horizon))` the dissipation frequency is
/// recomputed from the recorded rows as well.
pub fn report(input: &Path, dissipation: Option<(f64, f64, f64)>) -> Result<RunOutput> {
    let dir = input.join("series");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::config(format!("no series CSVs in {}", dir.display())));
    }
    let series = files
        .iter()
        .map(|p| parse_series_csv(&std::fs::read_to_string(p)?))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<&[StepRecord]> = series.iter().map(|s| s.as_slice()).collect();
    let (summary, rows) = summary_csv(&views);
    let mut resolved = BTreeMap::new();
    resolved.insert("input".to_string(), input.display().to_string());
    let mut results = json!({ "trajectories": series.len(), "rows": rows });
    if let Some((gamma, from, horizon)) = dissipation {
        resolved.insert("gamma".into(), gamma.to_string());
        resolved.insert("from".into(), from.to_string());
        resolved.insert("horizon".into(), horizon.to_string());
        let p = dissipation_probability(&views, gamma, from, horizon)?;
        results["dissipation"] = serde_json::to_value(p).map_err(|e| Error::config(e.to_string()))?;
    }
    Ok(finish_output(
        "report".to_string(),
        resolved,
        results,
        vec![("summary.csv".into(), summary)],
    ))
}
