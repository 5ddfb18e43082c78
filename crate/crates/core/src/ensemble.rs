//! Parallel execution of independent trajectories.
//!
//! Each trajectory draws from streams keyed by its id, and results are
//! collected in id order, so the worker count never changes an output.

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::noise::NoiseStream;
use crate::reaction::ReactionSpec;
use crate::solver::{evolve, Equation, SeriesRecorder, SolverConfig, TrajectoryState};
use crate::stats::{EnsembleResult, Snapshot, TrajectorySeries};
use crate::torus::Field;

/// A fixed-size worker pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Runner {
    pub workers: usize,
}

impl Default for Runner {
    fn default() -> Self {
        Runner { workers: 1 }
    }
}

impl Runner {
    pub fn new(workers: usize) -> Self {
        Runner {
            workers: workers.max(1),
        }
    }

    /// Evaluates `job(id)` for `id = 0..count`. The results come back in id
    /// order; on failure the error of the smallest failing id is returned.
    pub fn map<T, F>(&self, count: u64, job: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        let results: Vec<Result<T>> = if self.workers == 1 {
            (0..count).map(&job).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.workers)
                .build()
                .map_err(|e| Error::config(format!("cannot start {} workers: {e}", self.workers)))?;
            pool.install(|| (0..count).into_par_iter().map(&job).collect())
        };
        results.into_iter().collect()
    }
}

/// An ensemble of independent runs of one equation from one initial field.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub spec: Arc<ReactionSpec>,
    pub initial: Field,
    pub solver: SolverConfig,
    pub equation: Equation,
    pub t_end: f64,
    /// Times at which full log-profiles are kept (sorted, within `(0, t_end]`).
    pub snapshot_times: Vec<f64>,
    /// Row stride of the recorded `(time, sup, inf, mass)` series.
    pub stride: u64,
    pub seed: u64,
    pub stream: u64,
    pub trajectories: u64,
}

impl EnsembleConfig {
    pub fn new(spec: Arc<ReactionSpec>, initial: Field, equation: Equation, t_end: f64) -> Self {
        EnsembleConfig {
            spec,
            initial,
            solver: SolverConfig::default(),
            equation,
            t_end,
            snapshot_times: vec![t_end],
            stride: 0,
            seed: 0,
            stream: 0,
            trajectories: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate(self.initial.grid())?;
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return Err(Error::config(format!(
                "t_end must be finite and nonnegative, got {}",
                self.t_end
            )));
        }
        if self.trajectories == 0 {
            return Err(Error::config("ensemble needs at least one trajectory"));
        }
        let sorted = self.snapshot_times.windows(2).all(|w| w[0] < w[1]);
        let inside = self.snapshot_times.iter().all(|t| *t >= 0.0 && *t <= self.t_end);
        if !sorted || !inside {
            return Err(Error::config("snapshot times must be increasing and inside [0, t_end]"));
        }
        Ok(())
    }

    pub fn metadata(&self) -> serde_json::Value {
        let equation = match self.equation {
            Equation::Nonlinear => json!({ "kind": "nonlinear" }),
            Equation::Pam { mu, sigma } => json!({ "kind": "pam", "mu": mu, "sigma": sigma }),
        };
        json!({
            "spec": self.spec.name,
            "mu": self.spec.mu,
            "sigma": self.spec.sigma,
            "equation": equation,
            "n": self.initial.len(),
            "solver": self.solver,
            "t_end": self.t_end,
            "snapshot_times": self.snapshot_times,
            "stride": self.stride,
            "seed": self.seed,
            "stream": self.stream,
            "trajectories": self.trajectories,
        })
    }

    /// One trajectory, driven by `(seed, stream, id)`.
    pub fn trajectory(&self, id: u64) -> Result<TrajectorySeries> {
        let noise = NoiseStream::new(self.seed, self.stream, id);
        let mut state = TrajectoryState::new(Arc::clone(&self.spec), &self.initial, noise);
        let mut rec = SeriesRecorder::new(self.stride);
        let recording = self.stride > 0;
        if recording {
            rec.observe(&state);
        }
        let mut snapshots = Vec::with_capacity(self.snapshot_times.len());
        for &t in &self.snapshot_times {
            self.advance(&mut state, t, &mut rec, recording)?;
            snapshots.push(Snapshot {
                time: t,
                log_profile: state.log_profile(),
            });
        }
        self.advance(&mut state, self.t_end, &mut rec, recording)?;
        Ok(TrajectorySeries {
            trajectory_id: id,
            rows: rec.rows,
            snapshots,
        })
    }

    fn advance(&self, state: &mut TrajectoryState, t: f64, rec: &mut SeriesRecorder, recording: bool) -> Result<()> {
        if recording {
            evolve(state, &self.solver, self.equation, t, &mut [rec])
        } else {
            evolve(state, &self.solver, self.equation, t, &mut [])
        }
    }

    pub fn run(&self, runner: &Runner) -> Result<EnsembleResult> {
        self.validate()?;
        let trajectories = runner.map(self.trajectories, |id| self.trajectory(id))?;
        Ok(EnsembleResult {
            metadata: self.metadata(),
            trajectories,
        })
    }
}
