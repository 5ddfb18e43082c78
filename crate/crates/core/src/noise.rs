//! Discretized space-time white noise.
//!
//! Every increment field is a pure function of the tuple
//! `(master_seed, stream_id, trajectory_id, step_counter)`: the tuple is hashed
//! into the seed of a short-lived xoshiro generator that then emits one
//! standard normal per cell in cell order. Nothing is shared between streams,
//! so ensembles can be scheduled on any number of workers without perturbing a
//! single draw.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::torus::{Field, Grid};

/// Tolerance on `φ² + ψ² = 1` accepted by [`mix_noise`].
pub const MIX_NORM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub master_seed: u64,
    /// 0 is the driving noise `Ẇ`; `k ≥ 1` is the auxiliary noise of stage `k - 1`.
    pub stream_id: u64,
    pub trajectory_id: u64,
    pub step_counter: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl NoiseStream {
    pub fn new(master_seed: u64, stream_id: u64, trajectory_id: u64) -> Self {
        NoiseStream {
            master_seed,
            stream_id,
            trajectory_id,
            step_counter: 0,
        }
    }

    /// Same seed and trajectory, different stream.
    pub fn sibling(&self, stream_id: u64) -> Self {
        NoiseStream {
            stream_id,
            step_counter: 0,
            ..*self
        }
    }

    fn step_key(&self) -> u64 {
        let mut h = splitmix64(self.master_seed);
        h = splitmix64(h ^ self.stream_id);
        h = splitmix64(h ^ self.trajectory_id);
        splitmix64(h ^ self.step_counter)
    }

    /// Fills `out` with centered Gaussians of variance `variance` and advances
    /// the counter. This is the allocation-free path used by the integrators.
    pub fn fill_gaussian(&mut self, variance: f64, out: &mut [f64]) {
        let scale = variance.sqrt();
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(self.step_key());
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = scale * z;
        }
        self.step_counter += 1;
    }

    /// Cell-averaged white-noise increment over a time step `dt`:
    /// i.i.d. `N(0, dt / spacing)` per cell.
    pub fn sample_increment(&mut self, grid: Grid, dt: f64) -> Result<Field> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::domain(format!("noise increment needs dt > 0, got {dt}")));
        }
        let mut values = vec![0.0; grid.n_points()];
        self.fill_gaussian(dt / grid.spacing(), &mut values);
        Field::from_values(grid, values)
    }
}

/// Increments for a coarse grid built by aggregating the increments of a
/// grid `space` times finer over `time` consecutive shorter steps.
///
/// A run driven by this source and a run on the fine grid driven by the
/// wrapped stream see the same realization of the noise, which makes
/// refinement comparisons free of independent sampling error. With
/// `space = time = 1` it reproduces the wrapped stream bit for bit.
#[derive(Debug, Clone)]
pub struct AggregatedNoise {
    pub stream: NoiseStream,
    pub space: usize,
    pub time: usize,
    fine: Vec<f64>,
}

impl AggregatedNoise {
    pub fn new(stream: NoiseStream, space: usize, time: usize) -> Result<Self> {
        if space == 0 || time == 0 {
            return Err(Error::domain("aggregation factors must be positive"));
        }
        Ok(AggregatedNoise {
            stream,
            space,
            time,
            fine: Vec::new(),
        })
    }

    /// Fills `out` (one value per coarse cell of spacing `coarse_spacing`)
    /// with the increment over a coarse step `dt`.
    pub fn fill(&mut self, coarse_spacing: f64, dt: f64, out: &mut [f64]) {
        let fine_var = (dt / self.time as f64) / (coarse_spacing / self.space as f64);
        self.fine.resize(out.len() * self.space, 0.0);
        out.iter_mut().for_each(|o| *o = 0.0);
        for _ in 0..self.time {
            self.stream.fill_gaussian(fine_var, &mut self.fine);
            for (o, chunk) in out.iter_mut().zip(self.fine.chunks_exact(self.space)) {
                *o += chunk.iter().sum::<f64>();
            }
        }
        let w = 1.0 / self.space as f64;
        out.iter_mut().for_each(|o| *o *= w);
    }
}

/// `ψ·dW + φ·dW0` cellwise, for mixing profiles with `φ² + ψ² = 1`.
pub fn mix_noise(dw: &Field, dw0: &Field, phi: &Field, psi: &Field) -> Result<Field> {
    let grid = dw.grid();
    if dw0.grid() != grid || phi.grid() != grid || psi.grid() != grid {
        return Err(Error::domain("mix_noise fields live on different grids"));
    }
    let mut out = Vec::with_capacity(grid.n_points());
    for i in 0..grid.n_points() {
        let (p, s) = (phi.values()[i], psi.values()[i]);
        let norm = p * p + s * s - 1.0;
        if norm.abs() > MIX_NORM_TOL {
            return Err(Error::domain(format!(
                "mixing profile violates φ² + ψ² = 1 at cell {i} (off by {norm:e})"
            )));
        }
        out.push(s * dw.values()[i] + p * dw0.values()[i]);
    }
    Field::from_values(grid, out)
}

/// Parses a 64-bit seed written in decimal or as `0x`-prefixed hexadecimal.
pub fn parse_seed(text: &str) -> Result<u64> {
    let t = text.trim().replace('_', "");
    let parsed = if let Some(hex) = t.strip_prefix("0x").or_else(|| t.strip_prefix("0X")) {
        u64::from_str_radix(hex, 16)
    } else {
        t.parse::<u64>()
    };
    parsed.map_err(|e| Error::config(format!("invalid seed {text:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replay_is_bit_exact() {
        let g = Grid::new(32).unwrap();
        let mut a = NoiseStream::new(7, 0, 3);
        let mut b = NoiseStream::new(7, 0, 3);
        for _ in 0..5 {
            assert_eq!(
                a.sample_increment(g, 1e-3).unwrap(),
                b.sample_increment(g, 1e-3).unwrap()
            );
        }
        assert_eq!(a.step_counter, 5);
        // Jumping straight to a counter reproduces that step.
        let mut c = NoiseStream {
            step_counter: 4,
            ..NoiseStream::new(7, 0, 3)
        };
        let mut d = NoiseStream::new(7, 0, 3);
        for _ in 0..4 {
            d.sample_increment(g, 1e-3).unwrap();
        }
        assert_eq!(
            c.sample_increment(g, 1e-3).unwrap(),
            d.sample_increment(g, 1e-3).unwrap()
        );
    }

    #[test]
    fn distinct_tuples_differ() {
        let g = Grid::new(16).unwrap();
        let base = NoiseStream::new(1, 0, 0);
        let x = { base }.sample_increment(g, 1e-3).unwrap();
        for other in [base.sibling(1), NoiseStream::new(1, 0, 1), NoiseStream::new(2, 0, 0)] {
            let mut o = other;
            assert_ne!(o.sample_increment(g, 1e-3).unwrap(), x);
        }
    }

    #[test]
    fn rejects_bad_dt() {
        let g = Grid::new(8).unwrap();
        assert!(NoiseStream::new(0, 0, 0).sample_increment(g, 0.0).is_err());
        assert!(NoiseStream::new(0, 0, 0).sample_increment(g, -1.0).is_err());
    }

    #[test]
    fn mixing_limits_are_exact() {
        let g = Grid::new(8).unwrap();
        let dw = NoiseStream::new(3, 0, 0).sample_increment(g, 0.01).unwrap();
        let dw0 = NoiseStream::new(3, 1, 0).sample_increment(g, 0.01).unwrap();
        let zero = Field::zeros(g);
        let one = Field::constant(g, 1.0);
        assert_eq!(mix_noise(&dw, &dw0, &zero, &one).unwrap(), dw);
        assert_eq!(mix_noise(&dw, &dw0, &one, &zero).unwrap(), dw0);
        let bad = Field::constant(g, 0.5);
        assert!(mix_noise(&dw, &dw0, &bad, &bad).is_err());
    }

    #[test]
    fn unit_aggregation_is_the_plain_stream() {
        let g = Grid::new(16).unwrap();
        let mut plain = NoiseStream::new(5, 0, 2);
        let mut agg = AggregatedNoise::new(NoiseStream::new(5, 0, 2), 1, 1).unwrap();
        let mut out = vec![0.0; 16];
        for _ in 0..3 {
            agg.fill(g.spacing(), 1e-3, &mut out);
            assert_eq!(plain.sample_increment(g, 1e-3).unwrap().values(), &out[..]);
        }
    }

    #[test]
    fn aggregation_matches_fine_sums() {
        let coarse = Grid::new(8).unwrap();
        let fine = Grid::new(16).unwrap();
        let mut agg = AggregatedNoise::new(NoiseStream::new(5, 0, 2), 2, 4).unwrap();
        let mut out = vec![0.0; 8];
        agg.fill(coarse.spacing(), 4e-3, &mut out);
        let mut s = NoiseStream::new(5, 0, 2);
        let mut want = vec![0.0; 8];
        for _ in 0..4 {
            let f = s.sample_increment(fine, 1e-3).unwrap();
            for (i, v) in f.values().iter().enumerate() {
                want[i / 2] += v;
            }
        }
        for (a, b) in out.iter().zip(&want) {
            assert!((a - b / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn seeds_parse_in_both_bases() {
        assert_eq!(parse_seed("42").unwrap(), 42);
        assert_eq!(parse_seed("0x2A").unwrap(), 42);
        assert_eq!(parse_seed(" 0xdead_beef ").unwrap(), 0xdead_beef);
        assert_eq!(parse_seed("18446744073709551615").unwrap(), u64::MAX);
        assert!(parse_seed("0xZZ").is_err());
        assert!(parse_seed("-1").is_err());
    }
}
