//! Uniform discretization of the torus `T = R/2Z ≅ [-1, 1)` and the periodic
//! heat kernel of `∂_t = ∂²_x` on it.
//!
//! The kernel is the image sum
//!
//! ```text
//! p_t(a) = Σ_n G_t(a + 2n),   G_t(a) = (4πt)^{-1/2} exp(-a² / (4t)),
//! ```
//!
//! normalized so that `∫_T p_t = 1`. Some printed versions of this formula carry
//! `(4πt²)^{-1/2}` as prefactor; that variant does not integrate to one and is
//! not used here.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Circumference of the torus.
pub const CIRCUMFERENCE: f64 = 2.0;

const MAX_IMAGES: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n_points: usize,
    spacing: f64,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 4 {
            return Err(Error::domain(format!("grid needs at least 4 points, got {n_points}")));
        }
        Ok(Grid {
            n_points,
            spacing: CIRCUMFERENCE / n_points as f64,
        })
    }

    #[inline]
    pub fn n_points(&self) -> usize {
        self.n_points
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Coordinate `x_i = -1 + i·spacing`.
    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        -1.0 + i as f64 * self.spacing
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }

    #[inline]
    pub fn left(&self, i: usize) -> usize {
        if i == 0 {
            self.n_points - 1
        } else {
            i - 1
        }
    }

    #[inline]
    pub fn right(&self, i: usize) -> usize {
        if i + 1 == self.n_points {
            0
        } else {
            i + 1
        }
    }
}

/// A real profile sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(Error::domain(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite field value {} at cell {i}",
                values[i]
            )));
        }
        Ok(Field { grid, values })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Field {
            grid,
            values: vec![c; grid.n_points()],
        }
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_values(grid, grid.points().map(f).collect())
    }

    #[inline]
    pub fn grid(&self) -> Grid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mutable access for in-place integrators. Callers keep the values finite.
    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rectangle-rule integral over the torus.
    pub fn integral(&self) -> f64 {
        self.grid.spacing() * pairwise_sum(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.integral() / CIRCUMFERENCE
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Order-independent summation used by every quadrature and reduction.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        xs.iter().sum()
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// Number of images that keeps the truncation error of [`heat_kernel`] below
/// roughly `1e-12` of the peak for every displacement in `[-1, 1)`.
pub fn default_images(t: f64) -> usize {
    let k = ((120.0 * t).sqrt() - 1.0) / 2.0;
    (k.ceil().max(3.0)) as usize
}

/// Periodic heat kernel `p_t(dx)` with `k_images` images on each side.
pub fn heat_kernel(t: f64, dx: f64, k_images: usize) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::domain(format!("heat kernel needs t > 0, got {t}")));
    }
    if !dx.is_finite() {
        return Err(Error::domain(format!("non-finite displacement {dx}")));
    }
    if k_images > MAX_IMAGES {
        return Err(Error::domain(format!(
            "{k_images} images would overflow the image sum (max {MAX_IMAGES})"
        )));
    }
    // Reduce to [-1, 1) and fold the sign so that p(dx) == p(-dx) bit for bit.
    let folded = dx.abs().rem_euclid(CIRCUMFERENCE);
    let a = folded.min(CIRCUMFERENCE - folded);
    let norm = (4.0 * PI * t).sqrt().recip();
    let g = |y: f64| (-(y * y) / (4.0 * t)).exp();
    let mut sum = g(a);
    for n in 1..=k_images {
        let shift = CIRCUMFERENCE * n as f64;
        sum += g(a + shift) + g(a - shift);
    }
    Ok(norm * sum)
}

/// Quadrature weights `spacing · p_t(m·spacing)` for every cyclic offset `m`.
pub fn kernel_row(t: f64, grid: Grid) -> Result<Vec<f64>> {
    let k = default_images(t);
    let h = grid.spacing();
    (0..grid.n_points())
        .map(|m| heat_kernel(t, m as f64 * h, k).map(|p| h * p))
        .collect()
}

/// `(p_t * φ)(x_i)` by cyclic rectangle-rule quadrature.
///
/// For `t` below `spacing²` the kernel is not resolved by the grid; the input
/// is returned unchanged and a warning is logged.
pub fn convolve(kernel_time: f64, phi: &Field) -> Result<Field> {
    if !(kernel_time > 0.0) {
        return Err(Error::domain(format!("convolution needs t > 0, got {kernel_time}")));
    }
    let grid = phi.grid();
    let h = grid.spacing();
    if kernel_time < h * h {
        log::warn!(
            "kernel time {kernel_time:e} below spacing² = {:e}; convolution is the identity",
            h * h
        );
        return Ok(phi.clone());
    }
    let row = kernel_row(kernel_time, grid)?;
    let n = grid.n_points();
    let src = phi.values();
    let mut out = vec![0.0; n];
    let mut terms = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        for (j, term) in terms.iter_mut().enumerate() {
            let m = if i >= j { i - j } else { i + n - j };
            *term = row[m] * src[j];
        }
        *o = pairwise_sum(&terms);
    }
    Field::from_values(grid, out)
}

pub fn sup_norm(phi: &Field) -> f64 {
    phi.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

pub fn inf_value(phi: &Field) -> f64 {
    phi.min()
}

/// `max φ / min φ`; requires a strictly positive profile.
pub fn oscillation_ratio(phi: &Field) -> Result<f64> {
    let lo = phi.min();
    if !(lo > 0.0) {
        return Err(Error::domain(format!(
            "oscillation ratio needs a strictly positive profile, minimum is {lo:e}"
        )));
    }
    Ok(phi.max() / lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn grid_is_cyclic() {
        let g = Grid::new(8).unwrap();
        assert_eq!(g.right(7), 0);
        assert_eq!(g.left(0), 7);
        assert_eq!(g.spacing() * 8.0, 2.0);
        assert_eq!(g.point(0), -1.0);
        assert!(Grid::new(3).is_err());
    }

    #[test]
    fn field_rejects_non_finite() {
        let g = Grid::new(4).unwrap();
        assert!(Field::from_values(g, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Field::from_values(g, vec![1.0; 5]).is_err());
    }

    #[test]
    fn kernel_rejects_bad_time() {
        assert!(heat_kernel(0.0, 0.1, 3).is_err());
        assert!(heat_kernel(-1.0, 0.1, 3).is_err());
        assert!(heat_kernel(1.0, 0.1, MAX_IMAGES + 1).is_err());
    }

    #[test]
    fn kernel_peak_at_short_time() {
        // (4π·0.01)^{-1/2}
        let p = heat_kernel(0.01, 0.0, default_images(0.01)).unwrap();
        assert_abs_diff_eq!(p, 2.820_947_917_738_781, epsilon = 1e-12);
    }

    #[test]
    fn kernel_long_time_is_uniform() {
        for dx in [-1.0, -0.3, 0.0, 0.5, 0.99] {
            let p = heat_kernel(10.0, dx, default_images(10.0)).unwrap();
            assert_abs_diff_eq!(p, 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn kernel_is_symmetric_and_periodic() {
        for dx in [0.0, 0.13, 0.5, 0.999, 1.7] {
            let a = heat_kernel(0.2, dx, 5).unwrap();
            let b = heat_kernel(0.2, -dx, 5).unwrap();
            assert_eq!(a, b);
        }
        let a = heat_kernel(0.2, 0.3, 5).unwrap();
        let b = heat_kernel(0.2, 2.3, 5).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-14);
    }

    #[test]
    fn convolve_preserves_constants() {
        let g = Grid::new(64).unwrap();
        let phi = Field::constant(g, 3.0);
        let out = convolve(0.05, &phi).unwrap();
        for v in out.values() {
            assert_abs_diff_eq!(*v, 3.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn convolve_below_resolution_is_identity() {
        let g = Grid::new(16).unwrap();
        let phi = Field::from_fn(g, |x| x * x).unwrap();
        let out = convolve(1e-4, &phi).unwrap();
        assert_eq!(out, phi);
    }

    #[test]
    fn oscillation_examples() {
        let g = Grid::new(4).unwrap();
        assert_eq!(oscillation_ratio(&Field::constant(g, 3.0)).unwrap(), 1.0);
        let f = Field::from_values(g, vec![1.0, 2.0, 4.0, 2.0]).unwrap();
        assert_eq!(oscillation_ratio(&f).unwrap(), 4.0);
        let z = Field::from_values(g, vec![1.0, 0.0, 4.0, 2.0]).unwrap();
        assert!(matches!(oscillation_ratio(&z), Err(Error::Domain(_))));
        let s = Field::from_values(g, vec![-5.0, 0.0, 4.0, 2.0]).unwrap();
        assert_eq!(sup_norm(&s), 5.0);
        assert_eq!(inf_value(&s), -5.0);
    }
}
