//! The nonlinearity pair `(f, g)` and the constants derived from it.
//!
//! Both functions are stored through their *rates* `z ↦ f(z)/z`, which is the
//! form every derived quantity is written in (`μ = f'(0+)`, `L_g = inf |g(z)/z|`,
//! `sup f(z)/z`, the linearization modulus). It is also the form the
//! integrator needs: a field stored as `mantissa · 2^e` evaluates
//! `f(w) / 2^e = mantissa · rate_f(w)`, which stays exact deep in the
//! dissipative regime where `w` itself would underflow.

use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

/// Default clamp radius of the polynomial presets.
pub const DEFAULT_CAP: f64 = 10.0;

/// Sampling window and density for constants without a closed form.
const SAMPLE_LOG10_MIN: f64 = -12.0;
const SAMPLE_LOG10_MAX: f64 = 12.0;
const SAMPLES_PER_DECADE: usize = 1000;
const LIPSCHITZ_SAMPLES: usize = 10_001;
const LIPSCHITZ_RANGE: f64 = 10.0;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// One scalar nonlinearity vanishing at the origin.
#[derive(Clone)]
pub enum Nonlinearity {
    /// `z ↦ slope·z`.
    Linear { slope: f64 },
    /// `a z - b z²` on `|z| ≤ cap`, continued by its tangent lines outside.
    ClampedQuadratic { a: f64, b: f64, cap: f64 },
    /// `a z - b z³` on `|z| ≤ cap`, continued by its tangent lines outside.
    ClampedCubic { a: f64, b: f64, cap: f64 },
    /// Arbitrary function; constants are obtained by sampling.
    Custom { name: String, func: ScalarFn },
}

impl fmt::Debug for Nonlinearity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Nonlinearity::Linear { slope } => write!(f, "Linear({slope})"),
            Nonlinearity::ClampedQuadratic { a, b, cap } => {
                write!(f, "ClampedQuadratic(a={a}, b={b}, cap={cap})")
            }
            Nonlinearity::ClampedCubic { a, b, cap } => {
                write!(f, "ClampedCubic(a={a}, b={b}, cap={cap})")
            }
            Nonlinearity::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

impl Nonlinearity {
    pub fn custom(name: impl Into<String>, func: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Nonlinearity::Custom {
            name: name.into(),
            func: Arc::new(func),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Nonlinearity::Linear { .. })
    }

    pub fn value(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Linear { slope } => slope * z,
            Nonlinearity::ClampedQuadratic { a, b, cap } => {
                let poly = |z: f64| a * z - b * z * z;
                let slope = |z: f64| a - 2.0 * b * z;
                clamp_tangent(z, *cap, poly, slope)
            }
            Nonlinearity::ClampedCubic { a, b, cap } => {
                let poly = |z: f64| a * z - b * z * z * z;
                let slope = |z: f64| a - 3.0 * b * z * z;
                clamp_tangent(z, *cap, poly, slope)
            }
            Nonlinearity::Custom { func, .. } => func(z),
        }
    }

    /// `f(z)/z`; at `z = 0` the right derivative is returned.
    #[inline]
    pub fn rate(&self, z: f64) -> f64 {
        match self {
            Nonlinearity::Linear { slope } => *slope,
            Nonlinearity::ClampedQuadratic { a, b, cap } if z.abs() <= *cap => a - b * z,
            Nonlinearity::ClampedCubic { a, b, cap } if z.abs() <= *cap => a - b * z * z,
            _ if z == 0.0 => self.right_derivative(),
            _ => self.value(z) / z,
        }
    }

    /// `f'(0+)`, in closed form or by Richardson extrapolation of `f(h)/h`
    /// at `h = 1e-6` and `1e-7`.
    pub fn right_derivative(&self) -> f64 {
        match self {
            Nonlinearity::Linear { slope } => *slope,
            Nonlinearity::ClampedQuadratic { a, .. } | Nonlinearity::ClampedCubic { a, .. } => *a,
            Nonlinearity::Custom { func, .. } => {
                let (h1, h2) = (1e-6, 1e-7);
                let (d1, d2) = (func(h1) / h1, func(h2) / h2);
                (h1 * d2 - h2 * d1) / (h1 - h2)
            }
        }
    }

    /// Global Lipschitz constant (closed form, or sampled on `[-10, 10]`).
    pub fn lipschitz(&self) -> f64 {
        match self {
            Nonlinearity::Linear { slope } => slope.abs(),
            Nonlinearity::ClampedQuadratic { a, b, cap } => a.abs() + 2.0 * b.abs() * cap,
            Nonlinearity::ClampedCubic { a, b, cap } => a.abs().max((a - 3.0 * b * cap * cap).abs()),
            Nonlinearity::Custom { .. } => {
                let step = 2.0 * LIPSCHITZ_RANGE / (LIPSCHITZ_SAMPLES - 1) as f64;
                let mut prev = self.value(-LIPSCHITZ_RANGE);
                let mut lip = 0.0_f64;
                for j in 1..LIPSCHITZ_SAMPLES {
                    let z = -LIPSCHITZ_RANGE + j as f64 * step;
                    let cur = self.value(z);
                    lip = lip.max(((cur - prev) / step).abs());
                    prev = cur;
                }
                lip
            }
        }
    }

    /// Infimum and supremum of `f(z)/z` over `z > 0`.
    pub fn rate_bounds(&self) -> (f64, f64) {
        match self {
            Nonlinearity::Linear { slope } => (*slope, *slope),
            // The rate decreases monotonically from `a` (at 0+) to the slope of
            // the right tangent line (at +∞).
            Nonlinearity::ClampedQuadratic { a, b, cap } if *b >= 0.0 => (a - 2.0 * b * cap, *a),
            Nonlinearity::ClampedCubic { a, b, cap } if *b >= 0.0 => (a - 3.0 * b * cap * cap, *a),
            _ => {
                let mut lo = self.right_derivative();
                let mut hi = lo;
                for z in log_grid(SAMPLE_LOG10_MIN, SAMPLE_LOG10_MAX, SAMPLES_PER_DECADE) {
                    let r = self.rate(z);
                    lo = lo.min(r);
                    hi = hi.max(r);
                }
                (lo, hi)
            }
        }
    }

    /// `inf_{z>0} |f(z)/z|`.
    pub fn abs_rate_infimum(&self) -> f64 {
        match self {
            Nonlinearity::Custom { .. } => {
                let mut lo = self.right_derivative().abs();
                for z in log_grid(SAMPLE_LOG10_MIN, SAMPLE_LOG10_MAX, SAMPLES_PER_DECADE) {
                    lo = lo.min(self.rate(z).abs());
                }
                lo
            }
            _ => {
                let (lo, hi) = self.rate_bounds();
                if lo <= 0.0 && hi >= 0.0 {
                    0.0
                } else {
                    lo.abs().min(hi.abs())
                }
            }
        }
    }
}

fn clamp_tangent(z: f64, cap: f64, poly: impl Fn(f64) -> f64, slope: impl Fn(f64) -> f64) -> f64 {
    if z > cap {
        poly(cap) + slope(cap) * (z - cap)
    } else if z < -cap {
        poly(-cap) + slope(-cap) * (z + cap)
    } else {
        poly(z)
    }
}

/// Log-spaced points `10^e` for `e` from `lo` to `hi` inclusive.
fn log_grid(lo: f64, hi: f64, per_decade: usize) -> impl Iterator<Item = f64> {
    let n = ((hi - lo) * per_decade as f64).round() as usize;
    (0..=n).map(move |j| 10f64.powf(lo + (hi - lo) * j as f64 / n as f64))
}

/// The pair `(f, g)` with its derived constants.
#[derive(Debug, Clone)]
pub struct ReactionSpec {
    pub name: String,
    pub f: Nonlinearity,
    pub g: Nonlinearity,
    /// `f'(0+)`.
    pub mu: f64,
    /// `g'(0+)`.
    pub sigma: f64,
    pub lip_f: f64,
    pub lip_g: f64,
    /// `inf_{z>0} |g(z)/z|`.
    pub l_g: f64,
    /// `sup_{z>0} f(z)/z`.
    pub sup_f_ratio: f64,
    /// Exponent of the logarithmic modulus of the linearization error, when known.
    pub chi: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HighNoiseReport {
    pub holds: bool,
    /// Left side: `sup_{z>0} f(z)/z`.
    pub sup_f_ratio: f64,
    /// Right side: `L_g² / 64`.
    pub threshold: f64,
    /// `threshold - sup_f_ratio`; equals the dissipation rate.
    pub margin: f64,
}

impl ReactionSpec {
    pub fn new(name: impl Into<String>, f: Nonlinearity, g: Nonlinearity) -> Result<Self> {
        let spec = ReactionSpec {
            name: name.into(),
            mu: f.right_derivative(),
            sigma: g.right_derivative(),
            lip_f: f.lipschitz(),
            lip_g: g.lipschitz(),
            l_g: g.abs_rate_infimum(),
            sup_f_ratio: f.rate_bounds().1,
            chi: None,
            f,
            g,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<()> {
        for (label, nl) in [("f", &self.f), ("g", &self.g)] {
            let at_zero = nl.value(0.0);
            if at_zero != 0.0 {
                return Err(Error::domain(format!("{label}(0) = {at_zero}, must vanish")));
            }
            if let Nonlinearity::ClampedQuadratic { a, b, cap } | Nonlinearity::ClampedCubic { a, b, cap } = nl {
                if !(a.is_finite() && b.is_finite() && *b >= 0.0 && *cap > 0.0 && cap.is_finite()) {
                    return Err(Error::domain(format!(
                        "{label}: clamped preset needs finite a, b ≥ 0 and cap > 0"
                    )));
                }
            }
        }
        let constants = [self.mu, self.sigma, self.lip_f, self.lip_g, self.l_g, self.sup_f_ratio];
        if constants.iter().any(|c| !c.is_finite()) {
            return Err(Error::domain(format!("non-finite derived constant in {:?}", self.name)));
        }
        Ok(())
    }

    pub fn with_chi(mut self, chi: f64) -> Result<Self> {
        if !(chi > 2.0) {
            return Err(Error::domain(format!("modulus exponent must exceed 2, got {chi}")));
        }
        self.chi = Some(chi);
        Ok(self)
    }

    /// `f(z) = μz`, `g(z) = σz`.
    pub fn linear(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(
            "linear",
            Nonlinearity::Linear { slope: mu },
            Nonlinearity::Linear { slope: sigma },
        )
    }

    /// Clamped Fisher-KPP drift `a z - b z²` with noise `g(z) = noise·z`.
    pub fn fisher_kpp(a: f64, b: f64, noise: f64) -> Result<Self> {
        Self::fisher_kpp_capped(a, b, noise, DEFAULT_CAP)
    }

    pub fn fisher_kpp_capped(a: f64, b: f64, noise: f64, cap: f64) -> Result<Self> {
        Self::new(
            "fisher_kpp",
            Nonlinearity::ClampedQuadratic { a, b, cap },
            Nonlinearity::Linear { slope: noise },
        )
    }

    /// Clamped Allen-Cahn drift `a z - b z³` with noise `g(z) = noise·z`.
    pub fn allen_cahn(a: f64, b: f64, noise: f64) -> Result<Self> {
        Self::allen_cahn_capped(a, b, noise, DEFAULT_CAP)
    }

    pub fn allen_cahn_capped(a: f64, b: f64, noise: f64, cap: f64) -> Result<Self> {
        Self::new(
            "allen_cahn",
            Nonlinearity::ClampedCubic { a, b, cap },
            Nonlinearity::Linear { slope: noise },
        )
    }

    /// Builds a preset from its name and a parameter lookup.
    ///
    /// | name         | parameters (defaults)                    |
    /// |--------------|------------------------------------------|
    /// | `linear`     | `mu` (0), `sigma` (1)                    |
    /// | `fisher_kpp` | `a`, `b`, `noise` (1), `cap` (10)        |
    /// | `allen_cahn` | `a`, `b`, `noise` (1), `cap` (10)        |
    pub fn preset(name: &str, param: impl Fn(&str) -> Option<f64>) -> Result<Self> {
        let req = |key: &str| param(key).ok_or_else(|| Error::config(format!("preset {name} needs parameter {key}")));
        let spec = match name {
            "linear" => Self::linear(param("mu").unwrap_or(0.0), param("sigma").unwrap_or(1.0)),
            "fisher_kpp" => Self::fisher_kpp_capped(
                req("a")?,
                req("b")?,
                param("noise").unwrap_or(1.0),
                param("cap").unwrap_or(DEFAULT_CAP),
            ),
            "allen_cahn" => Self::allen_cahn_capped(
                req("a")?,
                req("b")?,
                param("noise").unwrap_or(1.0),
                param("cap").unwrap_or(DEFAULT_CAP),
            ),
            other => return Err(Error::config(format!("unknown reaction preset {other:?}"))),
        }?;
        match param("chi") {
            Some(chi) => spec.with_chi(chi),
            None => Ok(spec),
        }
    }

    /// True when `f` and `g` are both exactly linear (the equation is a PAM).
    pub fn is_linear(&self) -> bool {
        self.f.is_linear() && self.g.is_linear()
    }

    /// `γ = L_g²/64 - sup_{z>0} f(z)/z`.
    pub fn dissipation_rate(&self) -> f64 {
        self.l_g * self.l_g / 64.0 - self.sup_f_ratio
    }

    pub fn check_high_noise(&self) -> HighNoiseReport {
        let threshold = self.l_g * self.l_g / 64.0;
        HighNoiseReport {
            holds: self.sup_f_ratio < threshold,
            sup_f_ratio: self.sup_f_ratio,
            threshold,
            margin: threshold - self.sup_f_ratio,
        }
    }

    /// Fails when the coupling experiments cannot run with this spec.
    pub fn require_coupling_ready(&self) -> Result<()> {
        if !(self.l_g > 0.0) {
            return Err(Error::domain(format!(
                "{}: L_g = 0, the coupling construction needs a noise bounded below",
                self.name
            )));
        }
        Ok(())
    }
}

/// `ℰ(a) = sup_{0<z≤a} |f(z)/z - μ| + sup_{0<z≤a} |g(z)/z - σ|`.
///
/// The suprema run over a fixed log-spaced grid of `n_samples` points covering
/// `[1e-12, 1]`, restricted to `z ≤ a`, plus the point `a` itself. Using one
/// grid for every `a` makes the estimate exactly nondecreasing in `a`.
pub fn linearization_error(spec: &ReactionSpec, a: f64, n_samples: usize) -> Result<f64> {
    if !(a > 0.0) || a > 1.0 {
        return Err(Error::domain(format!("linearization error needs 0 < a ≤ 1, got {a}")));
    }
    if n_samples < 1000 {
        return Err(Error::domain(format!("need at least 1000 samples, got {n_samples}")));
    }
    let mut sup_f = 0.0_f64;
    let mut sup_g = 0.0_f64;
    let mut visit = |z: f64| {
        sup_f = sup_f.max((spec.f.rate(z) - spec.mu).abs());
        sup_g = sup_g.max((spec.g.rate(z) - spec.sigma).abs());
    };
    let last = (n_samples - 1) as f64;
    for j in 0..n_samples {
        let z = 10f64.powf(SAMPLE_LOG10_MIN * (1.0 - j as f64 / last));
        if z > a {
            break;
        }
        visit(z);
    }
    visit(a);
    Ok(sup_f + sup_g)
}
