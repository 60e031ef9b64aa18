//! Beta distributions over risk levels: CDF, inverse CDF, inverse-transform
//! sampling with common random numbers, and finite-difference sensitivities
//! of the inverse CDF to the shape parameters.

use rand::Rng;
use rand_distr::Open01;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskLevel;

pub const SHAPE_MIN: f64 = 0.05;
pub const SHAPE_MAX: f64 = 50.0;

/// Step used by the one-sided inverse-CDF sensitivities.
pub const ICDF_FD_STEP: f64 = 1e-6;

const ICDF_MAX_ITER: usize = 200;
const CF_MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

/// Shape parameters, clamped to `[SHAPE_MIN, SHAPE_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawShapes")]
pub struct BetaParams {
    alpha: f64,
    beta: f64,
}

impl BetaParams {
    pub const UNIFORM: BetaParams = BetaParams { alpha: 1.0, beta: 1.0 };

    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::Domain(format!("Beta shapes must be finite, got ({alpha}, {beta})")));
        }
        Ok(BetaParams {
            alpha: alpha.clamp(SHAPE_MIN, SHAPE_MAX),
            beta: beta.clamp(SHAPE_MIN, SHAPE_MAX),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Deserialize)]
struct RawShapes {
    alpha: f64,
    beta: f64,
}

impl TryFrom<RawShapes> for BetaParams {
    type Error = Error;

    fn try_from(raw: RawShapes) -> Result<Self> {
        BetaParams::new(raw.alpha, raw.beta)
    }
}

impl Default for BetaParams {
    fn default() -> Self {
        BetaParams::UNIFORM
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b)
}

/// Continued fraction for the regularised incomplete beta (modified Lentz).
fn incomplete_beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let guard = |v: f64| if v.abs() < TINY { TINY } else { v };
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 / guard(1.0 - qab * x / qap);
    let mut h = d;
    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 / guard(1.0 + aa * d);
        c = guard(1.0 + aa / c);
        let step = d * c;
        h *= step;
        if (step - 1.0).abs() <= f64::EPSILON {
            break;
        }
    }
    h
}

fn cdf_raw(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(a, b);
    let value = if x < (a + 1.0) / (a + b + 2.0) {
        ln_front.exp() * incomplete_beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * incomplete_beta_cf(b, a, 1.0 - x) / b
    };
    value.clamp(0.0, 1.0)
}

fn ln_pdf_raw(a: f64, b: f64, x: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta(a, b)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} outside [0, 1]")))
    }
}

/// Regularised incomplete beta function `I_x(α, β)`.
pub fn beta_cdf(params: BetaParams, x: f64) -> Result<f64> {
    check_unit("x", x)?;
    Ok(cdf_raw(params.alpha, params.beta, x))
}

/// Safeguarded Newton iteration on the CDF inside a shrinking bracket.
/// Converges to within a few ulps of the true quantile.
fn icdf_raw(a: f64, b: f64, u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    if u >= 1.0 {
        return 1.0;
    }
    if a == 1.0 && b == 1.0 {
        return u;
    }
    let ln_b = ln_beta(a, b);
    // small-x asymptote F(x) ≈ x^a / (a B(a, b))
    let low_guess = ((u.ln() + a.ln() + ln_b) / a).exp();
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut x = a / (a + b);
    let mut previous = f64::NAN;
    // the endpoints are exact, and win when u falls in the CDF jump next to them
    let mut best = if u < 0.5 { (u, 0.0) } else { (1.0 - u, 1.0) };
    for _ in 0..ICDF_MAX_ITER {
        let f = cdf_raw(a, b, x) - u;
        if f.abs() < best.0 {
            best = (f.abs(), x);
        }
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if lo.next_up() >= hi {
            break;
        }
        let pdf = ln_pdf_raw(a, b, x).exp();
        let newton = x - f / pdf;
        let next = if pdf.is_finite() && pdf > 0.0 && newton > lo && newton < hi {
            newton
        } else if lo == 0.0 {
            if low_guess > 0.0 && low_guess < hi && low_guess != x {
                low_guess
            } else {
                0.5 * hi
            }
        } else if hi / lo > 1e3 {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        // Newton bouncing between two neighbours has converged
        if next == x || next == previous {
            break;
        }
        previous = x;
        x = next;
    }
    best.1
}

/// Quantile function: the risk level `λ` with `F(λ) = u`.
pub fn beta_icdf(params: BetaParams, u: f64) -> Result<RiskLevel> {
    check_unit("u", u)?;
    RiskLevel::new(icdf_raw(params.alpha, params.beta, u))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FdScheme {
    /// `(F⁻¹(θ + δ) − F⁻¹(θ)) / δ`
    #[default]
    OneSided,
    /// `(F⁻¹(θ + δ) − F⁻¹(θ − δ)) / 2δ`
    Central,
}

/// `(∂λ/∂α, ∂λ/∂β)` at quantile level `u` by one-sided differences with
/// step [`ICDF_FD_STEP`].
pub fn icdf_fd_grad(params: BetaParams, u: f64) -> Result<(f64, f64)> {
    icdf_fd_grad_with(params, u, FdScheme::OneSided, ICDF_FD_STEP)
}

/// Finite-difference sensitivities with an explicit scheme and step. The
/// perturbed shapes are not clamped, so the result stays informative at the
/// bounds.
pub fn icdf_fd_grad_with(params: BetaParams, u: f64, scheme: FdScheme, delta: f64) -> Result<(f64, f64)> {
    check_unit("u", u)?;
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::Domain(format!("finite-difference step {delta} must be positive")));
    }
    if u == 0.0 || u == 1.0 {
        return Ok((0.0, 0.0));
    }
    let (a, b) = (params.alpha, params.beta);
    let (da, db) = match scheme {
        FdScheme::OneSided => {
            let base = icdf_raw(a, b, u);
            (
                (icdf_raw(a + delta, b, u) - base) / delta,
                (icdf_raw(a, b + delta, u) - base) / delta,
            )
        }
        FdScheme::Central => (
            (icdf_raw(a + delta, b, u) - icdf_raw(a - delta, b, u)) / (2.0 * delta),
            (icdf_raw(a, b + delta, u) - icdf_raw(a, b - delta, u)) / (2.0 * delta),
        ),
    };
    if !da.is_finite() || !db.is_finite() {
        return Err(Error::Numeric { layer: 0, message: "non-finite quantile sensitivity".into() });
    }
    Ok((da, db))
}

/// Maps fixed uniforms through the quantile function; holding `uniforms`
/// fixed while changing `params` moves every sample smoothly.
pub fn sample_crn(params: BetaParams, uniforms: &[f64]) -> Result<Vec<RiskLevel>> {
    uniforms.iter().map(|&u| beta_icdf(params, u)).collect()
}

/// `count` uniforms on the open interval (0, 1).
pub fn draw_uniforms<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    (0..count).map(|_| rng.sample(Open01)).collect()
}
