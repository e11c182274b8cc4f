//! Digamma-family special functions, the hole-rate function `F` and the
//! Coulomb-gas gap constant.
//!
//! `digamma` and `trigamma` shift the argument upward with the functional
//! recurrences until it is at least [`ASYMPTOTIC_THRESHOLD`], then apply the
//! Stirling-type asymptotic series with Bernoulli coefficients through
//! `B_14`.

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const ASYMPTOTIC_THRESHOLD: f64 = 8.0;

/// `B_{2k}` for k = 1..=7.
pub(crate) const BERNOULLI_EVEN: [f64; 7] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
];

/// Below this distance from `x = 1` the hole-rate function is evaluated by
/// its cubic expansion.
const F_CUBIC_SWITCH: f64 = 1e-6;

fn check_positive(name: &'static str, y: f64) -> Result<()> {
    if y > 0.0 && y.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "{name} requires a positive finite argument, got {y}"
        )))
    }
}

/// Digamma `ψ(y) = Γ'(y)/Γ(y)` for `y > 0`.
pub fn digamma(y: f64) -> Result<f64> {
    check_positive("digamma", y)?;
    Ok(digamma_unchecked(y))
}

pub(crate) fn digamma_unchecked(mut y: f64) -> f64 {
    let mut shift = 0.0;
    while y < ASYMPTOTIC_THRESHOLD {
        shift -= 1.0 / y;
        y += 1.0;
    }
    let inv2 = 1.0 / (y * y);
    // Σ B_{2k} / (2k y^{2k}), Horner in 1/y².
    let mut series = 0.0;
    for (k, b) in BERNOULLI_EVEN.iter().enumerate().rev() {
        series = series * inv2 + b / (2.0 * (k as f64 + 1.0));
    }
    series *= inv2;
    shift + y.ln() - 0.5 / y - series
}

/// Trigamma `ψ'(y)` for `y > 0`.
pub fn trigamma(y: f64) -> Result<f64> {
    check_positive("trigamma", y)?;
    Ok(trigamma_unchecked(y))
}

pub(crate) fn trigamma_unchecked(mut y: f64) -> f64 {
    let mut shift = 0.0;
    while y < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / (y * y);
        y += 1.0;
    }
    let inv = 1.0 / y;
    let inv2 = inv * inv;
    // ψ'(y) ~ 1/y + 1/(2y²) + Σ B_{2k} / y^{2k+1}
    let mut series = 0.0;
    for b in BERNOULLI_EVEN.iter().rev() {
        series = series * inv2 + b;
    }
    series *= inv2 * inv;
    shift + inv + 0.5 * inv2 + series
}

/// Tetragamma `ψ''(y)` by a central difference of [`trigamma`].
///
/// Only accurate to roughly `1e-6` relative; it is used for inequality
/// checks with slack.
pub fn tetragamma_fd(y: f64) -> Result<f64> {
    check_positive("tetragamma_fd", y)?;
    let h = y * 1e-5;
    if y - h <= 0.0 {
        return Err(Error::Domain(format!(
            "tetragamma_fd step leaves the domain at y = {y}"
        )));
    }
    Ok((trigamma_unchecked(y + h) - trigamma_unchecked(y - h)) / (2.0 * h))
}

fn check_unit_interval(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "hole-rate argument must lie in [0, 1], got {x}"
        )))
    }
}

/// Hole-rate function `F(x) = 1 − x⁴ − 4x² ψ'(1/(1−x))`, continuously
/// extended to `[0, 1]`.
pub fn hole_rate_f(x: f64) -> Result<f64> {
    check_unit_interval(x)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    let u = 1.0 - x;
    if u == 0.0 {
        return Ok(0.0);
    }
    if u < F_CUBIC_SWITCH {
        return Ok(10.0 / 3.0 * u * u * u);
    }
    // 1 − x⁴ factored to keep the cancellation against 4x²ψ' benign near 1.
    let one_minus_x4 = u * (1.0 + x) * (1.0 + x * x);
    Ok(one_minus_x4 - 4.0 * x * x * trigamma_unchecked(1.0 / u))
}

/// The unsimplified digamma/trigamma form of `F` on the open interval
/// `(0, 1)`, kept as an independent cross-check of [`hole_rate_f`].
pub fn hole_rate_f_expanded(x: f64) -> Result<f64> {
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "expanded hole-rate form needs x in (0, 1), got {x}"
        )));
    }
    let u = 1.0 - x;
    let y = 1.0 / u;
    let x2 = x * x;
    let poly = 5.0 - 4.0 * x - 4.0 * x2 - 4.0 * x2 * x - x2 * x2;
    let t1 = -4.0 * x2 / u * trigamma_unchecked(y - 1.0);
    let t2 = 4.0 * x2 * x / u * trigamma_unchecked(y);
    let t3 = 4.0 * x2 * (1.0 + x) / u * (digamma_unchecked(y + 1.0) - digamma_unchecked(y));
    Ok(poly + t1 + t2 + t3)
}

/// Parameters of the elliptic Ginibre hole problem that do not depend on the
/// inner radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleRateInput {
    pub beta: f64,
    pub tau: f64,
    pub c_radius: f64,
}

impl HoleRateInput {
    pub fn new(beta: f64, tau: f64, c_radius: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::Domain(format!("beta must be positive, got {beta}")));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::Domain(format!("tau must lie in [0, 1), got {tau}")));
        }
        if !(c_radius > 0.0 && c_radius.is_finite()) {
            return Err(Error::Domain(format!(
                "outer radius must be positive, got {c_radius}"
            )));
        }
        Ok(Self {
            beta,
            tau,
            c_radius,
        })
    }

    /// Radius ratio `a/c` for a given inner radius.
    pub fn ratio(&self, a_radius: f64) -> f64 {
        a_radius / self.c_radius
    }
}

/// Leading-order constant `C` in `P(no points in hole) = exp(−C n² + o(n²))`.
pub fn gap_constant_c(input: &HoleRateInput, a_radius: f64) -> Result<f64> {
    if !(a_radius > 0.0 && a_radius < input.c_radius) {
        return Err(Error::Domain(format!(
            "inner radius must satisfy 0 < a < c = {}, got {a_radius}",
            input.c_radius
        )));
    }
    let c4 = input.c_radius.powi(4);
    let squeeze = (1.0 - input.tau * input.tau).powi(2);
    Ok(input.beta * c4 / (8.0 * squeeze) * hole_rate_f(input.ratio(a_radius))?)
}
