//! Closed-form balayage density of the normalized area measure `d²z/π` on
//! the tacnodal region onto its boundary, plus arc masses and the boundary
//! moments that enter the Coulomb-gas gap constant.
//!
//! Each density is a hyperbolic block plus two lattice sums over `k`. The
//! lattice terms are rational in `k`; they are summed directly up to a
//! cutoff beyond all poles and the remainder is taken from the `1/k`
//! expansion against Hurwitz zeta values, which keeps the cost bounded as
//! the poles move out toward the tacnode.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Side, TacnodeGeometry};
use crate::quadrature::integrate_1d;
use crate::special::{digamma_unchecked, trigamma_unchecked, BERNOULLI_EVEN};

pub const DEFAULT_TOL: f64 = 1e-10;

/// Below this distance from the tacnode angle the leading quadratic
/// asymptotics replace the series.
pub const CUSP_SWITCH: f64 = 1e-4;

/// Offset used to approach `θ = π/2` from both sides.
pub const MIDPOINT_OFFSET: f64 = 1e-6;

/// Largest relative difference tolerated between the two one-sided limits
/// at `θ = π/2`.
pub const MIDPOINT_AGREEMENT: f64 = 1e-8;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityValue {
    pub value: f64,
    pub truncation_bound: f64,
    /// The angle was an excluded point (`±π/2` or `3π/2`) and the value is a
    /// one-sided limit.
    pub degenerate: bool,
}

/// The `k`-th coefficients of the two density series at angle `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesTerms {
    pub k: i64,
    pub f_k: Complex64,
    pub g_k: Complex64,
    pub p_k: Complex64,
    pub q_k: Complex64,
    pub alpha_k: Complex64,
    pub beta_k: Complex64,
}

impl SeriesTerms {
    pub fn new(geom: &TacnodeGeometry, theta: f64, k: i64) -> Self {
        let (a, c) = (geom.a(), geom.c());
        let d = c - a;
        let e = Complex64::from_polar(1.0, theta);
        let w = I + e;
        let kf = k as f64;
        let den_f = I * c - w * d * kf;
        let den_g = I * a + w * d * kf;
        Self {
            k,
            f_k: e / (den_f * den_f),
            g_k: -e / (den_g * den_g),
            p_k: a * w / (1.0 + I * kf * w * (1.0 - a / c)),
            q_k: c * w / (1.0 + I * kf * w * (1.0 - c / a)),
            alpha_k: a * c * d * w * w / (2.0 * PI * den_f * den_f),
            beta_k: -a * c * d * w * w / (2.0 * PI * den_g * den_g),
        }
    }

    /// `f_k · i p_k / (p_k − ci)` for `k ≤ 0`, `f_k · i p_k / (p_k − ai)` for
    /// `k ≥ 1`: the summands of the inner-circle series.
    pub fn inner_summand(&self, geom: &TacnodeGeometry) -> Complex64 {
        let shift = if self.k <= 0 { geom.c() } else { geom.a() };
        self.f_k * I * self.p_k / (self.p_k - I * shift)
    }

    /// `g_k · i q_k / (q_k − ai)` for `k ≤ 0`, `g_k · i q_k / (q_k − ci)` for
    /// `k ≥ 1`: the summands of the outer-circle series.
    pub fn outer_summand(&self, geom: &TacnodeGeometry) -> Complex64 {
        let shift = if self.k <= 0 { geom.a() } else { geom.c() };
        self.g_k * I * self.q_k / (self.q_k - I * shift)
    }
}

/// `Σ_{k ≥ K} k^{−s}` by Euler–Maclaurin, for `K` large against `s`.
fn hurwitz_tail(s: f64, big_k: f64) -> f64 {
    let mut total = big_k.powf(1.0 - s) / (s - 1.0) + 0.5 * big_k.powf(-s);
    let mut rising = s; // s (s+1) ... (s+2j−2)
    let mut fact = 2.0; // (2j)!
    let mut kpow = big_k.powf(-s - 1.0);
    for (j, b) in BERNOULLI_EVEN.iter().enumerate().take(6) {
        total += b / fact * rising * kpow;
        let m = 2.0 * j as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        fact *= (m + 3.0) * (m + 4.0);
        kpow /= big_k * big_k;
    }
    total
}

/// `Σ_{k ≥ n0} 1/((k − z1)² (k − z2))` with an upper bound on the part of
/// the `1/k` expansion that was dropped, truncated once that bound is
/// below `target`.
fn rational_sum(n0: i64, z1: Complex64, z2: Complex64, target: f64) -> (Complex64, f64) {
    let m = z1.norm().max(z2.norm());
    let big_k = (n0 as f64).max((4.0 * m).ceil() + 32.0);
    let mut direct = Complex64::new(0.0, 0.0);
    let mut k = big_k as i64 - 1;
    // small terms first
    while k >= n0 {
        let kf = k as f64;
        let (d1, d2) = (kf - z1, kf - z2);
        direct += 1.0 / (d1 * d1 * d2);
        k -= 1;
    }
    // tail: 1/((k − z1)²(k − z2)) = Σ_n P_n k^{−3−n}, P_n = z2 P_{n−1} + (n+1) z1^n
    let mut tail = Complex64::new(0.0, 0.0);
    let mut p = Complex64::new(1.0, 0.0);
    let mut z1_pow = Complex64::new(1.0, 0.0);
    let mut bound = f64::INFINITY;
    for n in 0..80 {
        if n > 0 {
            z1_pow *= z1;
            p = z2 * p + (n as f64 + 1.0) * z1_pow;
        }
        let s = n as f64 + 3.0;
        tail += p * hurwitz_tail(s, big_k);
        // |P_{n+1}| ≤ (n+2)(n+3)/2 · m^{n+1}; the omitted terms shrink at
        // least geometrically with ratio m/K · (n+5)/(n+3) < 1/2.
        let next = (n as f64 + 2.0) * (n as f64 + 3.0) / 2.0 * m.powi(n + 1);
        let zeta_next = big_k.powf(-s - 1.0) * (big_k / (s) + 1.0);
        bound = 2.0 * next * zeta_next;
        if bound < target {
            break;
        }
    }
    (direct + tail, bound)
}

/// `Σ_{k ≤ 0} 1/((k − z1)² (k − z2))`.
fn rational_sum_nonpositive(z1: Complex64, z2: Complex64, target: f64) -> (Complex64, f64) {
    let (s, b) = rational_sum(0, -z1, -z2, target);
    (-s, b)
}

fn hyperbolic_parts(x: f64, angle: f64) -> (f64, f64) {
    // sech form of sin A/(cosh X − cos A) and (cosh X cos A − 1)/(cosh X − cos A)²
    let e = if x.abs() > 700.0 { 0.0 } else { 1.0 / x.cosh() };
    let (sa, ca) = angle.sin_cos();
    let den = 1.0 - ca * e;
    (sa * e / den, (ca - e) * e / (den * den))
}

fn series_inner(geom: &TacnodeGeometry, theta: f64, tol: f64) -> (f64, f64) {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let (s, co) = theta.sin_cos();
    let one_s = 1.0 + s;
    let x = c * PI * co / (d * one_s);
    let (t1, _) = hyperbolic_parts(x, (c - 2.0 * a) * PI / d);
    let (t2, t3) = hyperbolic_parts(x, c * PI / d);
    let block = c / (d * one_s) * (0.5 * c * c * t1 - 0.5 * a * a * t2 + a * a * c * PI / d * t3);

    let e = Complex64::from_polar(1.0, theta);
    let w = I + e;
    let u = w * d;
    let pref = e * w / (u * u * u);
    let k1 = I * c / u;
    let w_neg = a * c.powi(3) / PI * a * I * pref;
    let w_pos = a * a * c * c / PI * c * I * pref;
    let (neg, b_neg) = rational_sum_nonpositive(k1, k1 - a / d, 0.25 * tol / w_neg.norm());
    let (pos, b_pos) = rational_sum(1, k1, k1 - c / d, 0.25 * tol / w_pos.norm());
    let value = block + (w_neg * neg + w_pos * pos).re;
    (value, w_neg.norm() * b_neg + w_pos.norm() * b_pos)
}

fn series_outer(geom: &TacnodeGeometry, theta: f64, tol: f64) -> (f64, f64) {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let (s, co) = theta.sin_cos();
    let one_s = 1.0 + s;
    let y = a * PI * co / (d * one_s);
    let (t1, t3) = hyperbolic_parts(y, a * PI / d);
    let block = a / (d * one_s) * (0.5 * (c * c + a * a) * t1 - a * a * c * PI / d * t3);

    let e = Complex64::from_polar(1.0, theta);
    let w = I + e;
    let u = w * d;
    let pref = e * w / (u * u * u);
    let l1 = -I * a / u;
    let w_neg = a.powi(3) * c / PI * c * I * pref;
    let w_pos = a * a * c * c / PI * a * I * pref;
    let (neg, b_neg) = rational_sum_nonpositive(l1, l1 + c / d, 0.25 * tol / w_neg.norm());
    let (pos, b_pos) = rational_sum(1, l1, l1 + a / d, 0.25 * tol / w_pos.norm());
    let value = block + (w_neg * neg + w_pos * pos).re;
    (value, w_neg.norm() * b_neg + w_pos.norm() * b_pos)
}

fn series(geom: &TacnodeGeometry, side: Side, theta: f64, tol: f64) -> (f64, f64) {
    match side {
        Side::Inner => series_inner(geom, theta, tol),
        Side::Outer => series_outer(geom, theta, tol),
    }
}

/// Coefficient `κ` of the quadratic vanishing `κ t²` of the density at
/// `θ = −π/2 + t`.
pub fn cusp_coefficient(geom: &TacnodeGeometry, side: Side) -> f64 {
    let (a, c) = (geom.a(), geom.c());
    match side {
        Side::Inner => a * a * (c - a) / (4.0 * c * PI),
        Side::Outer => c * c * (c - a) / (4.0 * a * PI),
    }
}

/// Balayage density `dν/dθ` on the given circle.
pub fn density(geom: &TacnodeGeometry, side: Side, theta: f64, tol: f64) -> Result<DensityValue> {
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    if !(-FRAC_PI_2..=1.5 * PI).contains(&theta) {
        return Err(Error::Domain(format!("angle {theta} outside [−π/2, 3π/2]")));
    }
    let t = (theta + FRAC_PI_2).min(1.5 * PI - theta);
    if t <= 0.0 {
        return Ok(DensityValue {
            value: 0.0,
            truncation_bound: 0.0,
            degenerate: true,
        });
    }
    let kappa = cusp_coefficient(geom, side);
    if t < CUSP_SWITCH {
        let (at_switch, _) = series(geom, side, -FRAC_PI_2 + CUSP_SWITCH, tol);
        let correction = (at_switch - kappa * CUSP_SWITCH * CUSP_SWITCH).abs();
        return Ok(DensityValue {
            value: kappa * t * t,
            truncation_bound: correction * (t / CUSP_SWITCH).powi(3),
            degenerate: false,
        });
    }
    if (theta - FRAC_PI_2).abs() < 1e-12 {
        let (below, b1) = series(geom, side, FRAC_PI_2 - MIDPOINT_OFFSET, tol);
        let (above, b2) = series(geom, side, FRAC_PI_2 + MIDPOINT_OFFSET, tol);
        let scale = below.abs().max(above.abs()).max(f64::MIN_POSITIVE);
        if (below - above).abs() / scale > MIDPOINT_AGREEMENT {
            return Err(Error::Singular(format!(
                "one-sided limits at θ = π/2 disagree: {below} vs {above}"
            )));
        }
        return Ok(DensityValue {
            value: 0.5 * (below + above),
            truncation_bound: b1.max(b2),
            degenerate: true,
        });
    }
    let (value, truncation_bound) = series(geom, side, theta, tol);
    Ok(DensityValue {
        value,
        truncation_bound,
        degenerate: false,
    })
}

pub fn density_inner(geom: &TacnodeGeometry, theta: f64, tol: f64) -> Result<DensityValue> {
    density(geom, Side::Inner, theta, tol)
}

pub fn density_outer(geom: &TacnodeGeometry, theta: f64, tol: f64) -> Result<DensityValue> {
    density(geom, Side::Outer, theta, tol)
}

/// Constant `K'` with `|summand_k| ≤ K'/k²` for every `k ≠ 0` of the inner
/// series at `θ ≠ π/2`, including the prefactors `ac³/π` and `a²c²/π`.
pub fn inner_term_bound_constant(geom: &TacnodeGeometry, theta: f64) -> f64 {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let e = Complex64::from_polar(1.0, theta);
    let w = I + e;
    let u = w * d;
    let k1 = I * c / u;
    let im = k1.im.abs();
    let lambda = |z: Complex64| im / (im + z.norm());
    let base = (w / (u * u * u)).norm();
    let neg = a * c.powi(3) / PI * a * base / (lambda(k1).powi(2) * lambda(k1 - a / d));
    let pos = a * a * c * c / PI * c * base / (lambda(k1).powi(2) * lambda(k1 - c / d));
    neg.max(pos)
}

/// Density values on a grid of angles, evaluated in parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryDensityProfile {
    pub side: Side,
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub truncation_bound: Vec<f64>,
    /// Endpoint or one-sided-limit evaluations.
    pub degenerate: Vec<bool>,
}

impl BoundaryDensityProfile {
    pub fn compute(geom: &TacnodeGeometry, side: Side, thetas: &[f64], tol: f64) -> Result<Self> {
        let evals: Vec<DensityValue> = thetas
            .par_iter()
            .map(|&t| density(geom, side, t, tol))
            .collect::<Result<_>>()?;
        Ok(Self {
            side,
            thetas: thetas.to_vec(),
            values: evals.iter().map(|v| v.value).collect(),
            truncation_bound: evals.iter().map(|v| v.truncation_bound).collect(),
            degenerate: evals.iter().map(|v| v.degenerate).collect(),
        })
    }

    /// `n` equally spaced interior angles of `(−π/2, 3π/2)`.
    pub fn uniform_grid(n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| -FRAC_PI_2 + 2.0 * PI * (j as f64 + 0.5) / n as f64)
            .collect()
    }

    pub fn write_csv<W: Write>(profiles: &[BoundaryDensityProfile], out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["side", "theta", "density", "truncation_bound", "degenerate"])?;
        for p in profiles {
            for j in 0..p.thetas.len() {
                wr.write_record([
                    p.side.as_str().to_string(),
                    p.thetas[j].to_string(),
                    p.values[j].to_string(),
                    p.truncation_bound[j].to_string(),
                    p.degenerate[j].to_string(),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// `ν(∂Ω ∩ B_r(0))` for `0 < r ≤ 2c`.
pub fn arc_mass(geom: &TacnodeGeometry, r: f64, tol: f64) -> Result<f64> {
    if !(r > 0.0 && r <= 2.0 * geom.c()) {
        return Err(Error::Domain(format!(
            "arc mass needs 0 < r <= 2c, got {r}"
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut half = 0.0;
    for side in [Side::Inner, Side::Outer] {
        let upper = geom.exit_angle(side, r);
        if upper <= -FRAC_PI_2 {
            continue;
        }
        let mut failure = None;
        let q = integrate_1d(
            |t| match density(geom, side, t, tol * 1e-2) {
                Ok(v) => v.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            },
            -FRAC_PI_2,
            upper,
            0.25 * tol,
        )?;
        if let Some(e) = failure {
            return Err(e);
        }
        half += q.value;
    }
    Ok(2.0 * half)
}

/// The two weighted sums `∫(1 + sin θ) dν` over the inner and outer circle,
/// in closed form.
pub fn weighted_boundary_sums(geom: &TacnodeGeometry) -> (f64, f64) {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let (x, y) = (a / d, c / d);
    let tx = trigamma_unchecked(x + 1.0);
    let ty = trigamma_unchecked(y + 1.0);
    let dpsi = digamma_unchecked(y + 1.0) - digamma_unchecked(x + 1.0);
    let inner = a * c.powi(3) / (d * d) * tx - a * a * c * c / (d * d) * ty + c.powi(3) / d * dpsi
        - 2.0 * a * a
        - c * c;
    let outer =
        -a * a * c * c / (d * d) * tx + a.powi(3) * c / (d * d) * ty + a.powi(3) / d * dpsi + c * c;
    (inner, outer)
}

/// `∫_{∂Ω} |z|² dν` in closed digamma form.
pub fn moment_q_nu(geom: &TacnodeGeometry) -> f64 {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let (x, y) = (a / d, c / d);
    let dpsi = digamma_unchecked(y + 1.0) - digamma_unchecked(x + 1.0);
    -2.0 * a * a * c.powi(3) / d * trigamma_unchecked(x)
        + 2.0 * a.powi(3) * c * c / d * trigamma_unchecked(y)
        + 2.0 * a * a * c * c * (c + a) / d * dpsi
        - 2.0 * (a.powi(4) + a.powi(3) * c + a * a * c * c + a * c.powi(3) - 2.0 * c.powi(4))
}

/// The same moment from the raw lattice sums `Σ_{k≥1} 1/(k+x)²` and
/// `Σ_{k≥1} (1/(k+x) − 1/(k+y))`, summed directly with an Euler–Maclaurin
/// remainder.
pub fn moment_q_nu_raw(geom: &TacnodeGeometry) -> f64 {
    let (a, c) = (geom.a(), geom.c());
    let d = c - a;
    let (x, y) = (a / d, c / d);
    const N: usize = 10_000;
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sdiff = 0.0;
    for k in (1..N).rev() {
        let k = k as f64;
        sx += 1.0 / ((k + x) * (k + x));
        sy += 1.0 / ((k + y) * (k + y));
        sdiff += 1.0 / (k + x) - 1.0 / (k + y);
    }
    let n = N as f64;
    let square_tail = |z: f64| {
        let m = n + z;
        1.0 / m + 0.5 / (m * m) + 1.0 / (6.0 * m.powi(3)) - 1.0 / (30.0 * m.powi(5))
    };
    sx += square_tail(x);
    sy += square_tail(y);
    let (mx, my) = (n + x, n + y);
    sdiff +=
        (my / mx).ln() + 0.5 * (1.0 / mx - 1.0 / my) + (1.0 / (mx * mx) - 1.0 / (my * my)) / 12.0
            - (1.0 / mx.powi(4) - 1.0 / my.powi(4)) / 120.0;
    -2.0 * a * a * c.powi(3) / d * sx
        + 2.0 * a.powi(3) * c * c / d * sy
        + 2.0 * a * a * c * c * (c + a) / d * sdiff
        + 2.0 * c.powi(4)
        - 4.0 * a.powi(4)
        - 2.0 * a * a * c * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoundaryPoint;
    use crate::quadrature::density_via_green;
    use crate::special::hole_rate_f;

    fn geom() -> TacnodeGeometry {
        TacnodeGeometry::new(0.45, 1.2).unwrap()
    }

    #[test]
    fn hurwitz_tail_matches_direct_sum() {
        for s in [3.0, 5.0, 12.0] {
            let direct: f64 = (40..2_000_000).rev().map(|k| (k as f64).powf(-s)).sum();
            let rest = hurwitz_tail(s, 2_000_000.0);
            assert!(
                ((direct + rest) - hurwitz_tail(s, 40.0)).abs()
                    < 1e-15 * hurwitz_tail(s, 40.0) + 1e-18
            );
        }
    }

    #[test]
    fn rational_sum_matches_brute_force() {
        let z1 = Complex64::new(2.3, 0.7);
        let z2 = Complex64::new(-1.1, 0.7);
        let (fast, bound) = rational_sum(1, z1, z2, 1e-16);
        let mut brute = Complex64::new(0.0, 0.0);
        for k in (1..4_000_000i64).rev() {
            let kf = k as f64;
            brute += 1.0 / ((kf - z1) * (kf - z1) * (kf - z2));
        }
        // remaining brute tail ≈ 1/(2 K²)
        brute += 1.0 / (2.0 * 4.0e6f64.powi(2));
        assert!((fast - brute).norm() < 1e-13, "{fast} vs {brute}");
        assert!(bound < 1e-16);
    }

    #[test]
    fn partial_fractions_match_raw_summands() {
        let g = geom();
        let (a, c) = (g.a(), g.c());
        let d = c - a;
        for theta in [-1.0, 0.3, 2.0, 4.2] {
            let e = Complex64::from_polar(1.0, theta);
            let w = I + e;
            let u = w * d;
            let pref = e * w / (u * u * u);
            let (k1, l1) = (I * c / u, -I * a / u);
            for k in [-7i64, -1, 0, 1, 2, 9] {
                let t = SeriesTerms::new(&g, theta, k);
                let kf = k as f64;
                let (inner, outer) = if k <= 0 {
                    (
                        I * a * pref / ((kf - k1) * (kf - k1) * (kf - k1 + a / d)),
                        I * c * pref / ((kf - l1) * (kf - l1) * (kf - l1 - c / d)),
                    )
                } else {
                    (
                        I * c * pref / ((kf - k1) * (kf - k1) * (kf - k1 + c / d)),
                        I * a * pref / ((kf - l1) * (kf - l1) * (kf - l1 - a / d)),
                    )
                };
                assert!((t.inner_summand(&g) - inner).norm() < 1e-12 * inner.norm().max(1e-3));
                assert!((t.outer_summand(&g) - outer).norm() < 1e-12 * outer.norm().max(1e-3));
            }
        }
    }

    /// Straight truncated sums of the raw summands, as an independent path.
    fn brute_density(g: &TacnodeGeometry, side: Side, theta: f64, big_k: i64) -> f64 {
        let (a, c) = (g.a(), g.c());
        let (s, _) = theta.sin_cos();
        let series: Complex64 = (-big_k..=big_k)
            .rev()
            .map(|k| {
                let t = SeriesTerms::new(g, theta, k);
                let wt = match (side, k <= 0) {
                    (Side::Inner, true) => a * c.powi(3) / PI,
                    (Side::Inner, false) => a * a * c * c / PI,
                    (Side::Outer, true) => a.powi(3) * c / PI,
                    (Side::Outer, false) => a * a * c * c / PI,
                };
                wt * match side {
                    Side::Inner => t.inner_summand(g),
                    Side::Outer => t.outer_summand(g),
                }
            })
            .sum();
        let d = c - a;
        let one_s = 1.0 + s;
        let block = match side {
            Side::Inner => {
                let x = c * PI * theta.cos() / (d * one_s);
                let ch = x.cosh();
                let (a1, a2) = ((c - 2.0 * a) * PI / d, c * PI / d);
                c / (d * one_s)
                    * (0.5 * c * c * a1.sin() / (ch - a1.cos())
                        - 0.5 * a * a * a2.sin() / (ch - a2.cos())
                        + a * a * c * PI / d * (ch * a2.cos() - 1.0) / (ch - a2.cos()).powi(2))
            }
            Side::Outer => {
                let y = a * PI * theta.cos() / (d * one_s);
                let ch = y.cosh();
                let b = a * PI / d;
                a / (d * one_s)
                    * (0.5 * (c * c + a * a) * b.sin() / (ch - b.cos())
                        - a * a * c * PI / d * (ch * b.cos() - 1.0) / (ch - b.cos()).powi(2))
            }
        };
        block + series.re
    }

    #[test]
    fn series_matches_brute_truncation() {
        let g = geom();
        for side in [Side::Inner, Side::Outer] {
            for theta in [-0.9, 0.0, 1.0, 2.5, 4.0] {
                let fast = density(&g, side, theta, 1e-12).unwrap().value;
                // truncation error of the brute sum is O(1/K)
                let brute = brute_density(&g, side, theta, 2_000_000);
                assert!(
                    (fast - brute).abs() < 1e-6,
                    "{side:?} {theta}: {fast} vs {brute}"
                );
            }
        }
    }

    #[test]
    fn green_oracle_agreement() {
        let g = geom();
        for (side, theta) in [
            (Side::Inner, 0.0),
            (Side::Outer, PI),
            (Side::Inner, 3.5),
            (Side::Outer, -0.6),
        ] {
            let series = density(&g, side, theta, 1e-12).unwrap().value;
            let oracle = density_via_green(&g, BoundaryPoint { side, theta }, 1e-4, 1e-9).unwrap();
            assert!(!oracle.flagged);
            assert!(
                (series - oracle.value).abs() <= 1e-6 * oracle.value.abs(),
                "{side:?} {theta}: {series} vs {oracle:?}"
            );
        }
    }

    #[test]
    fn cusp_ratio() {
        let g = geom();
        let t = 1e-3;
        for side in [Side::Inner, Side::Outer] {
            let v = density(&g, side, -FRAC_PI_2 + t, 1e-12).unwrap().value;
            let ratio = v / (cusp_coefficient(&g, side) * t * t);
            assert!((0.98..=1.02).contains(&ratio), "{side:?}: {ratio}");
        }
    }

    #[test]
    fn cusp_switch_is_close_to_continuous() {
        let g = geom();
        for side in [Side::Inner, Side::Outer] {
            let below = density(&g, side, -FRAC_PI_2 + CUSP_SWITCH * 0.999_999, 1e-12).unwrap();
            let above = density(&g, side, -FRAC_PI_2 + CUSP_SWITCH * 1.000_001, 1e-12).unwrap();
            let jump = (below.value - above.value).abs();
            assert!(
                jump <= 1e-12 && jump <= 1e-4 * above.value,
                "{below:?} {above:?}"
            );
        }
    }

    #[test]
    fn mirror_symmetry() {
        let g = geom();
        for side in [Side::Inner, Side::Outer] {
            for j in 1..40 {
                let t = j as f64 * 0.078;
                let l = density(&g, side, -FRAC_PI_2 + t, 1e-10).unwrap().value;
                let r = density(&g, side, 1.5 * PI - t, 1e-10).unwrap().value;
                assert!((l - r).abs() <= 1e-10, "{side:?} t = {t}");
            }
        }
    }

    #[test]
    fn midpoint_is_one_sided_average() {
        let g = geom();
        for side in [Side::Inner, Side::Outer] {
            let mid = density(&g, side, FRAC_PI_2, 1e-12).unwrap();
            assert!(mid.degenerate);
            let near = density(&g, side, FRAC_PI_2 + 1e-3, 1e-12).unwrap();
            assert!((mid.value - near.value).abs() < 1e-5);
        }
        assert!(
            density(&g, Side::Inner, -FRAC_PI_2, 1e-10)
                .unwrap()
                .degenerate
        );
        assert!(density(&g, Side::Inner, 5.0, 1e-10).is_err());
        assert!(density(&g, Side::Inner, 0.0, 0.0).is_err());
    }

    #[test]
    fn prototype_values() {
        let g = geom();
        let inner = density_inner(&g, 1.0, 1e-12).unwrap();
        let outer = density_outer(&g, 3.0, 1e-12).unwrap();
        assert!((inner.value - 0.11175196550150746).abs() < 1e-10);
        assert!((outer.value - 0.1813908446630043).abs() < 1e-10);
        assert!(inner.truncation_bound < 1e-12);
    }

    #[test]
    fn term_bound_holds() {
        let g = geom();
        for theta in [-1.4, -0.5, 0.7, 2.2, 4.5] {
            let kp = inner_term_bound_constant(&g, theta);
            for k in (1..=100_000i64).step_by(97).chain([-1, -2, -50, -100_000]) {
                let t = SeriesTerms::new(&g, theta, k);
                let (a, c) = (g.a(), g.c());
                let wt = if k <= 0 {
                    a * c.powi(3) / PI
                } else {
                    a * a * c * c / PI
                };
                let term = wt * t.inner_summand(&g).norm();
                assert!(
                    term <= kp / (k * k) as f64 * (1.0 + 1e-12),
                    "θ {theta} k {k}"
                );
            }
        }
    }

    #[test]
    fn poles_outside_region() {
        let g = geom();
        for theta in [-1.3, -0.2, 0.9, 2.4, 4.1] {
            let p0 = SeriesTerms::new(&g, theta, 0).p_k;
            assert!(((p0 - g.inner_center()).norm() - g.a()).abs() < 1e-12);
            for k in -30..=30 {
                let t = SeriesTerms::new(&g, theta, k);
                let outside = |z: Complex64| {
                    (z - g.inner_center()).norm() <= g.a() * (1.0 + 1e-12)
                        || (z - g.outer_center()).norm() >= g.c() * (1.0 - 1e-12)
                };
                assert!(outside(t.p_k) && outside(t.q_k), "θ {theta} k {k}");
            }
        }
    }

    #[test]
    fn mass_is_conserved() {
        for (a, c) in [(0.45, 1.2), (0.75, 1.2), (0.3, 0.55)] {
            let g = TacnodeGeometry::new(a, c).unwrap();
            let m = arc_mass(&g, 2.0 * c, 1e-10).unwrap();
            assert!((m - (c * c - a * a)).abs() <= 1e-8, "{a} {c}: {m}");
        }
    }

    #[test]
    fn small_arc_mass_rate() {
        let g = geom();
        let (a, c) = (g.a(), g.c());
        let r = 1e-2;
        let m = arc_mass(&g, r, 1e-14).unwrap();
        let ratio = m * 3.0 * PI * a * c / ((c - a) * r.powi(3));
        assert!((0.99..=1.01).contains(&ratio), "{ratio}");
        assert!(arc_mass(&g, 0.0, 1e-10).is_err());
        assert!(arc_mass(&g, 2.5, 1e-10).is_err());
    }

    #[test]
    fn weighted_sums_match_quadrature() {
        let g = geom();
        let (ci, co) = weighted_boundary_sums(&g);
        for (side, closed) in [(Side::Inner, ci), (Side::Outer, co)] {
            let q = integrate_1d(
                |t| (1.0 + t.sin()) * density(&g, side, t, 1e-13).unwrap().value,
                -FRAC_PI_2,
                FRAC_PI_2,
                1e-11,
            )
            .unwrap();
            assert!(
                (2.0 * q.value - closed).abs() < 1e-8,
                "{side:?}: {} vs {closed}",
                2.0 * q.value
            );
        }
    }

    #[test]
    fn moment_forms_agree() {
        for (a, c) in [(0.45, 1.2), (0.75, 1.2), (0.3, 0.55), (0.1, 1.0)] {
            let g = TacnodeGeometry::new(a, c).unwrap();
            let closed = moment_q_nu(&g);
            assert!((closed - moment_q_nu_raw(&g)).abs() < 1e-10);
            let (si, so) = weighted_boundary_sums(&g);
            assert!((2.0 * a * a * si + 2.0 * c * c * so - closed).abs() < 1e-10);
            let lhs = 0.25 * (closed - 1.5 * (c.powi(4) - a.powi(4)));
            let rhs = c.powi(4) / 8.0 * hole_rate_f(a / c).unwrap();
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn moment_small_hole_limit() {
        let g = TacnodeGeometry::new(1e-7, 1.0).unwrap();
        assert!((moment_q_nu(&g) - 2.0).abs() < 1e-5);
    }

    #[test]
    fn weighted_sums_continuous_at_integer_ratio() {
        // c/(c − a) = 3 at c = 1.5a
        let a = 0.4;
        let c_of = |ratio: f64| a * ratio / (ratio - 1.0);
        let lo = weighted_boundary_sums(&TacnodeGeometry::new(a, c_of(3.0 - 1e-6)).unwrap());
        let hi = weighted_boundary_sums(&TacnodeGeometry::new(a, c_of(3.0 + 1e-6)).unwrap());
        assert!((lo.0 - hi.0).abs() <= 1e-4 && (lo.1 - hi.1).abs() <= 1e-4);
    }

    #[test]
    fn profile_csv() {
        let g = geom();
        let grid = BoundaryDensityProfile::uniform_grid(8);
        let p = BoundaryDensityProfile::compute(&g, Side::Outer, &grid, 1e-10).unwrap();
        let mut buf = Vec::new();
        BoundaryDensityProfile::write_csv(&[p], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("side,theta,density,truncation_bound,degenerate\nouter,"));
        assert_eq!(text.lines().count(), 9);
    }
}
