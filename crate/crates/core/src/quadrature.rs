//! Brute-force integration used as ground truth for the closed forms.
//!
//! [`integrate_1d`] is a globally adaptive 15-point Gauss–Kronrod scheme
//! that always bisects the panel with the largest error estimate. Two
//! dimensional integrals over the tacnodal region are done by nesting it in
//! the polar coordinates `ai + r e^{iθ}`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{green_strip, BoundaryPoint, Side, TacnodeGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    /// False when the subdivision budget ran out before reaching `tol`.
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl QuadOptions {
    pub fn absolute(tol: f64) -> Self {
        Self {
            abs_tol: tol,
            rel_tol: 0.0,
            max_subdivisions: 4000,
        }
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    /// Rounding floor of the error estimate.
    floor: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gauss_kronrod<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Panel {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut abs_sum = kronrod.abs();
    let mut fv = [0.0; 15];
    fv[7] = fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let (f1, f2) = (f(center - dx), f(center + dx));
        fv[j] = f1;
        fv[14 - j] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = kronrod * 0.5;
    let mut asc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        asc += WGK[j] * ((fv[j] - mean).abs() + (fv[14 - j] - mean).abs());
    }
    let value = kronrod * half;
    let resasc = asc * half.abs();
    let resabs = abs_sum * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let floor = 50.0 * f64::EPSILON * resabs;
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(floor);
    }
    Panel {
        lo,
        hi,
        value,
        error,
        floor,
    }
}

/// Adaptive integral of `f` over `[lo, hi]` to absolute tolerance `tol`.
pub fn integrate_1d<F: FnMut(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<QuadratureResult> {
    integrate_1d_with(f, lo, hi, QuadOptions::absolute(tol))
}

pub fn integrate_1d_with<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    opts: QuadOptions,
) -> Result<QuadratureResult> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Domain(format!(
            "integration needs finite lo < hi, got [{lo}, {hi}]"
        )));
    }
    if !(opts.abs_tol > 0.0 || opts.rel_tol > 0.0) {
        return Err(Error::Domain(
            "integration tolerance must be positive".into(),
        ));
    }
    let first = gauss_kronrod(&mut f, lo, hi);
    let mut evaluations = 15;
    let mut value = first.value;
    let mut error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    let target = |v: f64| opts.abs_tol.max(opts.rel_tol * v.abs());
    // error estimates at the rounding floor cannot shrink further
    let settled = |heap: &BinaryHeap<Panel>, error: f64| {
        error <= 2.0 * heap.iter().map(|p| p.floor).sum::<f64>()
    };
    let mut converged = error <= target(value);
    let mut subdivisions = 0;
    while !converged && subdivisions < opts.max_subdivisions {
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            // interval no longer splittable in floating point
            heap.push(worst);
            break;
        }
        let left = gauss_kronrod(&mut f, worst.lo, mid);
        let right = gauss_kronrod(&mut f, mid, worst.hi);
        evaluations += 30;
        subdivisions += 1;
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
        if subdivisions % 64 == 0 {
            // re-sum to limit drift from incremental updates
            value = heap.iter().map(|p| p.value).sum();
            error = heap.iter().map(|p| p.error).sum();
            if settled(&heap, error) {
                break;
            }
        }
        converged = error <= target(value);
    }
    value = heap.iter().map(|p| p.value).sum();
    error = heap.iter().map(|p| p.error).sum();
    Ok(QuadratureResult {
        value,
        error_estimate: error,
        evaluations,
        converged: converged || error <= target(value) || settled(&heap, error),
    })
}

/// Integrates over `(lo, hi)` split into panels that shrink geometrically
/// toward both endpoints, for integrands with endpoint behaviour.
pub fn integrate_graded<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    levels: usize,
    tol: f64,
) -> Result<QuadratureResult> {
    let mid = 0.5 * (lo + hi);
    let mut breaks = vec![lo];
    for k in (1..=levels).rev() {
        breaks.push(lo + (mid - lo) * 0.5f64.powi(k as i32));
    }
    breaks.push(mid);
    for k in 1..=levels {
        breaks.push(hi - (hi - mid) * 0.5f64.powi(k as i32));
    }
    breaks.push(hi);
    let share = tol / (breaks.len() - 1) as f64;
    let mut total = QuadratureResult {
        value: 0.0,
        error_estimate: 0.0,
        evaluations: 0,
        converged: true,
    };
    for w in breaks.windows(2) {
        let part = integrate_1d(&mut f, w[0], w[1], share)?;
        total.value += part.value;
        total.error_estimate += part.error_estimate;
        total.evaluations += part.evaluations;
        total.converged &= part.converged;
    }
    Ok(total)
}

/// `∫_{−π}^{π} R_e(θ)^power sin(θ)^sin_power dθ` by quadrature.
pub fn outer_radius_moment(
    geom: &TacnodeGeometry,
    power: i32,
    sin_power: i32,
    tol: f64,
) -> Result<QuadratureResult> {
    integrate_1d(
        |t| geom.outer_radius(t).powi(power) * t.sin().powi(sin_power),
        -PI,
        PI,
        tol,
    )
}

/// Closed forms of the three `R_e` moments: `∫R_e² = 2πc²`,
/// `∫R_e³ sinθ = 3π(c−a)c²`, `∫R_e⁴ = 2πc²(2a² − 4ac + 3c²)`.
pub fn outer_radius_moment_closed(geom: &TacnodeGeometry) -> [f64; 3] {
    let (a, c) = (geom.a(), geom.c());
    [
        2.0 * PI * c * c,
        3.0 * PI * (c - a) * c * c,
        2.0 * PI * c * c * (2.0 * a * a - 4.0 * a * c + 3.0 * c * c),
    ]
}

/// `∫_Ω |z|² d²z / π` by nested quadrature over the polar parametrization.
pub fn area_moment_q(geom: &TacnodeGeometry, tol: f64) -> Result<QuadratureResult> {
    let a = geom.a();
    let mut evaluations = 0;
    let mut inner_ok = true;
    let res = integrate_1d(
        |theta| {
            let s = theta.sin();
            let re = geom.outer_radius(theta);
            if re <= a {
                return 0.0;
            }
            match integrate_1d(|r| (a * a + r * r + 2.0 * a * r * s) * r, a, re, tol * 1e-2) {
                Ok(q) => {
                    evaluations += q.evaluations;
                    inner_ok &= q.converged;
                    q.value / PI
                }
                Err(_) => f64::NAN,
            }
        },
        -FRAC_PI_2,
        1.5 * PI,
        tol,
    )?;
    Ok(QuadratureResult {
        evaluations: res.evaluations + evaluations,
        converged: res.converged && inner_ok && res.value.is_finite(),
        ..res
    })
}

/// `(3/2)(c⁴ − a⁴)`.
pub fn area_moment_q_closed(geom: &TacnodeGeometry) -> f64 {
    1.5 * (geom.c().powi(4) - geom.a().powi(4))
}

/// Normal step and tolerance for oracle comparisons. Smaller steps push the
/// second-order difference below `10·tol` but amplify rounding in the
/// difference quotients past what the inner quadratures can resolve.
pub const ORACLE_STEP: f64 = 3e-5;
pub const ORACLE_TOL: f64 = 1e-10;

/// Output of the Green-function density oracle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenDensity {
    /// Fourth-order finite-difference value.
    pub value: f64,
    /// Second-order finite-difference value.
    pub value_order2: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
    /// Set when the two difference orders disagree by more than `10·tol`
    /// or a quadrature did not converge.
    pub flagged: bool,
}

/// `∫_{|w−m|<R} log|w − q| d²w`.
fn disk_log_potential(q: Complex64, m: Complex64, radius: f64) -> f64 {
    let d = (q - m).norm();
    let r2 = radius * radius;
    if d <= radius {
        PI * r2 * radius.ln() - 0.5 * PI * (r2 - d * d)
    } else {
        PI * r2 * d.ln()
    }
}

fn region_log_potential(geom: &TacnodeGeometry, q: Complex64) -> f64 {
    disk_log_potential(q, geom.outer_center(), geom.c())
        - disk_log_potential(q, geom.inner_center(), geom.a())
}

/// Balayage density `dν/dθ` at a boundary point computed from the Green
/// function: the inward normal derivative of `∫_Ω g(w, ·) d²w/π`, taken by
/// one-sided differences with step `normal_step`.
///
/// The logarithmic singularity of `g(w, p)` at `w = p` is removed by
/// subtracting the image-charge kernel of the nearby circle, whose area
/// integral is known in closed form.
pub fn density_via_green(
    geom: &TacnodeGeometry,
    point: BoundaryPoint,
    normal_step: f64,
    tol: f64,
) -> Result<GreenDensity> {
    if !(1e-8..=1e-4).contains(&normal_step) {
        return Err(Error::Domain(format!(
            "normal_step must lie in [1e-8, 1e-4], got {normal_step}"
        )));
    }
    if !(point.theta > -FRAC_PI_2 && point.theta < 1.5 * PI) {
        return Err(Error::Domain(format!(
            "boundary angle {} outside (−π/2, 3π/2)",
            point.theta
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let z = geom.boundary_point(point);
    let n = geom.inward_normal(point);
    let (center, rho) = match point.side {
        Side::Inner => (geom.inner_center(), geom.a()),
        Side::Outer => (geom.outer_center(), geom.c()),
    };
    let probes: Vec<Complex64> = (1..=4).map(|j| z + n * (j as f64 * normal_step)).collect();
    if probes.iter().any(|p| !geom.contains(*p)) {
        return Err(Error::Domain(format!(
            "normal probes leave the region at {z}"
        )));
    }
    let images: Vec<Complex64> = probes
        .iter()
        .map(|p| center + rho * rho / (p - center).conj())
        .collect();
    let strip: Vec<Complex64> = probes
        .iter()
        .map(|p| geom.strip_coordinate(*p).map(|s| s * PI))
        .collect::<Result<_>>()?;

    const C2: [f64; 4] = [4.0, -1.0, 0.0, 0.0];
    const C4: [f64; 4] = [48.0, -36.0, 16.0, -3.0];
    let d2 = 2.0 * normal_step;
    let d4 = 12.0 * normal_step;

    // Image-charge part, integrated exactly.
    let kernel_integral: Vec<f64> = (0..4)
        .map(|j| {
            (region_log_potential(geom, images[j]) - region_log_potential(geom, probes[j]))
                / (2.0 * PI)
        })
        .collect();
    let exact2: f64 = (0..4).map(|j| C2[j] * kernel_integral[j]).sum::<f64>() / d2;
    let exact4: f64 = (0..4).map(|j| C4[j] * kernel_integral[j]).sum::<f64>() / d4;

    // Smooth remainder g − image kernel, differenced pointwise.
    let remainder = |w: Complex64| -> [f64; 4] {
        let u = match geom.strip_coordinate(w) {
            Ok(s) => s * PI,
            Err(_) => return [0.0; 4],
        };
        let mut out = [0.0; 4];
        for j in 0..4 {
            let g = green_strip(u, strip[j]);
            let kernel = ((w - images[j]).norm() / (w - probes[j]).norm()).ln() / (2.0 * PI);
            out[j] = g - kernel;
        }
        out
    };

    let a = geom.a();
    let mut evaluations = 0usize;
    let mut converged = true;
    let mut integrate_fd = |coef: &[f64; 4], denom: f64| -> Result<(f64, f64)> {
        let mut inner_evals = 0usize;
        let mut inner_ok = true;
        // the outer range has length 2π, so this keeps the inner share near tol/3
        let inner_tol = tol / 20.0;
        let res = integrate_graded(
            |theta| {
                let re = geom.outer_radius(theta);
                if re <= a {
                    return 0.0;
                }
                let e = Complex64::from_polar(1.0, theta);
                let q = integrate_1d(
                    |r| {
                        let w = Complex64::new(0.0, a) + e * r;
                        let rem = remainder(w);
                        r * (0..4).map(|j| coef[j] * rem[j]).sum::<f64>() / denom
                    },
                    a,
                    re,
                    inner_tol,
                );
                match q {
                    Ok(q) => {
                        inner_evals += q.evaluations;
                        inner_ok &= q.converged;
                        q.value
                    }
                    Err(_) => f64::NAN,
                }
            },
            -FRAC_PI_2,
            1.5 * PI,
            12,
            tol * 0.5,
        )?;
        evaluations += res.evaluations + inner_evals;
        converged &= res.converged && inner_ok && res.value.is_finite();
        Ok((res.value, res.error_estimate))
    };
    let (smooth4, err4) = integrate_fd(&C4, d4)?;
    let (smooth2, _) = integrate_fd(&C2, d2)?;
    let value = rho / PI * (smooth4 + exact4);
    let value_order2 = rho / PI * (smooth2 + exact2);
    let disagreement = (value - value_order2).abs();
    Ok(GreenDensity {
        value,
        value_order2,
        error_estimate: rho / PI * err4,
        evaluations,
        flagged: !converged || disagreement > 10.0 * tol.max(rho / PI * err4),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_integral() {
        let q = integrate_1d(f64::sin, 0.0, PI, 1e-13).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
        assert!(q.converged);
    }

    #[test]
    fn polynomial_errors_are_honest() {
        for deg in 0..30 {
            let q = integrate_1d(|x| x.powi(deg), 0.0, 1.0, 1e-12).unwrap();
            let exact = 1.0 / (deg + 1) as f64;
            assert!(
                (q.value - exact).abs() <= q.error_estimate.max(1e-12),
                "deg {deg}"
            );
        }
    }

    #[test]
    fn endpoint_singularity() {
        let q = integrate_1d(|x| 1.0 / x.sqrt(), 0.0, 1.0, 1e-10).unwrap();
        assert!((q.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_interval() {
        assert!(integrate_1d(|x| x, 1.0, 0.0, 1e-8).is_err());
        assert!(integrate_1d(|x| x, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn flags_nonconvergence() {
        let opts = QuadOptions {
            abs_tol: 1e-15,
            rel_tol: 0.0,
            max_subdivisions: 3,
        };
        let q = integrate_1d_with(|x| (1.0 / x).sin(), 1e-6, 1.0, opts).unwrap();
        assert!(!q.converged);
    }

    #[test]
    fn rounding_limited_result_counts_as_converged() {
        let q = integrate_1d(|x| (3.0 * x).exp(), 0.0, 2.0, 1e-30).unwrap();
        let exact = ((6.0f64).exp() - 1.0) / 3.0;
        assert!(q.converged);
        assert!((q.value - exact).abs() < 1e-12 * exact);
    }

    #[test]
    fn radius_moments() {
        for (a, c) in [(0.45, 1.2), (0.75, 1.2), (0.3, 0.55)] {
            let g = TacnodeGeometry::new(a, c).unwrap();
            let closed = outer_radius_moment_closed(&g);
            let q2 = outer_radius_moment(&g, 2, 0, 1e-12).unwrap().value;
            let q3 = outer_radius_moment(&g, 3, 1, 1e-12).unwrap().value;
            let q4 = outer_radius_moment(&g, 4, 0, 1e-12).unwrap().value;
            assert!((q2 - closed[0]).abs() < 1e-8);
            assert!((q3 - closed[1]).abs() < 1e-8);
            assert!((q4 - closed[2]).abs() < 1e-8);
        }
    }

    #[test]
    fn area_moment() {
        for (a, c) in [(0.45, 1.2), (0.75, 1.2), (0.3, 0.55)] {
            let g = TacnodeGeometry::new(a, c).unwrap();
            let q = area_moment_q(&g, 1e-11).unwrap();
            assert!(
                (q.value - area_moment_q_closed(&g)).abs() < 1e-8,
                "{a} {c}: {}",
                q.value
            );
        }
        let thin = TacnodeGeometry::new(1.0 - 1e-9, 1.0).unwrap();
        assert!(area_moment_q(&thin, 1e-12).unwrap().value.abs() < 1e-7);
    }

    #[test]
    fn disk_potential_matches_quadrature() {
        let m = Complex64::new(0.2, -0.1);
        for q in [Complex64::new(0.3, 0.1), Complex64::new(2.0, 1.0)] {
            let num = integrate_1d(
                |t| {
                    integrate_1d(
                        |r| r * (m + Complex64::from_polar(r, t) - q).norm().ln(),
                        0.0,
                        0.7,
                        1e-12,
                    )
                    .unwrap()
                    .value
                },
                0.0,
                2.0 * PI,
                1e-10,
            )
            .unwrap()
            .value;
            assert!((num - disk_log_potential(q, m, 0.7)).abs() < 1e-8);
        }
    }

    #[test]
    fn green_oracle_total_mass_sample() {
        let g = TacnodeGeometry::new(0.45, 1.2).unwrap();
        let p = BoundaryPoint {
            side: Side::Inner,
            theta: 0.0,
        };
        let d = density_via_green(&g, p, 1e-4, 1e-9).unwrap();
        assert!(!d.flagged, "{d:?}");
        assert!((d.value - 0.0444268845748265).abs() < 1e-7, "{d:?}");
    }

    #[test]
    fn green_oracle_rejects_bad_step() {
        let g = TacnodeGeometry::new(0.45, 1.2).unwrap();
        let p = BoundaryPoint {
            side: Side::Outer,
            theta: 1.0,
        };
        assert!(density_via_green(&g, p, 1e-3, 1e-8).is_err());
    }
}
