//! Self-checks of the closed forms, the quadrature oracle and the Monte
//! Carlo rate laws, reported as a pass/fail table.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::Serialize;

use crate::density::{
    arc_mass, density, moment_q_nu, moment_q_nu_raw, weighted_boundary_sums, DEFAULT_TOL,
};
use crate::error::{Error, Result};
use crate::geometry::{BoundaryPoint, Side, TacnodeGeometry};
use crate::mc::{
    corner_sandwich, extremal_length_bound, fit_vanishing_rate, harmonic_measure_wos, log_grid,
    CornerWedge, CuspWedge, McParams, ModelBoundaryDomain, PowerLawMeasure, Sector,
};
use crate::quadrature::{
    area_moment_q, area_moment_q_closed, density_via_green, outer_radius_moment,
    outer_radius_moment_closed, ORACLE_STEP, ORACLE_TOL,
};
use crate::special::{hole_rate_f, hole_rate_f_expanded};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    ClosedForms,
    Oracle,
    McRates,
    All,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed-forms" => Ok(Suite::ClosedForms),
            "oracle" => Ok(Suite::Oracle),
            "mc-rates" => Ok(Suite::McRates),
            "all" => Ok(Suite::All),
            _ => Err(Error::Spec(format!("unknown suite {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The Monte Carlo budget was too small to decide.
    Insufficient,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Insufficient => "INSUFFICIENT PRECISION",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub detail: String,
    pub status: Status,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub walks: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            walks: 100_000,
            seed: 2024,
        }
    }
}

fn check(suite: &'static str, name: impl Into<String>, ok: bool, detail: String) -> Check {
    Check {
        suite,
        name: name.into(),
        detail,
        status: if ok { Status::Pass } else { Status::Fail },
    }
}

fn close(suite: &'static str, name: impl Into<String>, value: f64, target: f64, tol: f64) -> Check {
    let err = (value - target).abs();
    check(
        suite,
        name,
        err <= tol,
        format!("value {value}, target {target}, |diff| {err:.3e} <= {tol:e}"),
    )
}

fn failed(suite: &'static str, name: impl Into<String>, e: Error) -> Check {
    check(suite, name, false, format!("error: {e}"))
}

const GEOMETRIES: [(f64, f64); 3] = [(0.45, 1.2), (0.75, 1.2), (0.3, 0.55)];

/// Gap constants `C/(βc⁴)` at six radius ratios.
pub const SPECIAL_VALUES: [(f64, f64, f64); 6] = [
    (1.0, 2.0, (93.0 - 8.0 * PI * PI) / 384.0),
    (1.0, 3.0, (112.0 - 9.0 * PI * PI) / 324.0),
    (2.0, 3.0, (245.0 - 24.0 * PI * PI) / 648.0),
    (3.0, 4.0, (959.0 - 96.0 * PI * PI) / 2048.0),
    (3.0, 5.0, (2272.0 - 225.0 * PI * PI) / 2500.0),
    (4.0, 5.0, (23821.0 - 2400.0 * PI * PI) / 45000.0),
];

pub fn closed_forms() -> Vec<Check> {
    let s = "closed-forms";
    let mut out = Vec::new();
    for (p, q, value) in SPECIAL_VALUES {
        let x = p / q;
        match hole_rate_f(x) {
            Ok(f) => out.push(close(
                s,
                format!("F({p}/{q}) special value"),
                f,
                8.0 * value,
                1e-12,
            )),
            Err(e) => out.push(failed(s, "F special value", e)),
        }
    }
    let grid: Vec<f64> = (0..=10_000).map(|k| k as f64 / 10_000.0).collect();
    let values: Vec<f64> = grid
        .iter()
        .map(|&x| hole_rate_f(x).unwrap_or(f64::NAN))
        .collect();
    out.push(check(
        s,
        "F strictly decreasing",
        values.windows(2).all(|w| w[0] > w[1]),
        "10001-point grid on [0, 1]".into(),
    ));
    out.push(check(
        s,
        "F endpoints",
        values[0] == 1.0 && values[10_000] == 0.0,
        format!("F(0) = {}, F(1) = {}", values[0], values[10_000]),
    ));
    let small = grid
        .iter()
        .zip(&values)
        .filter(|(x, _)| **x <= 1e-2)
        .map(|(x, f)| (f - (1.0 - 2.0 * PI * PI * x * x / 3.0)).abs())
        .fold(0.0, f64::max);
    out.push(check(
        s,
        "F expansion at 0",
        small <= 1e-4,
        format!("max deviation {small:.3e}"),
    ));
    let big = grid
        .iter()
        .zip(&values)
        .filter(|(x, _)| 1.0 - **x <= 1e-2)
        .map(|(x, f)| (f - 10.0 / 3.0 * (1.0 - x).powi(3)).abs())
        .fold(0.0, f64::max);
    out.push(check(
        s,
        "F expansion at 1",
        big <= 1e-4,
        format!("max deviation {big:.3e}"),
    ));
    let forms = (1..1000)
        .map(|k| {
            let x = k as f64 / 1000.0;
            (hole_rate_f(x).unwrap_or(f64::NAN) - hole_rate_f_expanded(x).unwrap_or(f64::NAN)).abs()
                / (1.0 + 1.0 / (1.0 - x))
        })
        .fold(0.0, f64::max);
    out.push(check(
        s,
        "F forms agree",
        forms <= 1e-12,
        format!("max scaled difference {forms:.3e}"),
    ));

    for (a, c) in GEOMETRIES {
        let g = match TacnodeGeometry::new(a, c) {
            Ok(g) => g,
            Err(e) => {
                out.push(failed(s, "geometry", e));
                continue;
            }
        };
        let closed = outer_radius_moment_closed(&g);
        for (j, (power, sin_power, label)) in
            [(2, 0, "R_e^2"), (3, 1, "R_e^3 sin"), (4, 0, "R_e^4")]
                .iter()
                .enumerate()
        {
            match outer_radius_moment(&g, *power, *sin_power, 1e-12) {
                Ok(q) => out.push(close(
                    s,
                    format!("∫{label} (a={a}, c={c})"),
                    q.value,
                    closed[j],
                    1e-8,
                )),
                Err(e) => out.push(failed(s, label.to_string(), e)),
            }
        }
        match area_moment_q(&g, 1e-11) {
            Ok(q) => out.push(close(
                s,
                format!("∫Q d²z/π (a={a}, c={c})"),
                q.value,
                area_moment_q_closed(&g),
                1e-8,
            )),
            Err(e) => out.push(failed(s, "area moment", e)),
        }
        match arc_mass(&g, 2.0 * c, DEFAULT_TOL) {
            Ok(m) => out.push(close(
                s,
                format!("total mass (a={a}, c={c})"),
                m,
                c * c - a * a,
                1e-8,
            )),
            Err(e) => out.push(failed(s, "total mass", e)),
        }
    }

    let g = TacnodeGeometry::new(0.45, 1.2).expect("valid geometry");
    let (a, c) = (g.a(), g.c());
    let t = 1e-3;
    for side in [Side::Inner, Side::Outer] {
        let k = match side {
            Side::Inner => a * a * (c - a) / (4.0 * c * PI),
            Side::Outer => c * c * (c - a) / (4.0 * a * PI),
        };
        match density(&g, side, -FRAC_PI_2 + t, DEFAULT_TOL) {
            Ok(v) => {
                let ratio = v.value / (k * t * t);
                out.push(check(
                    s,
                    format!("{} cusp asymptotics", side.as_str()),
                    (0.98..=1.02).contains(&ratio),
                    format!("ratio {ratio}"),
                ));
            }
            Err(e) => out.push(failed(s, "cusp asymptotics", e)),
        }
    }
    match arc_mass(&g, 1e-2, DEFAULT_TOL) {
        Ok(m) => {
            let ratio = m * 3.0 * PI * a * c / ((c - a) * 1e-6);
            out.push(check(
                s,
                "arc mass cubic law",
                (0.99..=1.01).contains(&ratio),
                format!("ratio {ratio}"),
            ));
        }
        Err(e) => out.push(failed(s, "arc mass cubic law", e)),
    }

    let beta = 2.0;
    let near_integer_c = 3.0 / (2.0 + 1e-7);
    for (a, c) in [
        (0.45, 1.2),
        (0.75, 1.2),
        (0.3, 0.55),
        (0.5, 1.0),
        (near_integer_c - 1.0, near_integer_c),
    ] {
        let g = match TacnodeGeometry::new(a, c) {
            Ok(g) => g,
            Err(e) => {
                out.push(failed(s, "geometry", e));
                continue;
            }
        };
        let lhs = beta / 4.0 * (moment_q_nu(&g) - 1.5 * (c.powi(4) - a.powi(4)));
        match hole_rate_f(a / c) {
            Ok(f) => out.push(close(
                s,
                format!("gap constant identity (a={a}, c={c})"),
                lhs,
                beta * c.powi(4) / 8.0 * f,
                1e-10,
            )),
            Err(e) => out.push(failed(s, "gap constant identity", e)),
        }
        out.push(close(
            s,
            format!("moment raw sums (a={a}, c={c})"),
            moment_q_nu_raw(&g),
            moment_q_nu(&g),
            1e-10,
        ));
        let (inner, outer) = weighted_boundary_sums(&g);
        out.push(close(
            s,
            format!("weighted sums combine (a={a}, c={c})"),
            2.0 * a * a * inner + 2.0 * c * c * outer,
            moment_q_nu(&g),
            1e-10,
        ));
    }
    out
}

/// Probe angles for the oracle comparison, avoiding the cusp and `π/2`.
pub fn oracle_angles() -> Vec<f64> {
    (0..12)
        .map(|k| -FRAC_PI_2 + 0.3 + k as f64 * (2.0 * PI - 0.6) / 11.0)
        .collect()
}

pub fn oracle() -> Vec<Check> {
    let s = "oracle";
    let g = TacnodeGeometry::new(0.45, 1.2).expect("valid geometry");
    let mut out = Vec::new();
    for side in [Side::Inner, Side::Outer] {
        for theta in oracle_angles() {
            let name = format!("{} θ={theta:.4}", side.as_str());
            let series = match density(&g, side, theta, DEFAULT_TOL) {
                Ok(v) => v.value,
                Err(e) => {
                    out.push(failed(s, name, e));
                    continue;
                }
            };
            match density_via_green(&g, BoundaryPoint { side, theta }, ORACLE_STEP, ORACLE_TOL) {
                Ok(o) => {
                    let rel = (series - o.value).abs() / series.abs();
                    out.push(check(
                        s,
                        name,
                        rel <= 1e-6 && !o.flagged,
                        format!("series {series}, green {}, rel {rel:.3e}", o.value),
                    ));
                }
                Err(e) => out.push(failed(s, name, e)),
            }
        }
    }
    out
}

fn mc_check(name: String, ok: bool, precise: bool, detail: String) -> Check {
    Check {
        suite: "mc-rates",
        name,
        detail,
        status: if !precise {
            Status::Insufficient
        } else if ok {
            Status::Pass
        } else {
            Status::Fail
        },
    }
}

/// Exponent window for the rate-law checks.
pub const EXPONENT_WINDOW: f64 = 0.15;

pub fn mc_rates(opts: &VerifyOptions) -> Vec<Check> {
    let mut out = Vec::new();
    let params = McParams::new(opts.walks, opts.seed);
    // Disk centred at 1 seen from its centre: the arc inside B_r(0) subtends 4 asin(r/2).
    let disk = ModelBoundaryDomain::Disk {
        center: [1.0, 0.0],
        radius: 1.0,
    };
    match harmonic_measure_wos(&disk, Complex64::new(1.0, 0.0), 0.8, &params) {
        Ok(e) => {
            let exact = 4.0 * 0.4f64.asin() / (2.0 * PI);
            out.push(mc_check(
                "disk arc measure".into(),
                (e.estimate - exact).abs() <= 3.0 * e.stderr,
                e.stderr > 0.0 && !e.flagged,
                format!("estimate {} ± {}, exact {exact}", e.estimate, e.stderr),
            ));
        }
        Err(e) => out.push(failed("mc-rates", "disk arc measure", e)),
    }
    let (rho, rho0, u) = (1.0, 0.1, 0.05);
    let half = ModelBoundaryDomain::CornerWedge(CornerWedge {
        alpha: 1.0,
        rho,
        start: 0.0,
    });
    match harmonic_measure_wos(&half, Complex64::new(0.0, rho0), u, &params) {
        Ok(e) => {
            let x0 = 0.5 * (u / rho + rho / u);
            let y = 0.5 * (rho / rho0 - rho0 / rho);
            let exact = 1.0 - 2.0 / PI * (x0 / y).atan();
            out.push(mc_check(
                "half-disk interval measure".into(),
                (e.estimate - exact).abs() <= 3.0 * e.stderr,
                e.stderr > 0.0 && !e.flagged,
                format!(
                    "estimate {} ± {}, exact {exact}, half-plane {}",
                    e.estimate,
                    e.stderr,
                    2.0 / PI * (u / rho0).atan()
                ),
            ));
        }
        Err(e) => out.push(failed("mc-rates", "half-disk interval measure", e)),
    }
    let cusp = CuspWedge {
        d: 1.0,
        a_coef: 1.0,
        rho: 1.0,
        start: 0.0,
    };
    let cusp_domain = ModelBoundaryDomain::CuspWedge(cusp);
    let probe = McParams::new((opts.walks / 25).max(1), opts.seed);
    let mut worst = f64::NEG_INFINITY;
    let mut probe_ok = true;
    let mut flagged = false;
    for (i, radius) in [0.5, 0.6, 0.7, 0.8, 0.9].iter().enumerate() {
        for (j, r) in [0.1, 0.2, 0.3, 0.4, 0.45].iter().enumerate() {
            let z = Complex64::from_polar(*radius, 0.5 * radius);
            let p = McParams {
                seed: opts.seed + (i * 5 + j) as u64,
                ..probe
            };
            match harmonic_measure_wos(&cusp_domain, z, *r, &p) {
                Ok(e) => {
                    let bound = extremal_length_bound(&Sector::Cusp(cusp), *r, *radius);
                    worst = worst.max(e.estimate - bound - 3.0 * e.stderr);
                    probe_ok &= e.estimate <= bound + 3.0 * e.stderr;
                    flagged |= e.flagged;
                }
                Err(_) => probe_ok = false,
            }
        }
    }
    out.push(mc_check(
        "extremal-length bound on 5×5 probes".into(),
        probe_ok,
        !flagged,
        format!("max(estimate − bound − 3σ) = {worst:.3e}"),
    ));

    let measure = PowerLawMeasure::new(1.0).expect("b = 1");
    let grid = log_grid(0.02, 0.5, 10).expect("valid grid");
    match fit_vanishing_rate(&cusp_domain, &measure, &grid, &params) {
        Ok(f) => out.push(mc_check(
            "cusp rate law".into(),
            (f.exponent - 3.0).abs() <= EXPONENT_WINDOW && (0.27..=0.40).contains(&f.coefficient),
            f.precise,
            format!(
                "exponent {} ± {}, coefficient {}",
                f.exponent, f.stderr_exponent, f.coefficient
            ),
        )),
        Err(e @ Error::Insufficient(_)) => out.push(mc_check(
            "cusp rate law".into(),
            false,
            false,
            e.to_string(),
        )),
        Err(e) => out.push(failed("mc-rates", "cusp rate law", e)),
    }
    let corner = CornerWedge {
        alpha: 0.4,
        rho: 1000.0,
        start: 0.0,
    };
    let (lower, upper) = corner_sandwich(0.4, 1.0).expect("2b < 1/α");
    let multi = ModelBoundaryDomain::MultiWedge {
        components: vec![
            Sector::Corner(corner),
            Sector::Cusp(CuspWedge { start: PI, ..cusp }),
        ],
    };
    for (label, domain) in [
        ("corner", ModelBoundaryDomain::CornerWedge(corner)),
        ("corner + cusp", multi),
    ] {
        match fit_vanishing_rate(&domain, &measure, &grid, &params) {
            Ok(f) => {
                let m = &f.masses[0];
                let scaled = m.mass / (m.r * m.r);
                let sig = m.stderr / (m.r * m.r);
                out.push(mc_check(
                    format!("{label} rate law"),
                    (f.exponent - 2.0).abs() <= EXPONENT_WINDOW
                        && scaled + 3.0 * sig >= lower
                        && scaled - 3.0 * sig <= upper,
                    f.precise,
                    format!(
                        "exponent {} ± {}, ν(B_r)/r² at r={}: {scaled} ± {sig} vs [{lower}, {upper}]",
                        f.exponent, f.stderr_exponent, m.r
                    ),
                ));
            }
            Err(e @ Error::Insufficient(_)) => out.push(mc_check(
                format!("{label} rate law"),
                false,
                false,
                e.to_string(),
            )),
            Err(e) => out.push(failed("mc-rates", format!("{label} rate law"), e)),
        }
    }
    out
}

pub fn run(suite: Suite, opts: &VerifyOptions) -> Vec<Check> {
    match suite {
        Suite::ClosedForms => closed_forms(),
        Suite::Oracle => oracle(),
        Suite::McRates => mc_rates(opts),
        Suite::All => {
            let mut v = closed_forms();
            v.extend(oracle());
            v.extend(mc_rates(opts));
            v
        }
    }
}

/// Overall status: any failure fails, otherwise any undecided check is
/// insufficient.
pub fn overall(checks: &[Check]) -> Status {
    if checks.iter().any(|c| c.status == Status::Fail) {
        Status::Fail
    } else if checks.iter().any(|c| c.status == Status::Insufficient) {
        Status::Insufficient
    } else {
        Status::Pass
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_pass() {
        let checks = closed_forms();
        for c in &checks {
            assert_eq!(
                c.status,
                Status::Pass,
                "{} {}: {}",
                c.suite,
                c.name,
                c.detail
            );
        }
        assert_eq!(overall(&checks), Status::Pass);
    }

    #[test]
    fn tiny_budget_is_insufficient() {
        let checks = mc_rates(&VerifyOptions { walks: 40, seed: 1 });
        assert!(checks
            .iter()
            .filter(|c| c.name.contains("rate law"))
            .all(|c| c.status == Status::Insufficient));
        assert_ne!(overall(&checks), Status::Pass);
    }

    #[test]
    fn suite_names() {
        assert_eq!("mc-rates".parse::<Suite>().unwrap(), Suite::McRates);
        assert!("everything".parse::<Suite>().is_err());
    }
}
