//! Geometry of the tacnodal region between two internally tangent circles.
//!
//! The region is `{|z − ci| < c} \ {|z − ai| ≤ a}` with `0 < a < c`. Both
//! circles touch at the origin, which is the tacnode. Points of the region
//! are written in polar form around `ai` as `ai + r e^{iθ}` with
//! `θ ∈ (−π/2, 3π/2)` and `a < r < R_e(θ)`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Points closer than this to the tacnode are rejected by the conformal map.
pub const TACNODE_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TacnodeGeometry {
    a: f64,
    c: f64,
}

/// Which of the two boundary circles a point lies on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Inner,
    Outer,
}

impl Side {
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Inner => "inner",
            Side::Outer => "outer",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inner" => Ok(Side::Inner),
            "outer" => Ok(Side::Outer),
            other => Err(Error::Spec(format!("unknown side '{other}'"))),
        }
    }
}

/// A point `ai + a e^{iθ}` (inner) or `ci + c e^{iθ}` (outer) of the boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryPoint {
    pub side: Side,
    pub theta: f64,
}

/// Half-opening of the region on a circle `|z| = r` in the right half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcAngle {
    pub value: f64,
    /// Set when `r > 2a`: the circle no longer meets the inner disk and the
    /// value comes from the outer circle alone.
    pub degenerate: bool,
}

impl TacnodeGeometry {
    pub fn new(a: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite() && c.is_finite() && a < c) {
            return Err(Error::Domain(format!(
                "tacnode radii need 0 < a < c, got a = {a}, c = {c}"
            )));
        }
        Ok(Self { a, c })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn inner_center(&self) -> Complex64 {
        Complex64::new(0.0, self.a)
    }

    pub fn outer_center(&self) -> Complex64 {
        Complex64::new(0.0, self.c)
    }

    pub fn radius(&self, side: Side) -> f64 {
        match side {
            Side::Inner => self.a,
            Side::Outer => self.c,
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        (z - self.outer_center()).norm() < self.c && (z - self.inner_center()).norm() > self.a
    }

    /// Area of the region divided by π.
    pub fn scaled_area(&self) -> f64 {
        self.c * self.c - self.a * self.a
    }

    pub fn boundary_point(&self, p: BoundaryPoint) -> Complex64 {
        let r = self.radius(p.side);
        Complex64::new(0.0, r) + Complex64::from_polar(r, p.theta)
    }

    /// Unit normal at a boundary point pointing into the region.
    pub fn inward_normal(&self, p: BoundaryPoint) -> Complex64 {
        let e = Complex64::from_polar(1.0, p.theta);
        match p.side {
            Side::Inner => e,
            Side::Outer => -e,
        }
    }

    /// Outer radius `R_e(θ)` of the polar parametrization around `ai`.
    pub fn outer_radius(&self, theta: f64) -> f64 {
        let (s, co) = theta.sin_cos();
        let (a, c) = (self.a, self.c);
        (c - a) * s + (a * (2.0 * c - a) * co * co + c * c * s * s).sqrt()
    }

    /// `Θ_R(r) = arcsin(r/2a) − arcsin(r/2c)` for `0 < r ≤ 2a`.
    pub fn arc_angle(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r <= 2.0 * self.a) {
            return Err(Error::Domain(format!(
                "arc angle needs 0 < r <= 2a = {}, got {r}",
                2.0 * self.a
            )));
        }
        Ok((r / (2.0 * self.a)).asin() - (r / (2.0 * self.c)).asin())
    }

    /// Like [`arc_angle`](Self::arc_angle) but also accepts `2a < r ≤ 2c`,
    /// where only the outer circle bounds the arc.
    pub fn arc_angle_extended(&self, r: f64) -> Result<ArcAngle> {
        if r > 2.0 * self.a && r <= 2.0 * self.c {
            return Ok(ArcAngle {
                value: FRAC_PI_2 - (r / (2.0 * self.c)).asin(),
                degenerate: true,
            });
        }
        self.arc_angle(r).map(|value| ArcAngle {
            value,
            degenerate: false,
        })
    }

    /// Coefficient of tangency of each of the two cusps at the tacnode.
    pub fn cusp_coefficient(&self) -> f64 {
        (self.c - self.a) / (2.0 * self.a * self.c)
    }

    /// Angle `θ_a(r)` (inner) or `θ_c(r)` (outer) at which the boundary circle
    /// leaves the ball `|z| < r`, in the right half-plane.
    pub fn exit_angle(&self, side: Side, r: f64) -> f64 {
        let rho = self.radius(side);
        let s = r * r / (2.0 * rho * rho) - 1.0;
        s.clamp(-1.0, 1.0).asin()
    }

    fn check_map_arg(&self, z: Complex64) -> Result<()> {
        if z.norm() < TACNODE_CUTOFF {
            return Err(Error::Singular(format!("point {z} is at the tacnode")));
        }
        Ok(())
    }

    /// Strip coordinate `φ₁(z) = i c/(c−a) · (z − 2ai)/z`; maps the region
    /// onto `{0 < Im < 1}`.
    pub fn strip_coordinate(&self, z: Complex64) -> Result<Complex64> {
        self.check_map_arg(z)?;
        let k = self.c / (self.c - self.a);
        Ok(Complex64::new(0.0, k) * (z - Complex64::new(0.0, 2.0 * self.a)) / z)
    }

    /// The mirrored strip coordinate `−a/(c−a) · i (z − 2ci)/z` used for the
    /// outer circle; also maps the region onto `{0 < Im < 1}`.
    pub fn strip_coordinate_mirror(&self, z: Complex64) -> Result<Complex64> {
        self.check_map_arg(z)?;
        let k = -self.a / (self.c - self.a);
        Ok(Complex64::new(0.0, k) * (z - Complex64::new(0.0, 2.0 * self.c)) / z)
    }

    /// Conformal map `φ(z) = exp(π φ₁(z))` onto the upper half-plane.
    pub fn map_to_half_plane(&self, z: Complex64) -> Result<Complex64> {
        Ok((self.strip_coordinate(z)? * PI).exp())
    }

    /// Green function `g(z, w)` of the region, with logarithmic pole at `w`.
    pub fn green(&self, z: Complex64, w: Complex64) -> Result<f64> {
        for p in [z, w] {
            if !self.contains(p) {
                return Err(Error::Domain(format!("point {p} is not inside the region")));
            }
        }
        if z == w {
            return Err(Error::Singular(
                "green function evaluated on its diagonal".into(),
            ));
        }
        let u = self.strip_coordinate(z)? * PI;
        let v = self.strip_coordinate(w)? * PI;
        Ok(green_strip(u, v))
    }

    /// Green function evaluated through the mirrored map; must agree with
    /// [`green`](Self::green).
    pub fn green_mirror(&self, z: Complex64, w: Complex64) -> Result<f64> {
        let u = self.strip_coordinate_mirror(z)? * PI;
        let v = self.strip_coordinate_mirror(w)? * PI;
        Ok(green_strip(u, v))
    }
}

/// `log|e^d − 1|` without overflow for large `Re d`.
pub(crate) fn log_abs_expm1(d: Complex64) -> f64 {
    if d.re > 0.0 {
        d.re + log_abs_one_minus_exp(-d)
    } else {
        log_abs_one_minus_exp(d) // |e^d − 1| = |1 − e^d|
    }
}

/// `log|1 − e^d|` for `Re d ≤ 0`.
fn log_abs_one_minus_exp(d: Complex64) -> f64 {
    if d.norm() < 1e-3 {
        // 1 − e^d = −d (1 + d/2 + d²/6 + d³/24 + ...)
        let series = Complex64::new(1.0, 0.0) + d * (0.5 + d * (1.0 / 6.0 + d / 24.0));
        return d.norm().ln() + series.norm().ln();
    }
    (Complex64::new(1.0, 0.0) - d.exp()).norm().ln()
}

/// Green function of the strip `{0 < Im < π}` in the variables `u = πφ₁(z)`,
/// `v = πφ₁(w)`; equal to the half-plane Green function of `e^u`, `e^v`.
pub(crate) fn green_strip(u: Complex64, v: Complex64) -> f64 {
    (log_abs_expm1(u - v.conj()) - log_abs_expm1(u - v)) / (2.0 * PI)
}
