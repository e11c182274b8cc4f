//! Walk-on-spheres estimates of harmonic measure and of balayage masses
//! `ν(∂Ω ∩ B_r(0))` on model domains with a corner or cusp at the origin.
//!
//! Walks are grouped into fixed-size blocks. Block `k` of stratum `s` draws
//! from a ChaCha stream keyed by `(seed, s, k)`, so results do not depend
//! on how blocks are spread over worker threads.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::TacnodeGeometry;
use crate::quadrature::integrate_1d;

pub const BLOCK_SIZE: usize = 1024;
pub const DEFAULT_STEP_CAP: u64 = 1_000_000;
pub const DEFAULT_EPS_REL: f64 = 1e-3;
/// Capped walks above this fraction flag the estimate.
pub const CAPPED_FLAG_FRACTION: f64 = 1e-3;
/// Largest relative standard error accepted for a rate fit.
pub const MAX_REL_STDERR: f64 = 0.05;
/// Minimum span of a rate-fit grid, in decades.
pub const MIN_GRID_DECADES: f64 = 1.25;
/// Largest number of pending clones per starting point.
const MAX_CLONES: usize = 4096;
/// Largest clone count at a single level crossing.
const MAX_SPLIT: u32 = 8;

/// Cusp `{0 < |z| < ρ, 0 < arg z − start < a |z|^d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CuspWedge {
    pub d: f64,
    pub a_coef: f64,
    pub rho: f64,
    #[serde(default)]
    pub start: f64,
}

/// Corner `{0 < |z| < ρ, 0 < arg z − start < πα}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CornerWedge {
    pub alpha: f64,
    pub rho: f64,
    #[serde(default)]
    pub start: f64,
}

/// One angular component of a domain meeting the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sector {
    Cusp(CuspWedge),
    Corner(CornerWedge),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelBoundaryDomain {
    Tacnode(TacnodeGeometry),
    CuspWedge(CuspWedge),
    CornerWedge(CornerWedge),
    MultiWedge {
        components: Vec<Sector>,
    },
    /// `|z − center| < radius`; used for exactness checks.
    Disk {
        center: [f64; 2],
        radius: f64,
    },
}

/// `|z − center|^{2b−2} d²z` times `normalization`. The model domains put
/// their singular point at the origin, so `center` must be 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerLawMeasure {
    pub b: f64,
    #[serde(default)]
    pub center: [f64; 2],
    #[serde(default = "one")]
    pub normalization: f64,
}

fn one() -> f64 {
    1.0
}

impl PowerLawMeasure {
    pub fn new(b: f64) -> Result<Self> {
        Self::with_normalization(b, 1.0)
    }

    pub fn with_normalization(b: f64, normalization: f64) -> Result<Self> {
        if !(b > 0.0 && b.is_finite() && normalization > 0.0) {
            return Err(Error::Domain(format!(
                "measure needs b > 0 and positive normalization, got b = {b}"
            )));
        }
        Ok(Self {
            b,
            center: [0.0, 0.0],
            normalization,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.center != [0.0, 0.0] {
            return Err(Error::Spec(
                "the measure must be centred at the origin".into(),
            ));
        }
        Self::with_normalization(self.b, self.normalization).map(|_| ())
    }

    /// The area measure `d²z/π`.
    pub fn area_over_pi() -> Self {
        Self {
            b: 1.0,
            center: [0.0, 0.0],
            normalization: 1.0 / PI,
        }
    }
}

fn wrap_angle(x: f64) -> f64 {
    x.rem_euclid(2.0 * PI)
}

/// Distance from `p` to the segment from 0 to `len` on the real axis.
fn segment_distance(p: Complex64, len: f64) -> f64 {
    if p.re <= 0.0 {
        p.norm()
    } else if p.re >= len {
        (p - len).norm()
    } else {
        p.im.abs()
    }
}

impl Sector {
    fn validate(&self) -> Result<()> {
        match *self {
            Sector::Cusp(w) => {
                if !(w.d > 0.0 && w.a_coef > 0.0 && w.rho > 0.0) {
                    return Err(Error::Spec("cusp wedge needs d, a_coef, rho > 0".into()));
                }
                if w.a_coef * w.rho.powf(w.d) >= FRAC_PI_2 {
                    return Err(Error::Spec(format!(
                        "cusp wedge needs a_coef·rho^d < π/2, got {}",
                        w.a_coef * w.rho.powf(w.d)
                    )));
                }
            }
            Sector::Corner(w) => {
                if !(w.alpha > 0.0 && w.alpha <= 2.0 && w.rho > 0.0) {
                    return Err(Error::Spec(
                        "corner wedge needs alpha in (0, 2] and rho > 0".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn rho(&self) -> f64 {
        match self {
            Sector::Cusp(w) => w.rho,
            Sector::Corner(w) => w.rho,
        }
    }

    fn start(&self) -> f64 {
        match self {
            Sector::Cusp(w) => w.start,
            Sector::Corner(w) => w.start,
        }
    }

    /// Angular width `Θ(R)` of the sector on the circle `|z| = R`.
    pub fn width(&self, radius: f64) -> f64 {
        match self {
            Sector::Cusp(w) => w.a_coef * radius.powf(w.d),
            Sector::Corner(w) => PI * w.alpha,
        }
    }

    fn max_width(&self) -> f64 {
        self.width(self.rho())
    }

    fn local(&self, z: Complex64) -> (Complex64, f64, f64) {
        let p = z * Complex64::from_polar(1.0, -self.start());
        (p, p.norm(), wrap_angle(p.arg()))
    }

    pub fn contains(&self, z: Complex64) -> bool {
        let (_, r, psi) = self.local(z);
        r > 0.0 && r < self.rho() && psi > 0.0 && psi < self.width(r)
    }

    /// Lower bound on the distance to the sector boundary; `≤ 0` outside.
    fn distance(&self, z: Complex64) -> f64 {
        let (p, r, psi) = self.local(z);
        if !(r > 0.0 && r < self.rho() && psi > 0.0 && psi < self.width(r)) {
            return 0.0;
        }
        let base = segment_distance(p, self.rho()).min(self.rho() - r);
        match *self {
            Sector::Corner(w) => {
                let q = p * Complex64::from_polar(1.0, -PI * w.alpha);
                base.min(segment_distance(q, w.rho))
            }
            Sector::Cusp(w) => {
                // A ball B(z, s) lies under the curve arg = a|w|^d as soon as
                // ψ + asin(s/R) ≤ a (R − s)^d.
                let clear = |s: f64| w.a_coef * (r - s).powf(w.d) - psi - (s / r).min(1.0).asin();
                if clear(base) >= 0.0 {
                    return base;
                }
                let (mut lo, mut hi) = (0.0, base);
                for _ in 0..48 {
                    let mid = 0.5 * (lo + hi);
                    if clear(mid) >= 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-9 * hi {
                        break;
                    }
                }
                lo
            }
        }
    }

    /// `μ(sector ∩ {R1 < |z| < R2})` for `|z|^{2b−2} d²z`.
    fn shell_mass(&self, b: f64, r1: f64, r2: f64) -> f64 {
        match *self {
            Sector::Cusp(w) => {
                let e = 2.0 * b + w.d;
                w.a_coef * (r2.powf(e) - r1.powf(e)) / e
            }
            Sector::Corner(w) => PI * w.alpha * (r2.powf(2.0 * b) - r1.powf(2.0 * b)) / (2.0 * b),
        }
    }

    fn sample_shell<R: Rng>(&self, b: f64, r1: f64, r2: f64, rng: &mut R) -> Complex64 {
        let e = match *self {
            Sector::Cusp(w) => 2.0 * b + w.d,
            Sector::Corner(_) => 2.0 * b,
        };
        let (l1, l2) = (r1.powf(e), r2.powf(e));
        let u: f64 = rng.gen();
        let r = (l1 + u * (l2 - l1)).powf(1.0 / e);
        let psi = rng.gen::<f64>() * self.width(r);
        Complex64::from_polar(r, psi + self.start())
    }

    /// Clone counts for walks crossing `|z| = r 2^l` inwards, `l = 0, 1, …`,
    /// chosen so that a crossing from `r 2^{l+1}` is roughly self-replacing.
    fn split_factors(&self, r: f64) -> Vec<u32> {
        let levels = ((self.rho() / r).log2().ceil().max(0.0) as usize) + 1;
        (0..levels)
            .map(|l| {
                let lo = r * 2f64.powi(l as i32);
                let q = (-PI * self.extremal_integral(lo, 2.0 * lo)).exp();
                (1.0 / q).round().clamp(1.0, MAX_SPLIT as f64) as u32
            })
            .collect()
    }

    /// `∫_r^{R0} ds / (s Θ(s))`.
    fn extremal_integral(&self, r: f64, r0: f64) -> f64 {
        match *self {
            Sector::Cusp(w) => (r.powf(-w.d) - r0.powf(-w.d)) / (w.a_coef * w.d),
            Sector::Corner(w) => (r0 / r).ln() / (PI * w.alpha),
        }
    }
}

/// Outcome tallies of a batch of walks. `sum` and `sum_sq` accumulate the
/// per-start score, which is the total weight of hitting clones.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Tally {
    starts: u64,
    sum: f64,
    sum_sq: f64,
    walks: u64,
    capped: u64,
}

impl Tally {
    fn merge(self, other: Tally) -> Tally {
        Tally {
            starts: self.starts + other.starts,
            sum: self.sum + other.sum,
            sum_sq: self.sum_sq + other.sum_sq,
            walks: self.walks + other.walks,
            capped: self.capped + other.capped,
        }
    }

    fn mean(&self) -> f64 {
        self.sum / self.starts.max(1) as f64
    }

    /// Variance of the mean.
    fn mean_variance(&self) -> f64 {
        let n = self.starts.max(1) as f64;
        let m = self.mean();
        ((self.sum_sq / n - m * m).max(0.0)) / n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub walks: u64,
    pub capped: u64,
    /// More than 0.1% of walks hit the step cap.
    pub flagged: bool,
}

impl McEstimate {
    pub fn capped_fraction(&self) -> f64 {
        if self.walks == 0 {
            0.0
        } else {
            self.capped as f64 / self.walks as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_walks: usize,
    pub seed: u64,
    /// Absorption shell as a fraction of the target radius.
    pub eps_rel: f64,
    pub step_cap: u64,
}

impl McParams {
    pub fn new(n_walks: usize, seed: u64) -> Self {
        Self {
            n_walks,
            seed,
            eps_rel: DEFAULT_EPS_REL,
            step_cap: DEFAULT_STEP_CAP,
        }
    }
}

fn block_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn stream_id(stratum: u64, block: u64) -> u64 {
    (stratum << 40) | block
}

impl ModelBoundaryDomain {
    pub fn validate(&self) -> Result<()> {
        match self {
            ModelBoundaryDomain::Tacnode(g) => {
                TacnodeGeometry::new(g.a(), g.c())?;
            }
            ModelBoundaryDomain::CuspWedge(w) => Sector::Cusp(*w).validate()?,
            ModelBoundaryDomain::CornerWedge(w) => Sector::Corner(*w).validate()?,
            ModelBoundaryDomain::MultiWedge { components } => {
                if components.is_empty() {
                    return Err(Error::Spec(
                        "multi-wedge needs at least one component".into(),
                    ));
                }
                for s in components {
                    s.validate()?;
                }
                let mut spans: Vec<(f64, f64)> = components
                    .iter()
                    .map(|s| (wrap_angle(s.start()), s.max_width()))
                    .collect();
                spans.sort_by(|x, y| x.0.total_cmp(&y.0));
                for j in 0..spans.len() {
                    let (s0, w0) = spans[j];
                    let next = if j + 1 < spans.len() {
                        spans[j + 1].0
                    } else {
                        spans[0].0 + 2.0 * PI
                    };
                    if s0 + w0 > next || (spans.len() == 1 && w0 > 2.0 * PI) {
                        return Err(Error::Spec("multi-wedge components overlap".into()));
                    }
                }
            }
            ModelBoundaryDomain::Disk { radius, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::Spec("disk radius must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: ModelBoundaryDomain = serde_json::from_str(text)?;
        d.validate()?;
        Ok(d)
    }

    fn sectors(&self) -> Vec<Sector> {
        match self {
            ModelBoundaryDomain::CuspWedge(w) => vec![Sector::Cusp(*w)],
            ModelBoundaryDomain::CornerWedge(w) => vec![Sector::Corner(*w)],
            ModelBoundaryDomain::MultiWedge { components } => components.clone(),
            _ => Vec::new(),
        }
    }

    pub fn contains(&self, z: Complex64) -> bool {
        match self {
            ModelBoundaryDomain::Tacnode(g) => g.contains(z),
            ModelBoundaryDomain::Disk { center, radius } => {
                (z - Complex64::new(center[0], center[1])).norm() < *radius
            }
            _ => self.sectors().iter().any(|s| s.contains(z)),
        }
    }

    /// Raw distance bound; zero or negative outside the domain.
    fn raw_distance(&self, z: Complex64) -> f64 {
        match self {
            ModelBoundaryDomain::Tacnode(g) => {
                (g.c() - (z - g.outer_center()).norm()).min((z - g.inner_center()).norm() - g.a())
            }
            ModelBoundaryDomain::Disk { center, radius } => {
                radius - (z - Complex64::new(center[0], center[1])).norm()
            }
            ModelBoundaryDomain::CuspWedge(w) => Sector::Cusp(*w).distance(z),
            ModelBoundaryDomain::CornerWedge(w) => Sector::Corner(*w).distance(z),
            ModelBoundaryDomain::MultiWedge { components } => {
                components.iter().map(|s| s.distance(z)).fold(0.0, f64::max)
            }
        }
    }

    /// Certified lower bound on the distance from `z` to the boundary.
    pub fn distance_to_boundary(&self, z: Complex64) -> Result<f64> {
        let d = self.raw_distance(z);
        if d > 0.0 && self.contains(z) {
            Ok(d)
        } else {
            Err(Error::Domain(format!("point {z} is not inside the domain")))
        }
    }

    /// Outer scale of the domain: `ρ` for wedges, `2c` for the tacnode.
    pub fn outer_radius(&self) -> f64 {
        match self {
            ModelBoundaryDomain::Tacnode(g) => 2.0 * g.c(),
            ModelBoundaryDomain::Disk { center, radius } => {
                Complex64::new(center[0], center[1]).norm() + radius
            }
            _ => self.sectors().iter().map(|s| s.rho()).fold(0.0, f64::max),
        }
    }

    /// Walks from `start` and its clones; returns the hitting weight.
    fn walk<R: Rng>(
        &self,
        start: Complex64,
        target_r: f64,
        eps: f64,
        cap: u64,
        splits: &[u32],
        rng: &mut R,
        t: &mut Tally,
    ) -> f64 {
        let level = |z: Complex64| -> usize {
            let x = z.norm() / target_r;
            if x < 1.0 {
                0
            } else {
                (x.log2().floor() as usize + 1).min(splits.len())
            }
        };
        let mut score = 0.0;
        let mut stack = vec![(start, 1.0, level(start))];
        while let Some((mut z, weight, mut lowest)) = stack.pop() {
            t.walks += 1;
            let mut steps = 0;
            loop {
                if steps == cap {
                    t.capped += 1;
                    break;
                }
                steps += 1;
                let d = self.raw_distance(z);
                if d < eps {
                    if z.norm() < target_r {
                        score += weight;
                    }
                    break;
                }
                z += Complex64::from_polar(d, rng.gen::<f64>() * 2.0 * PI);
                let l = level(z);
                if l < lowest {
                    let copies: u32 = splits[l..lowest].iter().product();
                    lowest = l;
                    if copies > 1 && stack.len() < MAX_CLONES {
                        let w = weight / copies as f64;
                        for _ in 1..copies {
                            stack.push((z, w, l));
                        }
                        // continue this walk as one of the copies
                        stack.push((z, w, l));
                        break;
                    }
                }
            }
        }
        score
    }

    #[allow(clippy::too_many_arguments)]
    fn run_block<R: Rng, S: FnMut(&mut R) -> Complex64>(
        &self,
        n: usize,
        target_r: f64,
        eps: f64,
        cap: u64,
        splits: &[u32],
        rng: &mut R,
        mut start: S,
    ) -> Tally {
        let mut t = Tally::default();
        for _ in 0..n {
            let z = start(rng);
            let x = self.walk(z, target_r, eps, cap, splits, rng, &mut t);
            t.starts += 1;
            t.sum += x;
            t.sum_sq += x * x;
        }
        t
    }

    fn run_stratum<S>(
        &self,
        stratum: u64,
        n: usize,
        target_r: f64,
        params: &McParams,
        splits: &[u32],
        start: S,
    ) -> Tally
    where
        S: Fn(&mut ChaCha8Rng) -> Complex64 + Sync,
    {
        let blocks = n.div_ceil(BLOCK_SIZE);
        let eps = params.eps_rel * target_r;
        let tallies: Vec<Tally> = (0..blocks)
            .into_par_iter()
            .map(|k| {
                let mut rng = block_rng(params.seed, stream_id(stratum, k as u64));
                let len = BLOCK_SIZE.min(n - k * BLOCK_SIZE);
                self.run_block(
                    len,
                    target_r,
                    eps,
                    params.step_cap,
                    splits,
                    &mut rng,
                    &start,
                )
            })
            .collect();
        tallies.into_iter().fold(Tally::default(), Tally::merge)
    }
}

/// Harmonic measure at `z` of `∂Ω ∩ {|w| < r}`, by walk on spheres.
pub fn harmonic_measure_wos(
    domain: &ModelBoundaryDomain,
    z: Complex64,
    r: f64,
    params: &McParams,
) -> Result<McEstimate> {
    domain.validate()?;
    domain.distance_to_boundary(z)?;
    if !(r > 0.0) || params.n_walks == 0 || !(params.eps_rel > 0.0) {
        return Err(Error::Domain(
            "harmonic measure needs r > 0, eps > 0 and at least one walk".into(),
        ));
    }
    let t = domain.run_stratum(0, params.n_walks, r, params, &[], |_| z);
    Ok(McEstimate {
        estimate: t.mean(),
        stderr: t.mean_variance().sqrt(),
        walks: t.walks,
        capped: t.capped,
        flagged: t.capped as f64 > CAPPED_FLAG_FRACTION * t.walks as f64,
    })
}

/// A radial shell of one angular component, with its `μ`-mass.
#[derive(Debug, Clone, Copy)]
struct Stratum {
    sector: Option<Sector>,
    r1: f64,
    r2: f64,
    mass: f64,
    prior: f64,
}

fn shell_edges(r: f64, outer: f64) -> Vec<f64> {
    let mut edges = vec![0.0, 0.25 * r, 0.5 * r, r.min(outer)];
    let mut x = r;
    while x < outer {
        x = (x * 1.5).min(outer);
        if outer - x < 1e-3 * r {
            x = outer;
        }
        edges.push(x);
    }
    edges.dedup();
    edges
}

fn tacnode_width(g: &TacnodeGeometry, radius: f64) -> f64 {
    if radius <= 2.0 * g.a() {
        2.0 * ((radius / (2.0 * g.a())).asin() - (radius / (2.0 * g.c())).asin())
    } else {
        PI - 2.0 * (radius / (2.0 * g.c())).min(1.0).asin()
    }
}

fn sample_tacnode_shell<R: Rng>(g: &TacnodeGeometry, r1: f64, r2: f64, rng: &mut R) -> Complex64 {
    let peak = tacnode_width(g, r2.min(2.0 * g.a()).max(r1));
    loop {
        let u: f64 = rng.gen();
        let radius = (r1 * r1 + u * (r2 * r2 - r1 * r1)).sqrt();
        let w = tacnode_width(g, radius);
        if rng.gen::<f64>() * peak > w {
            continue;
        }
        let lo = (radius / (2.0 * g.c())).min(1.0).asin();
        let phi = if radius <= 2.0 * g.a() {
            let half = 0.5 * w;
            let x = rng.gen::<f64>() * w;
            if x < half {
                lo + x
            } else {
                PI - lo - (x - half)
            }
        } else {
            lo + rng.gen::<f64>() * w
        };
        let z = Complex64::from_polar(radius, phi);
        if g.contains(z) {
            return z;
        }
    }
}

/// `(8/π) exp(−π ∫_r^{R0} ds/(s Θ(s)))` for the component `sector`.
pub fn extremal_length_bound(sector: &Sector, r: f64, r0: f64) -> f64 {
    if r >= r0 {
        return 1.0;
    }
    (8.0 / PI * (-PI * sector.extremal_integral(r, r0)).exp()).min(1.0)
}

/// The same bound for one cusp of the tacnode, with the integral done by
/// quadrature; `R0` is clipped to `2a`.
pub fn tacnode_extremal_length_bound(g: &TacnodeGeometry, r: f64, r0: f64) -> Result<f64> {
    let r0 = r0.min(2.0 * g.a());
    if r >= r0 {
        return Ok(1.0);
    }
    let q = integrate_1d(|s| 1.0 / (s * 0.5 * tacnode_width(g, s)), r, r0, 1e-10)?;
    Ok((8.0 / PI * (-PI * q.value).exp()).min(1.0))
}

/// Constant `C` with `Θ(r) ≤ κ r (1 + C r)` on `(0, 2a]`, `κ` the cusp
/// coefficient, for one cusp of the tacnode.
pub fn tacnode_arc_bound_constant(g: &TacnodeGeometry) -> f64 {
    let kappa = g.cusp_coefficient();
    let n = 4000;
    (1..=n)
        .map(|j| {
            let r = 2.0 * g.a() * j as f64 / n as f64;
            (0.5 * tacnode_width(g, r) / (kappa * r) - 1.0) / r
        })
        .fold(0.0, f64::max)
}

fn strata(domain: &ModelBoundaryDomain, b: f64, r: f64) -> Result<Vec<Stratum>> {
    let mut out = Vec::new();
    match domain {
        ModelBoundaryDomain::Tacnode(g) => {
            if (b - 1.0).abs() > 0.0 {
                return Err(Error::Spec(
                    "tacnode balayage sampling supports b = 1 only".into(),
                ));
            }
            let edges = shell_edges(r, 2.0 * g.c());
            for w in edges.windows(2) {
                let mass = integrate_1d(|s| s * tacnode_width(g, s), w[0], w[1], 1e-14)?.value;
                let prior = if w[0] < r {
                    1.0
                } else {
                    tacnode_extremal_length_bound(g, r, w[0])?
                };
                out.push(Stratum {
                    sector: None,
                    r1: w[0],
                    r2: w[1],
                    mass,
                    prior,
                });
            }
        }
        ModelBoundaryDomain::Disk { .. } => {
            return Err(Error::Spec(
                "balayage sampling is not defined for the test disk".into(),
            ));
        }
        _ => {
            for s in domain.sectors() {
                for w in shell_edges(r, s.rho()).windows(2) {
                    let prior = if w[0] < r {
                        1.0
                    } else {
                        extremal_length_bound(&s, r, w[0])
                    };
                    out.push(Stratum {
                        sector: Some(s),
                        r1: w[0],
                        r2: w[1],
                        mass: s.shell_mass(b, w[0], w[1]),
                        prior,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// `ν(∂Ω ∩ B_r(0))` for the balayage of `measure`, by stratified sampling of
/// starting points and walk on spheres. `stratum_offset` separates the RNG
/// streams of different radii that share a seed.
pub fn balayage_ball_mass_mc(
    domain: &ModelBoundaryDomain,
    measure: &PowerLawMeasure,
    r: f64,
    params: &McParams,
) -> Result<McEstimate> {
    balayage_ball_mass_mc_streams(domain, measure, r, params, 0)
}

fn balayage_ball_mass_mc_streams(
    domain: &ModelBoundaryDomain,
    measure: &PowerLawMeasure,
    r: f64,
    params: &McParams,
    stratum_offset: u64,
) -> Result<McEstimate> {
    domain.validate()?;
    measure.validate()?;
    if !(r > 0.0 && r <= domain.outer_radius()) {
        return Err(Error::Domain(format!(
            "target radius must lie in (0, {}], got {r}",
            domain.outer_radius()
        )));
    }
    if params.n_walks == 0 || !(params.eps_rel > 0.0) {
        return Err(Error::Domain("need at least one walk and eps > 0".into()));
    }
    let list = strata(domain, measure.b, r)?;
    // Split walks have a score spread proportional to the hit probability,
    // plain walks to its square root.
    let weights: Vec<f64> = list
        .iter()
        .map(|s| match s.sector {
            Some(_) => s.mass * s.prior,
            None => s.mass * s.prior.sqrt(),
        })
        .collect();
    let total_weight: f64 = weights.iter().sum();
    let floor = (params.n_walks / (20 * list.len())).max(32);
    let mut estimate = 0.0;
    let mut variance = 0.0;
    let mut all = Tally::default();
    for (j, s) in list.iter().enumerate() {
        let n = ((params.n_walks as f64 * weights[j] / total_weight).round() as usize).max(floor);
        let id = stratum_offset + j as u64;
        let t = match s.sector {
            Some(sec) => {
                let splits = sec.split_factors(r);
                domain.run_stratum(id, n, r, params, &splits, |rng| {
                    sec.sample_shell(measure.b, s.r1, s.r2, rng)
                })
            }
            None => {
                let ModelBoundaryDomain::Tacnode(g) = domain else {
                    unreachable!("only the tacnode has sectorless strata")
                };
                domain.run_stratum(id, n, r, params, &[], |rng| {
                    sample_tacnode_shell(g, s.r1, s.r2, rng)
                })
            }
        };
        let m = s.mass * measure.normalization;
        estimate += m * t.mean();
        variance += m * m * t.mean_variance();
        if t.sum == 0.0 {
            // no hits: fall back on the prior bound spread over the walks
            variance += (m * s.prior.min(1.0) / n as f64).powi(2);
        }
        all = all.merge(t);
    }
    Ok(McEstimate {
        estimate,
        stderr: variance.sqrt(),
        walks: all.walks,
        capped: all.capped,
        flagged: all.capped as f64 > CAPPED_FLAG_FRACTION * all.walks as f64,
    })
}

/// Predicted small-`r` behaviour `ν(B_r) ≍ r^exponent (log 1/r)^{log_power}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLaw {
    pub exponent: f64,
    pub log_factor: bool,
    /// Leading coefficient when the law is sharp (pure cusps).
    pub coefficient: Option<f64>,
}

fn sector_law(s: &Sector, b: f64) -> RateLaw {
    match *s {
        Sector::Cusp(w) => RateLaw {
            exponent: 2.0 * b + w.d,
            log_factor: false,
            coefficient: Some(w.a_coef / (2.0 * b + w.d)),
        },
        Sector::Corner(w) => {
            let inv = 1.0 / w.alpha;
            let two_b = 2.0 * b;
            if (two_b - inv).abs() < 1e-12 {
                RateLaw {
                    exponent: two_b,
                    log_factor: true,
                    coefficient: None,
                }
            } else {
                RateLaw {
                    exponent: two_b.min(inv),
                    log_factor: false,
                    coefficient: None,
                }
            }
        }
    }
}

/// Expected rate law for `domain` and the exponent `b` of the measure.
pub fn expected_rate(domain: &ModelBoundaryDomain, b: f64) -> Result<RateLaw> {
    match domain {
        ModelBoundaryDomain::Tacnode(g) => {
            // two cusps of order 1 and coefficient (c − a)/(2ac)
            let k = g.cusp_coefficient();
            Ok(RateLaw {
                exponent: 2.0 * b + 1.0,
                log_factor: false,
                coefficient: Some(2.0 * k / (2.0 * b + 1.0) / PI),
            })
        }
        ModelBoundaryDomain::Disk { .. } => {
            Err(Error::Spec("no rate law for the test disk".into()))
        }
        _ => {
            let laws: Vec<RateLaw> = domain.sectors().iter().map(|s| sector_law(s, b)).collect();
            let best = laws
                .iter()
                .map(|l| l.exponent)
                .fold(f64::INFINITY, f64::min);
            let winners: Vec<&RateLaw> = laws
                .iter()
                .filter(|l| (l.exponent - best).abs() < 1e-12)
                .collect();
            let log_factor = winners.iter().any(|l| l.log_factor);
            let coefficient = if log_factor {
                None
            } else {
                winners.iter().map(|l| l.coefficient).sum::<Option<f64>>()
            };
            Ok(RateLaw {
                exponent: best,
                log_factor,
                coefficient,
            })
        }
    }
}

/// Bounds `(lower, upper)` on `ν(B_r)/r^{2b}` at a corner of opening `πα`
/// with `2b < 1/α`.
pub fn corner_sandwich(alpha: f64, b: f64) -> Result<(f64, f64)> {
    if !(2.0 * b < 1.0 / alpha) {
        return Err(Error::Domain("corner sandwich needs 2b < 1/α".into()));
    }
    let lower = (PI * alpha * b).tan() / (2.0 * b * b);
    let upper = PI * alpha / (2.0 * b) * (1.0 + 16.0 * b / (PI * (1.0 / alpha - 2.0 * b)));
    Ok((lower, upper))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassPoint {
    pub r: f64,
    pub mass: f64,
    pub stderr: f64,
    pub capped_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFitResult {
    pub exponent: f64,
    pub coefficient: f64,
    pub stderr_exponent: f64,
    pub r_grid: Vec<f64>,
    pub masses: Vec<MassPoint>,
    pub expected: RateLaw,
    /// Weighted residual sum of squares of the power-law fit in log space.
    pub power_residual: f64,
    /// Same for the fixed-exponent model `C r^{2b} log(1/r)`.
    pub log_model_residual: f64,
    /// Every mass reached the relative precision required for the fit.
    pub precise: bool,
}

impl RateFitResult {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["r", "mass", "stderr", "capped_fraction"])?;
        for m in &self.masses {
            wr.write_record([
                m.r.to_string(),
                m.mass.to_string(),
                m.stderr.to_string(),
                m.capped_fraction.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `n` log-spaced radii from `r_min` to `r_max`.
pub fn log_grid(r_min: f64, r_max: f64, n: usize) -> Result<Vec<f64>> {
    if n < 2 || !(r_min > 0.0 && r_min < r_max) {
        return Err(Error::Domain(format!(
            "log grid needs n >= 2 and 0 < r_min < r_max, got {n}, {r_min}, {r_max}"
        )));
    }
    let (l0, l1) = (r_min.ln(), r_max.ln());
    Ok((0..n)
        .map(|j| (l0 + (l1 - l0) * j as f64 / (n - 1) as f64).exp())
        .collect())
}

/// Weighted least squares `y = α + β x`; returns `(α, β, se(β), rss)`.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64, f64) {
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - mx) * (a - mx)).sum();
    let sxy: f64 = (0..x.len()).map(|j| w[j] * (x[j] - mx) * (y[j] - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = (0..x.len())
        .map(|j| w[j] * (y[j] - icpt - slope * x[j]).powi(2))
        .sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    // scale by the reduced chi-square when it exceeds one
    let se = (rss / dof).max(1.0).sqrt() / sxx.sqrt();
    (icpt, slope, se, rss)
}

/// Estimates the masses on `r_grid` and fits the vanishing exponent.
pub fn fit_vanishing_rate(
    domain: &ModelBoundaryDomain,
    measure: &PowerLawMeasure,
    r_grid: &[f64],
    params: &McParams,
) -> Result<RateFitResult> {
    if r_grid.len() < 3 {
        return Err(Error::Domain(format!(
            "rate fit needs at least 3 radii, got {}",
            r_grid.len()
        )));
    }
    if r_grid.windows(2).any(|w| !(w[0] < w[1])) || !(r_grid[0] > 0.0) {
        return Err(Error::Domain(
            "radii must be positive and strictly increasing".into(),
        ));
    }
    let decades = (r_grid[r_grid.len() - 1] / r_grid[0]).log10();
    if decades < MIN_GRID_DECADES {
        return Err(Error::Domain(format!(
            "grid spans {decades:.3} decades, need at least {MIN_GRID_DECADES}"
        )));
    }
    let expected = expected_rate(domain, measure.b)?;
    let mut masses = Vec::with_capacity(r_grid.len());
    for (j, &r) in r_grid.iter().enumerate() {
        let est = balayage_ball_mass_mc_streams(domain, measure, r, params, (j as u64 + 1) << 16)?;
        masses.push(MassPoint {
            r,
            mass: est.estimate,
            stderr: est.stderr,
            capped_fraction: est.capped_fraction(),
        });
    }
    if masses.iter().any(|m| !(m.mass > 0.0)) {
        return Err(Error::Insufficient(
            "a mass estimate is zero; increase the walk budget".into(),
        ));
    }
    let precise = masses
        .iter()
        .all(|m| m.stderr <= MAX_REL_STDERR * m.mass && m.capped_fraction <= CAPPED_FLAG_FRACTION);
    let x: Vec<f64> = masses.iter().map(|m| m.r.ln()).collect();
    let y: Vec<f64> = masses.iter().map(|m| m.mass.ln()).collect();
    let w: Vec<f64> = masses
        .iter()
        .map(|m| {
            let rel = (m.stderr / m.mass).max(1e-6);
            1.0 / (rel * rel)
        })
        .collect();
    let (_, slope, se, rss) = weighted_line(&x, &y, &w);

    // Coefficient from the two smallest radii at the predicted exponent.
    let coefficient = {
        let e = expected.exponent;
        let num: f64 = (0..2).map(|j| w[j] * (y[j] - e * x[j])).sum();
        (num / (w[0] + w[1])).exp()
    };

    // log model: ln m = ln C + 2b ln r + ln ln(1/r), one free parameter.
    let two_b = 2.0 * measure.b;
    let log_model_residual = if r_grid.iter().all(|&r| r < 1.0) {
        let z: Vec<f64> = (0..x.len())
            .map(|j| y[j] - two_b * x[j] - (-x[j]).ln())
            .collect();
        let sw: f64 = w.iter().sum();
        let lc = (0..z.len()).map(|j| w[j] * z[j]).sum::<f64>() / sw;
        (0..z.len()).map(|j| w[j] * (z[j] - lc).powi(2)).sum()
    } else {
        f64::INFINITY
    };
    Ok(RateFitResult {
        exponent: slope,
        coefficient,
        stderr_exponent: se,
        r_grid: r_grid.to_vec(),
        masses,
        expected,
        power_residual: rss,
        log_model_residual,
        precise,
    })
}
