//! Metropolis sampler for the two-dimensional Coulomb gas
//! `∏_{j<k} |z_j − z_k|^β ∏_j e^{−nβQ(z_j)/2}` with the elliptic potential
//! `Q(z) = (|z|² − τ Re z²)/(1 − τ²)`, optionally conditioned on an empty
//! tacnodal hole.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{density, DEFAULT_TOL};
use crate::error::{Error, Result};
use crate::geometry::{Side, TacnodeGeometry};
use crate::special::{gap_constant_c, HoleRateInput};

/// One move in this many is re-evaluated from scratch.
pub const AUDIT_INTERVAL: u64 = 10_000;
pub const AUDIT_TOLERANCE: f64 = 1e-8;
const RESYNC_SWEEPS: u64 = 100;
const LANES: usize = 8;

/// The tacnodal region `z0 + e^{iθ0} Ω_{a,c}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    pub z0: [f64; 2],
    pub theta0: f64,
    pub geometry: TacnodeGeometry,
}

impl HoleSpec {
    pub fn new(z0: Complex64, theta0: f64, a: f64, c: f64) -> Result<Self> {
        Ok(Self {
            z0: [z0.re, z0.im],
            theta0,
            geometry: TacnodeGeometry::new(a, c)?,
        })
    }

    fn origin(&self) -> Complex64 {
        Complex64::new(self.z0[0], self.z0[1])
    }

    /// Coordinates in which the hole is the standard `Ω_{a,c}`.
    pub fn to_local(&self, z: Complex64) -> Complex64 {
        (z - self.origin()) * Complex64::from_polar(1.0, -self.theta0)
    }

    pub fn from_local(&self, u: Complex64) -> Complex64 {
        self.origin() + u * Complex64::from_polar(1.0, self.theta0)
    }

    pub fn contains(&self, z: Complex64) -> bool {
        self.geometry.contains(self.to_local(z))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasConfig {
    pub n: usize,
    pub beta: f64,
    pub tau: f64,
    pub hole: Option<HoleSpec>,
    pub sweeps: u64,
    pub burn_in: u64,
    /// Keep one configuration every `thin` sweeps after burn-in.
    pub thin: u64,
    /// Gaussian proposal scale; `1/√n` when absent.
    pub step_size: Option<f64>,
    pub seed: u64,
}

impl GasConfig {
    pub fn new(n: usize, beta: f64, tau: f64, sweeps: u64, seed: u64) -> Self {
        Self {
            n,
            beta,
            tau,
            hole: None,
            sweeps,
            burn_in: sweeps / 10,
            thin: 1,
            step_size: None,
            seed,
        }
    }

    pub fn step(&self) -> f64 {
        self.step_size.unwrap_or(1.0 / (self.n as f64).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Domain("the gas needs at least one particle".into()));
        }
        HoleRateInput::new(self.beta, self.tau, 1.0)?;
        if !(self.step() > 0.0) {
            return Err(Error::Domain("step size must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Domain("thinning interval must be at least 1".into()));
        }
        if self.burn_in > self.sweeps {
            return Err(Error::Domain("burn-in exceeds the number of sweeps".into()));
        }
        if let Some(h) = &self.hole {
            TacnodeGeometry::new(h.geometry.a(), h.geometry.c())?;
            check_hole_in_droplet(h, self.tau)?;
        }
        Ok(())
    }
}

/// Value of `x²/(1+τ)² + y²/(1−τ)²`; the droplet is where this is below 1.
fn ellipse_level(z: Complex64, tau: f64) -> f64 {
    (z.re / (1.0 + tau)).powi(2) + (z.im / (1.0 - tau)).powi(2)
}

/// Errors unless the closed hole lies strictly inside the droplet.
pub fn check_hole_in_droplet(hole: &HoleSpec, tau: f64) -> Result<()> {
    let g = &hole.geometry;
    let centre = hole.from_local(g.outer_center());
    let level = |t: f64| ellipse_level(centre + Complex64::from_polar(g.c(), t), tau);
    let samples = 4096;
    let step = 2.0 * PI / samples as f64;
    let best = (0..samples)
        .map(|j| j as f64 * step)
        .max_by(|x, y| level(*x).total_cmp(&level(*y)))
        .unwrap_or(0.0);
    // golden-section refinement of the maximum
    let (mut lo, mut hi) = (best - step, best + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let x1 = hi - r * (hi - lo);
        let x2 = lo + r * (hi - lo);
        if level(x1) > level(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let peak = level(0.5 * (lo + hi)).max(level(best));
    if peak >= 1.0 - 1e-9 {
        return Err(Error::Domain(format!(
            "the hole must lie strictly inside the elliptic droplet (max level {peak})"
        )));
    }
    Ok(())
}

pub fn potential_q(z: Complex64, tau: f64) -> f64 {
    (z.norm_sqr() - tau * (z * z).re) / (1.0 - tau * tau)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasState {
    pub points: Vec<Complex64>,
    pub log_weight: f64,
}

/// `β Σ_{j<k} log|z_j − z_k| − (nβ/2) Σ_j Q(z_j)`; `−∞` for coincident points.
pub fn log_density(points: &[Complex64], beta: f64, tau: f64) -> f64 {
    let n = points.len();
    let mut pair = 0.0;
    for j in 0..n {
        for k in j + 1..n {
            let d = (points[j] - points[k]).norm_sqr();
            if d == 0.0 {
                return f64::NEG_INFINITY;
            }
            pair += d.ln();
        }
    }
    let q: f64 = points.iter().map(|z| potential_q(*z, tau)).sum();
    0.5 * beta * pair - 0.5 * n as f64 * beta * q
}

/// Pulls the binary exponent out of a positive finite `x`.
fn split_exponent(x: f64, exponent: &mut i64) -> f64 {
    const MASK: u64 = 0x7ff << 52;
    let bits = x.to_bits();
    *exponent += ((bits & MASK) >> 52) as i64 - 1023;
    f64::from_bits((bits & !MASK) | (1023 << 52))
}

/// Particle positions in structure-of-arrays form for the pair sums.
struct Positions {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Positions {
    fn get(&self, j: usize) -> Complex64 {
        Complex64::new(self.x[j], self.y[j])
    }

    /// `Σ_k log(|new − z_k|²/|old − z_k|²)` over `k` in `range`, via lane
    /// products renormalised every few chunks.
    fn log_ratio_sum(
        &self,
        range: std::ops::Range<usize>,
        old: Complex64,
        new: Complex64,
    ) -> Option<f64> {
        let xs = &self.x[range.clone()];
        let ys = &self.y[range];
        let mut acc = [1.0f64; LANES];
        let mut exponent = 0i64;
        let mut xc = xs.chunks_exact(LANES);
        let mut yc = ys.chunks_exact(LANES);
        let mut count = 0;
        for (cx, cy) in (&mut xc).zip(&mut yc) {
            for l in 0..LANES {
                let (ax, ay) = (new.re - cx[l], new.im - cy[l]);
                let (bx, by) = (old.re - cx[l], old.im - cy[l]);
                acc[l] *= (ax * ax + ay * ay) / (bx * bx + by * by);
            }
            count += 1;
            if count % 16 == 0 {
                for a in acc.iter_mut() {
                    if !(a.is_finite() && *a > 0.0) {
                        return None;
                    }
                    *a = split_exponent(*a, &mut exponent);
                }
            }
        }
        let mut total = 1.0;
        for (&px, &py) in xc.remainder().iter().zip(yc.remainder()) {
            total *= (new - Complex64::new(px, py)).norm_sqr()
                / (old - Complex64::new(px, py)).norm_sqr();
        }
        if !(total.is_finite() && total > 0.0) {
            return None;
        }
        total = split_exponent(total, &mut exponent);
        for a in acc {
            if !(a.is_finite() && a > 0.0) {
                return None;
            }
            total = split_exponent(total * a, &mut exponent);
        }
        Some(total.ln() + exponent as f64 * std::f64::consts::LN_2)
    }

    fn log_ratio_exact(&self, skip: usize, old: Complex64, new: Complex64) -> f64 {
        (0..self.x.len())
            .filter(|&k| k != skip)
            .map(|k| {
                let p = self.get(k);
                (new - p).norm_sqr().ln() - (old - p).norm_sqr().ln()
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasSample {
    pub sweep: u64,
    pub points: Vec<Complex64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub proposals: u64,
    pub accepted: u64,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    pub hole_rejections: u64,
    pub audits: u64,
    pub max_audit_error: f64,
    /// Largest relative drift of the running log weight before a resync.
    pub max_weight_drift: f64,
    /// Thinned samples with a point inside the hole; always zero.
    pub hole_violations: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRun {
    pub samples: Vec<GasSample>,
    pub final_state: GasState,
    pub report: ChainReport,
}

fn initial_points<R: Rng>(config: &GasConfig, rng: &mut R) -> Vec<Complex64> {
    let (sx, sy) = (1.0 + config.tau, 1.0 - config.tau);
    let mut pts = Vec::with_capacity(config.n);
    while pts.len() < config.n {
        let z = Complex64::new(rng.gen_range(-sx..sx), rng.gen_range(-sy..sy));
        if ellipse_level(z, config.tau) < 1.0 && !config.hole.is_some_and(|h| h.contains(z)) {
            pts.push(z);
        }
    }
    pts
}

/// Runs one chain, handing every kept configuration to `observe`.
pub fn run_chain_with<F: FnMut(&GasSample)>(
    config: &GasConfig,
    stream: u64,
    mut observe: F,
) -> Result<(GasState, ChainReport)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let n = config.n;
    let (beta, tau) = (config.beta, config.tau);
    let step = config.step();
    let pts = initial_points(config, &mut rng);
    let mut pos = Positions {
        x: pts.iter().map(|z| z.re).collect(),
        y: pts.iter().map(|z| z.im).collect(),
    };
    let mut log_weight = log_density(&pts, beta, tau);
    let mut report = ChainReport::default();
    let mut post_proposals = 0u64;
    let mut post_accepted = 0u64;
    let field = 0.5 * n as f64 * beta;
    for sweep in 1..=config.sweeps {
        for j in 0..n {
            let old = pos.get(j);
            let dx: f64 = StandardNormal.sample(&mut rng);
            let dy: f64 = StandardNormal.sample(&mut rng);
            let new = old + Complex64::new(dx, dy) * step;
            let u: f64 = rng.gen();
            report.proposals += 1;
            let counted = sweep > config.burn_in;
            if counted {
                post_proposals += 1;
            }
            if config.hole.is_some_and(|h| h.contains(new)) {
                report.hole_rejections += 1;
                continue;
            }
            let pair = match (
                pos.log_ratio_sum(0..j, old, new),
                pos.log_ratio_sum(j + 1..n, old, new),
            ) {
                (Some(a), Some(b)) => a + b,
                _ => pos.log_ratio_exact(j, old, new),
            };
            let delta = 0.5 * beta * pair - field * (potential_q(new, tau) - potential_q(old, tau));
            if report.proposals % AUDIT_INTERVAL == 0 {
                let exact = 0.5 * beta * pos.log_ratio_exact(j, old, new)
                    - field * (potential_q(new, tau) - potential_q(old, tau));
                report.audits += 1;
                let err = (exact - delta).abs() / exact.abs().max(1.0);
                report.max_audit_error = report.max_audit_error.max(err);
            }
            if delta.is_nan() || u.ln() >= delta {
                continue;
            }
            pos.x[j] = new.re;
            pos.y[j] = new.im;
            log_weight += delta;
            report.accepted += 1;
            if counted {
                post_accepted += 1;
            }
        }
        if sweep % RESYNC_SWEEPS == 0 || sweep == config.sweeps {
            let pts: Vec<Complex64> = (0..n).map(|j| pos.get(j)).collect();
            let exact = log_density(&pts, beta, tau);
            let drift = (exact - log_weight).abs() / exact.abs().max(1.0);
            report.max_weight_drift = report.max_weight_drift.max(drift);
            log_weight = exact;
        }
        if sweep > config.burn_in && (sweep - config.burn_in) % config.thin == 0 {
            let sample = GasSample {
                sweep,
                points: (0..n).map(|j| pos.get(j)).collect(),
            };
            if let Some(h) = &config.hole {
                if sample.points.iter().any(|z| h.contains(*z)) {
                    report.hole_violations += 1;
                }
            }
            observe(&sample);
        }
    }
    report.acceptance_rate = if post_proposals > 0 {
        post_accepted as f64 / post_proposals as f64
    } else {
        0.0
    };
    if post_proposals > 0 && !(0.1..=0.7).contains(&report.acceptance_rate) {
        report.warnings.push(format!(
            "acceptance rate {:.3} outside [0.1, 0.7]; consider changing the step size",
            report.acceptance_rate
        ));
    }
    if report.max_audit_error > AUDIT_TOLERANCE {
        report.warnings.push(format!(
            "incremental log-density increments disagree with recomputation by {:e}",
            report.max_audit_error
        ));
    }
    let points = (0..n).map(|j| pos.get(j)).collect();
    Ok((GasState { points, log_weight }, report))
}

/// Runs one chain and keeps every thinned configuration.
pub fn run_chain(config: &GasConfig) -> Result<ChainRun> {
    let mut samples = Vec::new();
    let (final_state, report) = run_chain_with(config, 0, |s| samples.push(s.clone()))?;
    Ok(ChainRun {
        samples,
        final_state,
        report,
    })
}

/// Independent chains on separate RNG streams, returned in chain order.
pub fn run_chains(config: &GasConfig, chains: usize) -> Result<Vec<ChainRun>> {
    (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut samples = Vec::new();
            let (final_state, report) =
                run_chain_with(config, c as u64, |s| samples.push(s.clone()))?;
            Ok(ChainRun {
                samples,
                final_state,
                report,
            })
        })
        .collect()
}

/// Angular histograms of the points just outside each hole circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryProfile {
    pub shell_width: f64,
    pub bin_centers: Vec<f64>,
    /// Raw counts per bin, inner then outer.
    pub inner_counts: Vec<u64>,
    pub outer_counts: Vec<u64>,
    /// Counts expected from the flat droplet density alone, per bin.
    pub inner_background: Vec<f64>,
    pub outer_background: Vec<f64>,
    pub samples: u64,
}

/// Default shell width `3/√n` on the unit droplet scale.
pub fn default_shell_width(n: usize) -> f64 {
    3.0 / (n as f64).sqrt()
}

impl BoundaryProfile {
    pub fn new(hole: &HoleSpec, shell_width: f64, bins: usize, n: usize, tau: f64) -> Result<Self> {
        let g = &hole.geometry;
        if !(shell_width > 0.0 && shell_width < g.a()) || bins == 0 {
            return Err(Error::Domain(format!(
                "shell width must lie in (0, a) and bins must be positive, got {shell_width}, {bins}"
            )));
        }
        let width = 2.0 * PI / bins as f64;
        let bin_centers = (0..bins)
            .map(|k| -PI / 2.0 + (k as f64 + 0.5) * width)
            .collect();
        // flat density n/(π(1 − τ²)) times the shell area per bin
        let rho = n as f64 / (PI * (1.0 - tau * tau));
        let inner_area = 0.5 * (g.a().powi(2) - (g.a() - shell_width).powi(2)) * width;
        let outer_area = 0.5 * ((g.c() + shell_width).powi(2) - g.c().powi(2)) * width;
        Ok(Self {
            shell_width,
            bin_centers,
            inner_counts: vec![0; bins],
            outer_counts: vec![0; bins],
            inner_background: vec![rho * inner_area; bins],
            outer_background: vec![rho * outer_area; bins],
            samples: 0,
        })
    }

    fn bin(&self, theta: f64) -> usize {
        let bins = self.bin_centers.len();
        let t = (theta + PI / 2.0).rem_euclid(2.0 * PI);
        ((t / (2.0 * PI) * bins as f64) as usize).min(bins - 1)
    }

    pub fn add(&mut self, hole: &HoleSpec, points: &[Complex64]) {
        let g = &hole.geometry;
        for &z in points {
            let u = hole.to_local(z);
            let di = (u - g.inner_center()).norm();
            let dout = (u - g.outer_center()).norm();
            if di < g.a() && di > g.a() - self.shell_width {
                let k = self.bin(angle_from(u - g.inner_center()));
                self.inner_counts[k] += 1;
            } else if dout > g.c() && dout < g.c() + self.shell_width {
                let k = self.bin(angle_from(u - g.outer_center()));
                self.outer_counts[k] += 1;
            }
        }
        self.samples += 1;
    }

    pub fn merge(&mut self, other: &BoundaryProfile) {
        for (a, b) in self.inner_counts.iter_mut().zip(&other.inner_counts) {
            *a += b;
        }
        for (a, b) in self.outer_counts.iter_mut().zip(&other.outer_counts) {
            *a += b;
        }
        self.samples += other.samples;
    }

    /// Background-subtracted excess per sample, per side.
    pub fn excess(&self, side: Side) -> Vec<f64> {
        let s = self.samples.max(1) as f64;
        let (counts, bg) = match side {
            Side::Inner => (&self.inner_counts, &self.inner_background),
            Side::Outer => (&self.outer_counts, &self.outer_background),
        };
        counts
            .iter()
            .zip(bg)
            .map(|(&c, &b)| c as f64 / s - b)
            .collect()
    }

    /// Excess of both sides, inner first, scaled to unit total.
    pub fn normalized(&self) -> Result<Vec<f64>> {
        let mut v = self.excess(Side::Inner);
        v.extend(self.excess(Side::Outer));
        let total: f64 = v.iter().sum();
        if self
            .inner_counts
            .iter()
            .chain(&self.outer_counts)
            .all(|&c| c == 0)
            || !(total > 0.0)
        {
            return Err(Error::Insufficient(
                "no excess points in the boundary shell".into(),
            ));
        }
        Ok(v.into_iter().map(|x| x / total).collect())
    }

    /// Series density mass per bin, in the same layout as `normalized`.
    pub fn reference(&self, geom: &TacnodeGeometry) -> Result<Vec<f64>> {
        let mut v = Vec::with_capacity(2 * self.bin_centers.len());
        for side in [Side::Inner, Side::Outer] {
            for &t in &self.bin_centers {
                v.push(density(geom, side, t, DEFAULT_TOL)?.value);
            }
        }
        let total: f64 = v.iter().sum();
        Ok(v.into_iter().map(|x| x / total).collect())
    }

    pub fn cosine_similarity(&self, geom: &TacnodeGeometry) -> Result<f64> {
        let p = self.normalized()?;
        let q = self.reference(geom)?;
        let dot: f64 = p.iter().zip(&q).map(|(a, b)| a * b).sum();
        let np: f64 = p.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nq: f64 = q.iter().map(|a| a * a).sum::<f64>().sqrt();
        Ok(dot / (np * nq))
    }

    /// Side-summed excess by angle.
    pub fn combined(&self) -> Vec<f64> {
        self.excess(Side::Inner)
            .iter()
            .zip(self.excess(Side::Outer))
            .map(|(a, b)| a + b)
            .collect()
    }

    /// Angles of the local minima of the side-summed profile. The two ends
    /// of the angle range meet at the tacnode, so the profile is periodic.
    pub fn local_minima(&self) -> Vec<f64> {
        let v = self.combined();
        let n = v.len();
        (0..n)
            .filter(|&k| v[k] <= v[(k + n - 1) % n] && v[k] <= v[(k + 1) % n])
            .map(|k| self.bin_centers[k])
            .collect()
    }

    /// Distance from the tacnode angle `−π/2` to the nearest local minimum.
    pub fn cusp_minimum_offset(&self) -> f64 {
        self.local_minima()
            .into_iter()
            .map(|t| {
                let d = (t + PI / 2.0).rem_euclid(2.0 * PI);
                d.min(2.0 * PI - d)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(["side", "theta_bin_center", "mass"])?;
        for side in [Side::Inner, Side::Outer] {
            for (t, m) in self.bin_centers.iter().zip(self.excess(side)) {
                wr.write_record([side.as_str().to_string(), t.to_string(), m.to_string()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Angle in `[−π/2, 3π/2)` measured from the positive real axis.
fn angle_from(v: Complex64) -> f64 {
    let t = v.arg();
    if t < -PI / 2.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// `C n²`, the leading exponent of the probability that the hole is empty.
pub fn predicted_gap_exponent(config: &GasConfig) -> Result<f64> {
    let hole = config
        .hole
        .as_ref()
        .ok_or_else(|| Error::Domain("the gap exponent needs a hole".into()))?;
    check_hole_in_droplet(hole, config.tau)?;
    let g = &hole.geometry;
    let input = HoleRateInput::new(config.beta, config.tau, g.c())?;
    Ok(gap_constant_c(&input, g.a())? * (config.n as f64).powi(2))
}

pub fn write_samples_csv<W: Write>(samples: &[GasSample], out: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(out);
    wr.write_record(["sweep", "index", "re", "im"])?;
    for s in samples {
        for (k, z) in s.points.iter().enumerate() {
            wr.write_record([
                s.sweep.to_string(),
                k.to_string(),
                z.re.to_string(),
                z.im.to_string(),
            ])?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Histogram of `|z|` over the samples on `bins` equal bins of `[0, r_max)`.
pub fn radial_histogram(samples: &[GasSample], r_max: f64, bins: usize) -> Vec<(f64, u64)> {
    let w = r_max / bins as f64;
    let mut counts = vec![0u64; bins];
    for s in samples {
        for z in &s.points {
            let k = (z.norm() / w) as usize;
            if k < bins {
                counts[k] += 1;
            }
        }
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(k, c)| ((k as f64 + 0.5) * w, c))
        .collect()
}
