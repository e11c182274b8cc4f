use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use balayage::density::BoundaryDensityProfile;
use balayage::gas::{
    default_shell_width, predicted_gap_exponent, radial_histogram, run_chains, write_samples_csv,
    BoundaryProfile, GasConfig, HoleSpec,
};
use balayage::geometry::{Side, TacnodeGeometry};
use balayage::manifest::RunManifest;
use balayage::mc::{fit_vanishing_rate, log_grid, McParams, ModelBoundaryDomain, PowerLawMeasure};
use balayage::verify::{self, Status, Suite, VerifyOptions};
use balayage::Error;
use clap::{Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde_json::{json, Value};

const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INSUFFICIENT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "balayage",
    version,
    about = "Balayage densities, harmonic-measure Monte Carlo and Coulomb-gas sampling"
)]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "BALAYAGE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SideArg {
    Inner,
    Outer,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    ClosedForms,
    Oracle,
    McRates,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Boundary density of the uniform measure on the region between two
    /// osculating circles.
    Density {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        c: f64,
        #[arg(long, value_enum, default_value = "both")]
        side: SideArg,
        /// Number of equally spaced angles, or a comma-separated list of angles.
        #[arg(long, default_value = "720", allow_hyphen_values = true)]
        theta_grid: String,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the self-check suites and print a pass/fail table.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: SuiteArg,
        /// Walks per Monte Carlo estimate.
        #[arg(long, default_value_t = 100_000)]
        walks: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Directory for a JSON report and manifest.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Fit the vanishing rate of ν(∂Ω ∩ B_r) on a model domain.
    RateFit {
        /// Domain JSON, inline or as a file path.
        #[arg(long)]
        domain_spec: String,
        #[arg(long, default_value_t = 1.0)]
        b: f64,
        /// Density normalization of the measure.
        #[arg(long, default_value_t = 1.0)]
        normalization: f64,
        #[arg(long)]
        r_min: f64,
        #[arg(long)]
        r_max: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 100_000)]
        walks: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// JSON result path; the mass table goes to the same stem with `.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample the elliptic Coulomb gas, optionally with an empty hole.
    Gas {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        /// Inner radius of the hole.
        #[arg(long, requires = "hole_c")]
        hole_a: Option<f64>,
        /// Outer radius of the hole.
        #[arg(long, requires = "hole_a")]
        hole_c: Option<f64>,
        /// Tacnode position as `re,im`.
        #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
        hole_z0: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        hole_theta0: f64,
        #[arg(long, default_value_t = 10_000)]
        sweeps: u64,
        /// Defaults to a tenth of the sweeps.
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long, default_value_t = 10)]
        thin: u64,
        #[arg(long)]
        step_size: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        /// Width of the boundary shell; `3/√n` by default.
        #[arg(long)]
        shell_width: Option<f64>,
        #[arg(long, default_value_t = 72)]
        bins: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

/// Failure of a command, with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Insufficient(_) => EXIT_INSUFFICIENT,
            _ => EXIT_USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::from(Error::from(e))
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, Failure> {
    if let Ok(n) = spec.trim().parse::<usize>() {
        if n == 0 {
            return Err(usage("theta grid must contain at least one angle"));
        }
        return Ok(BoundaryDensityProfile::uniform_grid(n));
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("cannot parse angle {t:?} in theta grid")))
        })
        .collect()
}

fn parse_point(spec: &str) -> Result<Complex64, Failure> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 2 {
        return Err(usage(format!("expected a point as re,im, got {spec:?}")));
    }
    let re = parts[0]
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad real part in {spec:?}")))?;
    let im = parts[1]
        .trim()
        .parse()
        .map_err(|_| usage(format!("bad imaginary part in {spec:?}")))?;
    Ok(Complex64::new(re, im))
}

fn run_density(
    a: f64,
    c: f64,
    side: SideArg,
    theta_grid: &str,
    tol: f64,
    out: &Path,
) -> Result<u8, Failure> {
    let geom = TacnodeGeometry::new(a, c)?;
    let grid = parse_grid(theta_grid)?;
    let sides: &[Side] = match side {
        SideArg::Inner => &[Side::Inner],
        SideArg::Outer => &[Side::Outer],
        SideArg::Both => &[Side::Inner, Side::Outer],
    };
    let profiles = sides
        .iter()
        .map(|&s| BoundaryDensityProfile::compute(&geom, s, &grid, tol))
        .collect::<balayage::Result<Vec<_>>>()?;
    BoundaryDensityProfile::write_csv(&profiles, create(out)?)?;
    let mut params = BTreeMap::new();
    params.insert("a".into(), json!(a));
    params.insert("c".into(), json!(c));
    params.insert(
        "side".into(),
        json!(sides.iter().map(|s| s.as_str()).collect::<Vec<_>>()),
    );
    params.insert("theta_grid".into(), json!(theta_grid));
    params.insert("tol".into(), json!(tol));
    RunManifest::new("density", params, 0).write(&sibling(out, ".manifest.json"))?;
    let flagged: usize = profiles
        .iter()
        .map(|p| p.degenerate.iter().filter(|d| **d).count())
        .sum();
    println!(
        "wrote {} rows to {}{}",
        profiles.iter().map(|p| p.thetas.len()).sum::<usize>(),
        out.display(),
        if flagged > 0 {
            format!(" ({flagged} degenerate angles flagged)")
        } else {
            String::new()
        }
    );
    Ok(0)
}

fn run_verify(
    suite: SuiteArg,
    walks: usize,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<u8, Failure> {
    let suite = match suite {
        SuiteArg::ClosedForms => Suite::ClosedForms,
        SuiteArg::Oracle => Suite::Oracle,
        SuiteArg::McRates => Suite::McRates,
        SuiteArg::All => Suite::All,
    };
    if walks == 0 {
        return Err(usage("walk budget must be positive"));
    }
    let opts = VerifyOptions { walks, seed };
    let checks = verify::run(suite, &opts);
    let width = checks
        .iter()
        .map(|c| c.name.chars().count())
        .max()
        .unwrap_or(0);
    for c in &checks {
        println!(
            "{:<13} {:<width$}  {:<6}  {}",
            c.suite,
            c.name,
            c.status.to_string(),
            c.detail
        );
    }
    let status = verify::overall(&checks);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("verify.json"),
            serde_json::to_string_pretty(&checks)?,
        )?;
        let mut params = BTreeMap::new();
        params.insert("suite".into(), serde_json::to_value(suite)?);
        params.insert("walks".into(), json!(walks));
        RunManifest::new("verify", params, seed).write(&dir.join("manifest.json"))?;
    }
    match status {
        Status::Pass => {
            println!("all {} checks passed", checks.len());
            Ok(0)
        }
        Status::Fail => {
            let names: Vec<&str> = checks
                .iter()
                .filter(|c| c.status == Status::Fail)
                .map(|c| c.name.as_str())
                .collect();
            eprintln!("verification failed: {}", names.join("; "));
            Ok(EXIT_FAIL)
        }
        Status::Insufficient => {
            eprintln!("insufficient precision: increase --walks to decide the Monte Carlo checks");
            Ok(EXIT_INSUFFICIENT)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_rate_fit(
    domain_spec: &str,
    b: f64,
    normalization: f64,
    r_min: f64,
    r_max: f64,
    points: usize,
    walks: usize,
    seed: u64,
    out: &Path,
) -> Result<u8, Failure> {
    let text = if domain_spec.trim_start().starts_with('{') {
        domain_spec.to_string()
    } else {
        std::fs::read_to_string(domain_spec)?
    };
    let domain = ModelBoundaryDomain::from_json(&text)?;
    let measure = PowerLawMeasure::with_normalization(b, normalization)?;
    if points == 0 {
        return Err(usage("the radius grid is empty"));
    }
    if walks == 0 {
        return Err(usage("walk budget must be positive"));
    }
    let grid = log_grid(r_min, r_max, points)?;
    let fit = fit_vanishing_rate(&domain, &measure, &grid, &McParams::new(walks, seed))?;
    let mut json_out = create(out)?;
    serde_json::to_writer_pretty(&mut json_out, &fit)?;
    json_out.flush()?;
    fit.write_csv(create(&out.with_extension("csv"))?)?;
    let mut params = BTreeMap::new();
    params.insert("domain".into(), serde_json::to_value(&domain)?);
    params.insert("measure".into(), serde_json::to_value(measure)?);
    params.insert("r_grid".into(), json!(grid));
    params.insert("walks".into(), json!(walks));
    RunManifest::new("rate-fit", params, seed).write(&sibling(out, ".manifest.json"))?;
    println!(
        "fitted exponent {} ± {} (expected {}{}), coefficient {}",
        fit.exponent,
        fit.stderr_exponent,
        fit.expected.exponent,
        if fit.expected.log_factor {
            " with log factor"
        } else {
            ""
        },
        fit.coefficient
    );
    if fit.expected.log_factor {
        println!(
            "residuals: power law {}, r^2b log(1/r) model {}",
            fit.power_residual, fit.log_model_residual
        );
    }
    if !fit.precise {
        eprintln!("insufficient precision: some masses exceed the relative error budget; increase --walks");
        return Ok(EXIT_INSUFFICIENT);
    }
    Ok(0)
}

#[allow(clippy::too_many_arguments)]
fn run_gas(
    n: usize,
    beta: f64,
    tau: f64,
    hole_a: Option<f64>,
    hole_c: Option<f64>,
    hole_z0: &str,
    hole_theta0: f64,
    sweeps: u64,
    burn_in: Option<u64>,
    thin: u64,
    step_size: Option<f64>,
    seed: u64,
    chains: usize,
    shell_width: Option<f64>,
    bins: usize,
    out_dir: &Path,
) -> Result<u8, Failure> {
    let mut cfg = GasConfig::new(n, beta, tau, sweeps, seed);
    cfg.burn_in = burn_in.unwrap_or(sweeps / 10);
    cfg.thin = thin;
    cfg.step_size = step_size;
    if let (Some(a), Some(c)) = (hole_a, hole_c) {
        cfg.hole = Some(HoleSpec::new(parse_point(hole_z0)?, hole_theta0, a, c)?);
    }
    if chains == 0 {
        return Err(usage("need at least one chain"));
    }
    cfg.validate()?;
    let mut profile = match &cfg.hole {
        Some(hole) => {
            let width =
                shell_width.unwrap_or_else(|| default_shell_width(n).min(0.5 * hole.geometry.a()));
            Some(BoundaryProfile::new(hole, width, bins, n, tau)?)
        }
        None => None,
    };
    std::fs::create_dir_all(out_dir)?;
    let runs = run_chains(&cfg, chains)?;
    let mut summary = serde_json::Map::new();
    for (k, run) in runs.iter().enumerate() {
        let name = if chains == 1 {
            "configurations.csv".to_string()
        } else {
            format!("configurations_chain{k}.csv")
        };
        write_samples_csv(&run.samples, create(&out_dir.join(name))?)?;
        for w in &run.report.warnings {
            eprintln!("chain {k}: warning: {w}");
        }
    }
    summary.insert(
        "reports".into(),
        json!(runs.iter().map(|r| &r.report).collect::<Vec<_>>()),
    );
    let all_samples: Vec<_> = runs
        .iter()
        .flat_map(|r| r.samples.iter().cloned())
        .collect();
    let hist = radial_histogram(&all_samples, 2.0, 100);
    let mut wr = csv::Writer::from_writer(create(&out_dir.join("radial_histogram.csv"))?);
    wr.write_record(["radius", "count"]).map_err(Error::from)?;
    for (r, count) in hist {
        wr.write_record([r.to_string(), count.to_string()])
            .map_err(Error::from)?;
    }
    wr.flush()?;
    if let (Some(hole), Some(profile)) = (&cfg.hole, profile.as_mut()) {
        for run in &runs {
            for s in &run.samples {
                profile.add(hole, &s.points);
            }
        }
        profile.write_csv(create(&out_dir.join("boundary_profile.csv"))?)?;
        let exponent = predicted_gap_exponent(&cfg)?;
        summary.insert("predicted_gap_exponent".into(), json!(exponent));
        match profile.cosine_similarity(&hole.geometry) {
            Ok(cs) => {
                summary.insert("cosine_similarity".into(), json!(cs));
                summary.insert(
                    "cusp_minimum_offset_degrees".into(),
                    json!(profile.cusp_minimum_offset() * 180.0 / PI),
                );
                println!("profile cosine similarity with the series density: {cs}");
            }
            Err(e) => eprintln!("warning: {e}"),
        }
        println!("predicted gap exponent C n^2 = {exponent}");
    }
    std::fs::write(
        out_dir.join("summary.json"),
        serde_json::to_string_pretty(&Value::Object(summary))?,
    )?;
    let mut params = BTreeMap::new();
    params.insert("config".into(), serde_json::to_value(&cfg)?);
    params.insert("chains".into(), json!(chains));
    params.insert(
        "shell_width".into(),
        json!(profile.as_ref().map(|p| p.shell_width)),
    );
    params.insert("bins".into(), json!(bins));
    RunManifest::new("gas", params, seed).write(&out_dir.join("manifest.json"))?;
    println!("wrote gas outputs to {}", out_dir.display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: worker count must be positive");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
        {
            eprintln!("error: cannot configure workers: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Density {
            a,
            c,
            side,
            theta_grid,
            tol,
            out,
        } => run_density(*a, *c, *side, theta_grid, *tol, out),
        Command::Verify {
            suite,
            walks,
            seed,
            out_dir,
        } => run_verify(*suite, *walks, *seed, out_dir.as_deref()),
        Command::RateFit {
            domain_spec,
            b,
            normalization,
            r_min,
            r_max,
            points,
            walks,
            seed,
            out,
        } => run_rate_fit(
            domain_spec,
            *b,
            *normalization,
            *r_min,
            *r_max,
            *points,
            *walks,
            *seed,
            out,
        ),
        Command::Gas {
            n,
            beta,
            tau,
            hole_a,
            hole_c,
            hole_z0,
            hole_theta0,
            sweeps,
            burn_in,
            thin,
            step_size,
            seed,
            chains,
            shell_width,
            bins,
            out_dir,
        } => run_gas(
            *n,
            *beta,
            *tau,
            *hole_a,
            *hole_c,
            hole_z0,
            *hole_theta0,
            *sweeps,
            *burn_in,
            *thin,
            *step_size,
            *seed,
            *chains,
            *shell_width,
            *bins,
            out_dir,
        ),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let label = if f.code == EXIT_INSUFFICIENT {
                "insufficient precision"
            } else {
                "error"
            };
            eprintln!("{label}: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
