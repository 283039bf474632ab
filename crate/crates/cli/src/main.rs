use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use gvar::design::{self, DesignOptions, DesignSpace};
use gvar::estimate::{self, EstimateReport, Sample};
use gvar::maxdiv::{self, DiscreteMeasure, MaxDivOptions, MaxDivReport};
use gvar::simulate::{self, GeneratorKind, GeneratorSpec};
use gvar::symfun::{self, CovMatrix};
use gvar::{io, GvarError};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gvar", version, about = "Extended generalised variances psi_k")]
struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, env = "GVAR_SEED", default_value_t = 0)]
    seed: u64,

    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the solver tolerance.
    #[arg(long, global = true, value_parser = positive_f64)]
    tol: Option<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print psi_k of a covariance matrix (CSV).
    Psi {
        #[arg(long)]
        cov: PathBuf,
        #[arg(long)]
        k: usize,
    },
    /// Unbiased estimate of psi_k from a sample (CSV, one point per row).
    Estimate {
        #[arg(long)]
        sample: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        /// Cross-check against the brute-force U-statistic.
        #[arg(long)]
        oracle: bool,
    },
    /// Maximum-diversity measure on a candidate set (CSV).
    Maxdiv {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: u64,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        max_iter: Option<u64>,
    },
    /// psi-tilde_k-optimal design for a regression model.
    Design {
        /// `poly:DEG` on a grid, or `csv:FILE` of regressor rows.
        #[arg(long)]
        model: String,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        k: Option<u64>,
        /// Solve for every k = 1..d and print the efficiency matrix.
        #[arg(long)]
        all_k: bool,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        lo: f64,
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        hi: f64,
        #[arg(long, default_value_t = 2e-3, value_parser = positive_f64)]
        step: f64,
        #[arg(long)]
        no_polish: bool,
    },
    /// Monte-Carlo study of the estimator.
    Simulate {
        /// `uniform-cube:D`, `normal:D:VAR`, `sphere:D:RADIUS` or `discrete:FILE.json`.
        #[arg(long = "gen")]
        generator: String,
        #[arg(long)]
        n: usize,
        /// Comma-separated degrees, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',', required = true)]
        k: Vec<usize>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
        reps: u64,
        /// Also write the tidy `k,replicate,ratio` CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Efficiency matrix of a built-in polynomial example (5: quadratic, 6: cubic).
    Tables {
        #[arg(long, value_parser = clap::value_parser!(u32).range(4..=6))]
        example: u32,
        #[arg(long, default_value_t = 2e-3, value_parser = positive_f64)]
        step: f64,
    },
}

fn positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("expected a positive number, got {s:?}")),
    }
}

/// Ran to completion, but an iterative solver stopped before its tolerance.
struct NotConverged(String);

enum Failure {
    Error(GvarError),
    NotConverged(NotConverged),
}

impl From<GvarError> for Failure {
    fn from(e: GvarError) -> Self {
        Failure::Error(e)
    }
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct EstimateOutput {
    #[serde(flatten)]
    report: EstimateReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_relative_diff: Option<f64>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), GvarError> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n"))?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

fn parse_generator(spec: &str, seed: u64) -> Result<GeneratorSpec, GvarError> {
    let bad = || GvarError::Parse(format!("unrecognised generator {spec:?}"));
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    let dim = |s: &str| s.parse::<usize>().map_err(|_| bad());
    match parts.as_slice() {
        ["uniform-cube", d] => GeneratorSpec::uniform_cube(dim(d)?, seed),
        ["normal", d, var] => GeneratorSpec::isotropic_normal(dim(d)?, num(var)?, seed),
        ["sphere", d, r] => GeneratorSpec::uniform_sphere(dim(d)?, num(r)?, seed),
        ["discrete", path] => {
            let measure: DiscreteMeasure = io::read_json_file(path)?;
            GeneratorSpec::new(GeneratorKind::Discrete { measure }, seed)
        }
        _ => Err(bad()),
    }
}

fn design_space(model: &str, lo: f64, hi: f64, step: f64) -> Result<DesignSpace, GvarError> {
    if let Some(deg) = model.strip_prefix("poly:") {
        let degree = deg.parse::<usize>().map_err(|_| GvarError::Parse(format!("bad degree {deg:?}")))?;
        design::polynomial_design_space(degree, lo, hi, step)
    } else if let Some(path) = model.strip_prefix("csv:") {
        DesignSpace::from_regressors(io::read_matrix_file(path)?)
    } else {
        Err(GvarError::Parse(format!("model must be poly:DEG or csv:FILE, got {model:?}")))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let out = cli.out.as_deref();
    match cli.command {
        Command::Psi { cov, k } => {
            let v = CovMatrix::new(io::read_matrix_file(&cov)?)?;
            emit(out, &symfun::psi(&v, k)?.value.to_string())?;
        }
        Command::Estimate { sample, k, oracle } => {
            let s = Sample::new(io::read_matrix_file(&sample)?)?;
            let report = estimate::estimate_psi(&s, k as usize)?;
            let oracle = if oracle { Some(estimate::u_stat_oracle(&s, k as usize)?) } else { None };
            let oracle_relative_diff =
                oracle.map(|o| (o - report.psi_hat).abs() / report.psi_hat.abs().max(f64::MIN_POSITIVE));
            emit(out, &io::to_json(&EstimateOutput { report, oracle, oracle_relative_diff })?)?;
        }
        Command::Maxdiv { candidates, k, max_iter } => {
            let points = io::read_matrix_file(&candidates)?;
            let mut opts = MaxDivOptions::default();
            if let Some(t) = cli.tol {
                opts.tol = t;
            }
            if let Some(m) = max_iter {
                opts.max_iter = m as usize;
            }
            let k = k as usize;
            let (mu, mut cert) = maxdiv::solve_max_div(&points, k, &opts)?;
            cert.dual = Some(maxdiv::dual_certificate(&mu, &points, k)?);
            let converged = cert.converged;
            let gap = cert.gap;
            emit(out, &io::to_json(&MaxDivReport::new(&mu, cert)?)?)?;
            if !converged {
                return Err(Failure::NotConverged(NotConverged(format!("gap {gap:e} above tolerance {:e}", opts.tol))));
            }
        }
        Command::Design { model, k, all_k, lo, hi, step, no_polish } => {
            let space = design_space(&model, lo, hi, step)?;
            let mut opts = DesignOptions { polish: !no_polish, ..DesignOptions::default() };
            if let Some(t) = cli.tol {
                opts.tol = t;
            }
            let converged = if all_k {
                let ks: Vec<usize> = (1..=space.dim()).collect();
                let table = design::efficiency_table(&space, &ks, &opts)?;
                emit(out, &io::to_json(&table)?)?;
                table.converged()
            } else {
                let k = k.ok_or_else(|| GvarError::Domain("give --k or --all-k".into()))? as usize;
                let (_, report) = design::solve_design(&space, k, &opts)?;
                emit(out, &io::to_json(&report)?)?;
                report.converged
            };
            if !converged {
                return Err(Failure::NotConverged(NotConverged("design solver hit its iteration cap".into())));
            }
        }
        Command::Simulate { generator, n, k, reps, csv } => {
            let spec = parse_generator(&generator, cli.seed)?;
            let reports = simulate::run_monte_carlo(&spec, n, &k, reps as usize)?;
            if let Some(path) = csv {
                simulate::write_tidy_csv(&reports, fs::File::create(path).map_err(GvarError::from)?)?;
            }
            emit(out, &io::to_json(&reports)?)?;
        }
        Command::Tables { example, step } => {
            let space = design::example_space(example, step)?;
            let mut opts = DesignOptions::default();
            if let Some(t) = cli.tol {
                opts.tol = t;
            }
            let ks: Vec<usize> = (1..=space.dim()).collect();
            let table = design::efficiency_table(&space, &ks, &opts)?;
            emit(out, &io::to_json(&table)?)?;
            if !table.converged() {
                return Err(Failure::NotConverged(NotConverged("design solver hit its iteration cap".into())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        // usage errors share exit 1 with domain errors; 2 is reserved for non-convergence
        Err(e) => {
            let text = e.to_string();
            eprintln!("error: usage: {}", text.lines().next().unwrap_or("").trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(1)
        }
        Err(Failure::NotConverged(NotConverged(msg))) => {
            eprintln!("error: not-converged: {msg}");
            ExitCode::from(2)
        }
    }
}
