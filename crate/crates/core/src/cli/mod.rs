//! Command-line front end: verification suites, κ sweeps, operator values
//! at given points and bilinear forms.

mod verify;

use crate::config::{ConfigError, RunConfig, Tolerances};
use crate::csda::{convergence_sweep, ConvergenceReport, CsdaError};
use crate::phase_field::{phase_points, PhaseField, PhaseSpace};
use crate::sphere_geom::Vec3;
use crate::transport_variational::{
    pair_report, residual_against, test_battery, Assembler, BilinearReport, TestSide, TransportError, TransportForm,
    TrialSide,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub use verify::{run_suite, Check, Suite};

/// Exit status: all checks passed.
pub const EXIT_OK: i32 = 0;
/// Exit status: a check failed.
pub const EXIT_FAIL: i32 = 1;
/// Exit status: usage, config or input error.
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "moller-bte", version, about = "Møller-scattering transport operators and their checks")]
pub struct Cli {
    /// JSON run configuration; defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a battery of invariant checks.
    Verify {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        /// Replace every check tolerance.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Sweep κ toward 1 and write the truncation errors as CSV.
    Converge {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated κ values.
        #[arg(long, value_delimiter = ',')]
        kappa_list: Option<Vec<f64>>,
        /// Field id, repeatable; replaces the configured sweep fields.
        #[arg(long)]
        field: Vec<String>,
    },
    /// Evaluate an operator at the points of a file.
    Apply {
        #[arg(long, value_enum)]
        form: ApplyForm,
        #[arg(long)]
        field: String,
        /// Rows of `x1 x2 x3 w1 w2 w3 E`, separated by blanks or commas.
        #[arg(long)]
        points: PathBuf,
        /// Cut-off for `--form csda`; defaults to the configured κ.
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a bilinear form or the weak-identity residual.
    Bilinear {
        #[arg(long, value_enum)]
        form: BilinearForm,
        /// Trial field ψ.
        #[arg(long)]
        field: String,
        /// Test field v; `residual` uses the built-in test battery without it.
        #[arg(long)]
        test_field: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApplyForm {
    Strong,
    Pseudo,
    Refined,
    Csda,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BilinearForm {
    #[value(name = "B0")]
    B0,
    #[value(name = "B1")]
    B1,
    #[value(name = "B2")]
    B2,
    #[value(name = "B2low")]
    B2Low,
    #[value(name = "B")]
    B,
    #[value(name = "residual")]
    Residual,
}

impl BilinearForm {
    fn name(&self) -> &'static str {
        match self {
            BilinearForm::B0 => "B0",
            BilinearForm::B1 => "B1",
            BilinearForm::B2 => "B2",
            BilinearForm::B2Low => "B2low",
            BilinearForm::B => "B",
            BilinearForm::Residual => "residual",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Csda(#[from] CsdaError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {msg}")]
    Points { path: String, line: usize, msg: String },
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl From<crate::phase_field::PhaseError> for CliError {
    fn from(e: crate::phase_field::PhaseError) -> Self {
        CliError::Config(e.into())
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn execute(cli: &Cli) -> Result<i32, CliError> {
    let mut cfg = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Verify { suite, tol } => {
            if let Some(t) = tol {
                if !(*t >= 0.0) {
                    return Err(CliError::Usage(format!("--tol must be non-negative, got {t}")));
                }
                cfg.tolerances = Tolerances::uniform(*t);
            }
            let checks = run_suite(*suite, &cfg)?;
            let failed = checks.iter().filter(|c| !c.pass).count();
            let mut text = String::new();
            for c in &checks {
                let _ = writeln!(text, "{c}");
            }
            let _ = writeln!(text, "{} checks, {} failed", checks.len(), failed);
            // a closed pipe should not turn into a panic
            let _ = std::io::Write::write_all(&mut std::io::stdout().lock(), text.as_bytes());
            Ok(if failed == 0 { EXIT_OK } else { EXIT_FAIL })
        }
        Command::Converge { out, kappa_list, field } => {
            if let Some(k) = kappa_list {
                cfg.csda.kappa_sweep = k.clone();
            }
            if !field.is_empty() {
                cfg.fields.converge = field.clone();
            }
            cfg.validate()?;
            let report = converge(&cfg)?;
            let path = out.clone().unwrap_or_else(|| PathBuf::from(&cfg.outputs.csv));
            write_file(&path, &convergence_csv(&report))?;
            println!("slope={}", format_number(report.fitted_slope));
            Ok(EXIT_OK)
        }
        Command::Apply {
            form,
            field,
            points,
            kappa,
            out,
        } => {
            let text = read_file(points)?;
            let pts = parse_points(&text, &cfg.phase_space, &points.display().to_string())?;
            let values = apply(&cfg, *form, field, &pts, kappa.unwrap_or(cfg.csda.kappa))?;
            emit(out.as_deref(), &to_json(&values))?;
            Ok(EXIT_OK)
        }
        Command::Bilinear {
            form,
            field,
            test_field,
            out,
        } => {
            let json = bilinear(&cfg, *form, field, test_field.as_deref())?;
            emit(out.as_deref(), &json)?;
            Ok(EXIT_OK)
        }
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Shortest round-trip decimal form; NaN as `nan`.
pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v}")
    }
}

/// Runs the κ sweep of a configuration.
pub fn converge(cfg: &RunConfig) -> Result<ConvergenceReport, CliError> {
    let ctx = cfg.csda()?;
    let fields = cfg
        .fields
        .converge
        .iter()
        .map(|id| cfg.field(id))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&dyn PhaseField> = fields.iter().map(|f| f as &dyn PhaseField).collect();
    let pts = phase_points(&cfg.phase_space, cfg.points, cfg.seed, 0.05);
    Ok(convergence_sweep(&refs, &ctx, &cfg.csda.kappa_sweep, &pts)?)
}

/// CSV text of a sweep: header, one row per κ and the slope footer.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut s = String::from("kappa,sup_error,l2_error\n");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{}",
            format_number(r.kappa),
            format_number(r.sup_error),
            format_number(r.l2_error)
        );
    }
    let _ = writeln!(s, "# slope={}", format_number(report.fitted_slope));
    s
}

/// Phase point rows `x1 x2 x3 w1 w2 w3 E`. Blank lines and `#` comments
/// are skipped; ω is normalised when within 1e−6 of unit length.
pub fn parse_points(text: &str, space: &PhaseSpace, path: &str) -> Result<Vec<[f64; 7]>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Points {
            path: path.into(),
            line: i + 1,
            msg,
        };
        let nums = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map_err(|_| bad(format!("not a number: `{t}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        if nums.len() != 7 {
            return Err(bad(format!("expected 7 numbers, found {}", nums.len())));
        }
        let x = Vec3::new(nums[0], nums[1], nums[2]);
        let w = Vec3::new(nums[3], nums[4], nums[5]);
        if !space.contains(&x) {
            return Err(bad(format!("point x = ({}, {}, {}) lies outside the ball of radius {}", x[0], x[1], x[2], space.radius)));
        }
        if (w.norm() - 1.0).abs() > 1e-6 {
            return Err(bad(format!("direction has length {}, not 1", w.norm())));
        }
        let e = nums[6];
        if !(e > space.e0 && e < space.em) {
            return Err(bad(format!("energy {e} is not inside ({}, {})", space.e0, space.em)));
        }
        let w = w.normalize();
        out.push([x[0], x[1], x[2], w[0], w[1], w[2], e]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct PointValue {
    pub point: [f64; 7],
    pub value: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FormValue {
    pub form: String,
    pub value: f64,
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("plain data serializes");
    s.push('\n');
    s
}

/// Operator values at the given points.
pub fn apply(cfg: &RunConfig, form: ApplyForm, field: &str, pts: &[[f64; 7]], kappa: f64) -> Result<Vec<PointValue>, CliError> {
    let psi = cfg.field(field)?;
    let ctx = cfg.csda()?;
    pts.iter()
        .map(|p| {
            let x = Vec3::new(p[0], p[1], p[2]);
            let w = Vec3::new(p[3], p[4], p[5]);
            let e = p[6];
            let value = match form {
                ApplyForm::Strong => ctx.transport.transport_apply(&psi, &x, &w, e, TransportForm::Strong)?,
                ApplyForm::Pseudo => ctx.transport.transport_apply(&psi, &x, &w, e, TransportForm::Pseudo)?,
                ApplyForm::Refined => ctx.transport.transport_apply(&psi, &x, &w, e, TransportForm::Refined)?,
                ApplyForm::Csda => ctx.csda_apply(&psi, &x, &w, e, kappa)?,
            };
            Ok(PointValue { point: *p, value })
        })
        .collect()
}

/// JSON text of a bilinear form value or of residual reports.
pub fn bilinear(cfg: &RunConfig, form: BilinearForm, psi_id: &str, v_id: Option<&str>) -> Result<String, CliError> {
    let ctx = cfg.transport()?;
    let psi = cfg.field(psi_id)?;
    let asm = Assembler::new(&ctx);
    if form == BilinearForm::Residual && v_id.is_none() {
        let battery = test_battery(&asm)?;
        let (worst, _) = residual_against(&asm, &psi, &battery)?;
        return Ok(to_json(&worst));
    }
    let v_id = v_id.ok_or_else(|| CliError::Usage(format!("--test-field is required for {}", form.name())))?;
    let v = cfg.field(v_id)?;
    crate::transport_variational::check_vanishing(&psi, &v, &ctx)?;
    let test = TestSide::new(&asm, &v)?;
    let trial = TrialSide::new(&asm, &psi)?;
    let r: BilinearReport = pair_report(&asm, &psi, &trial, &v, &test);
    let value = match form {
        BilinearForm::B0 => r.B0,
        BilinearForm::B1 => r.B1,
        BilinearForm::B2 => r.B2,
        BilinearForm::B2Low => asm.inner(&trial.psi, &test.lowered) + asm.b2_gradient_term(&psi, &v)?,
        BilinearForm::B => r.B_total,
        BilinearForm::Residual => return Ok(to_json(&r)),
    };
    Ok(to_json(&FormValue {
        form: form.name().into(),
        value,
    }))
}
