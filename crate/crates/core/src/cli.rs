//! Command-line front end.
//!
//! Every invocation writes `<command>.json` (a [`RunReport`]) into the
//! output directory, plus `<command>.csv` for the commands that produce
//! tabular data. Exit codes: 0 success, 1 failed checks, 2 configuration or
//! runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, MixingKind, ResolvedConfig, RouteChoice};
use crate::limit::{sample_prior_limit, sample_vbar_limit};
use crate::linalg::DenseMatrix;
use crate::posterior::{posterior_mixture, predictive_moments, sample_mixing, WeightStatus};
use crate::prior::{forward_direct, sample_prior_mixture, PriorSample};
use crate::rng::purpose_tag;
use crate::stats::par_draws;
use crate::suite::{acceptance_checks, all_checks, Check, Row};

pub const WORKERS_ENV: &str = "PROPLIMIT_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "proplimit",
    version,
    about = "Priors and posteriors of deep linear Bayesian networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// Draw finite-network outputs by the direct and/or mixture route.
    SamplePrior,
    /// Draw outputs and limit matrices in the proportional limit.
    SampleLimit,
    /// Predictive mean and covariance at a test input.
    PosteriorPredict,
    /// Run the convergence suite.
    ConvergeTest,
    /// Run every check.
    VerifyAll,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::SamplePrior => "sample-prior",
            Command::SampleLimit => "sample-limit",
            Command::PosteriorPredict => "posterior-predict",
            Command::ConvergeTest => "converge-test",
            Command::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Default, clap::Args)]
struct Flags {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output dimension D.
    #[arg(long, global = true)]
    d: Option<usize>,
    /// Input dimension N0.
    #[arg(long, global = true)]
    n0: Option<usize>,
    /// Number of training points P.
    #[arg(long, global = true)]
    p: Option<usize>,
    /// Depth L.
    #[arg(long, global = true)]
    l: Option<usize>,
    /// Hidden width N.
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Depth-to-width ratio of the limit.
    #[arg(long, global = true)]
    a: Option<f64>,
    /// Grid steps for the limit matrix.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    samples: Option<usize>,
    #[arg(long, global = true, value_enum)]
    mixing: Option<MixingKind>,
    #[arg(long, global = true, value_enum)]
    route: Option<RouteChoice>,
    /// KS test level.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Multiplier on every check's sample count.
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Comma-separated check ids.
    #[arg(long, global = true, value_delimiter = ',')]
    checks: Option<Vec<String>>,
}

impl Flags {
    fn overrides(&self) -> ExperimentConfig {
        ExperimentConfig {
            seed: self.seed,
            d: self.d,
            n0: self.n0,
            p: self.p,
            l: self.l,
            n: self.n,
            a: self.a,
            m: self.m,
            beta: self.beta,
            lambdas: self.lambdas.clone(),
            samples: self.samples,
            mixing: self.mixing,
            route: self.route,
            alpha: self.alpha,
            scale: self.scale,
            output: self.output.clone(),
            x: None,
            y: None,
            x0: None,
            checks: self.checks.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RngProvenance {
    pub generator: &'static str,
    pub keying: &'static str,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckSummary {
    pub id: String,
    pub title: String,
    pub pass: bool,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictiveReport {
    pub mean: Vec<f64>,
    /// Row-major `D × D`.
    pub cov: Vec<Vec<f64>>,
    pub mean_se: Vec<f64>,
    pub var_se: Vec<f64>,
    pub components: usize,
    pub weight_status: WeightStatus,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub command: &'static str,
    pub config: ResolvedConfig,
    pub rng: RngProvenance,
    pub pass: bool,
    pub rows: Vec<Row>,
    pub checks: Vec<CheckSummary>,
    pub ess: Option<f64>,
    pub predictive: Option<PredictiveReport>,
    pub csv: Option<PathBuf>,
    pub timing_seconds: f64,
}

#[derive(Debug, thiserror::Error)]
enum RunError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("run: {0}")]
    Library(#[from] crate::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    fn kind(&self) -> &'static str {
        match self {
            RunError::Config(_) => "config",
            RunError::Library(_) => "parameter",
            RunError::Io(_) => "io",
        }
    }
}

/// Formats a float with 17 significant digits.
fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt<T>(v: Option<T>, f: impl Fn(T) -> String) -> String {
    v.map(f).unwrap_or_default()
}

pub fn rows_to_csv(rows: &[Row]) -> String {
    let mut out = String::from("test,N,L,a,statistic,threshold,reference,pass\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.test,
            opt(r.n, |v| v.to_string()),
            opt(r.l, |v| v.to_string()),
            opt(r.a, fmt_f64),
            fmt_f64(r.statistic),
            fmt_f64(r.threshold),
            fmt_f64(r.reference),
            r.pass
        )
        .expect("writing to a String");
    }
    out
}

fn draws_csv(header: &str, out: &mut String, draws: &[(usize, &str, &DenseMatrix)]) {
    if out.is_empty() {
        out.push_str(header);
    }
    for (id, route, m) in draws {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                writeln!(
                    out,
                    "{id},{route},{},{},{}",
                    i + 1,
                    j + 1,
                    fmt_f64(m[(i, j)])
                )
                .expect("writing to a String");
            }
        }
    }
}

const DRAWS_HEADER: &str = "sample_id,route,row,col,value\n";

struct Outcome {
    rows: Vec<Row>,
    checks: Vec<CheckSummary>,
    csv: Option<String>,
    ess: Option<f64>,
    predictive: Option<PredictiveReport>,
}

impl Outcome {
    fn data(csv: String) -> Self {
        Self {
            rows: Vec::new(),
            checks: Vec::new(),
            csv: Some(csv),
            ess: None,
            predictive: None,
        }
    }
}

fn collect_prior(
    cfg: &ResolvedConfig,
    label: &str,
    f: impl Fn(&mut crate::rng::RngStream) -> crate::Result<PriorSample> + Sync + Send,
) -> crate::Result<Vec<PriorSample>> {
    par_draws(cfg.seed, purpose_tag(label), cfg.samples, f)
        .into_iter()
        .collect()
}

fn sample_prior_cmd(cfg: &ResolvedConfig) -> Result<Outcome, RunError> {
    let x = cfg.inputs();
    let net = cfg.network();
    let mut csv = String::new();
    let routes: &[&str] = match cfg.route {
        RouteChoice::Direct => &["direct"],
        RouteChoice::Mixture => &["mixture"],
        RouteChoice::Both => &["direct", "mixture"],
    };
    for &route in routes {
        let draws = if route == "direct" {
            collect_prior(cfg, "sample-prior/direct", |rng| {
                forward_direct(&x, &net, rng)
            })?
        } else {
            collect_prior(cfg, "sample-prior/mixture", |rng| {
                sample_prior_mixture(&x, &net, rng)
            })?
        };
        let table: Vec<_> = draws
            .iter()
            .enumerate()
            .map(|(i, s)| (i, s.route.as_str(), &s.f))
            .collect();
        draws_csv(DRAWS_HEADER, &mut csv, &table);
    }
    Ok(Outcome::data(csv))
}

/// Output draws (`route = limit`) followed by independent draws of the limit
/// matrix itself (`route = vbar`).
fn sample_limit_cmd(cfg: &ResolvedConfig) -> Result<Outcome, RunError> {
    let x = cfg.inputs();
    let lambda = cfg.lambda_star();
    let draws = collect_prior(cfg, "sample-limit/f", |rng| {
        sample_prior_limit(&x, cfg.a, cfg.d, cfg.n0, lambda, cfg.m, rng)
    })?;
    let vbars: Vec<DenseMatrix> = par_draws(
        cfg.seed,
        purpose_tag("sample-limit/vbar"),
        cfg.samples,
        |rng| sample_vbar_limit(cfg.a, cfg.d, cfg.m, rng).map(|v| v.into_matrix()),
    )
    .into_iter()
    .collect::<crate::Result<_>>()?;
    let mut csv = String::new();
    let table: Vec<_> = draws
        .iter()
        .enumerate()
        .map(|(i, s)| (i, "limit", &s.f))
        .collect();
    draws_csv(DRAWS_HEADER, &mut csv, &table);
    let table: Vec<_> = vbars
        .iter()
        .enumerate()
        .map(|(i, v)| (i, "vbar", v))
        .collect();
    draws_csv(DRAWS_HEADER, &mut csv, &table);
    Ok(Outcome::data(csv))
}

fn posterior_cmd(cfg: &ResolvedConfig) -> Result<Outcome, RunError> {
    let data = cfg.dataset()?;
    let mixing = sample_mixing(
        cfg.mixing_source(),
        cfg.d,
        cfg.samples,
        cfg.seed,
        purpose_tag("posterior/mixing"),
    )?;
    let mix = posterior_mixture(&mixing, &data)?;
    let pred = predictive_moments(&mix);
    let d = cfg.d;
    Ok(Outcome {
        rows: Vec::new(),
        checks: Vec::new(),
        csv: None,
        ess: Some(mix.ess),
        predictive: Some(PredictiveReport {
            mean: pred.mean.iter().copied().collect(),
            cov: (0..d)
                .map(|i| (0..d).map(|j| pred.cov[(i, j)]).collect())
                .collect(),
            mean_se: pred.mean_se.iter().copied().collect(),
            var_se: pred.var_se.iter().copied().collect(),
            components: mix.len(),
            weight_status: mix.status,
        }),
    })
}

fn checks_cmd(cfg: &ResolvedConfig, pool: Vec<Check>) -> Result<Outcome, RunError> {
    let suite = cfg.suite();
    let selected: Vec<Check> = if cfg.checks.is_empty() {
        pool
    } else {
        pool.into_iter()
            .filter(|c| cfg.checks.iter().any(|id| id == c.id))
            .collect()
    };
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for check in selected {
        let out = (check.run)(&suite)?;
        checks.push(CheckSummary {
            id: check.id.to_string(),
            title: check.title.to_string(),
            pass: out.pass(),
            notes: out.notes.clone(),
        });
        rows.extend(out.rows);
    }
    let csv = rows_to_csv(&rows);
    Ok(Outcome {
        rows,
        checks,
        csv: Some(csv),
        ess: None,
        predictive: None,
    })
}

fn write_outputs(
    dir: &Path,
    name: &str,
    csv: Option<&str>,
    report: &mut RunReport,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    if let Some(csv) = csv {
        let path = dir.join(format!("{name}.csv"));
        std::fs::write(&path, csv)?;
        report.csv = Some(path);
    }
    let json = serde_json::to_string_pretty(report).map_err(std::io::Error::other)?;
    std::fs::write(dir.join(format!("{name}.json")), json + "\n")
}

fn workers() -> Result<Option<usize>, ConfigError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .map(Some)
            .ok_or_else(|| {
                ConfigError(format!(
                    "{WORKERS_ENV} must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(None),
    }
}

fn execute(cli: Cli) -> Result<bool, RunError> {
    let start = Instant::now();
    let file = match &cli.flags.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let raw = file.merge(cli.flags.overrides());
    let cfg = ResolvedConfig::resolve(raw, cli.command == Command::PosteriorPredict)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| ConfigError(e.to_string()))?;

    let outcome = pool.install(|| match cli.command {
        Command::SamplePrior => sample_prior_cmd(&cfg),
        Command::SampleLimit => sample_limit_cmd(&cfg),
        Command::PosteriorPredict => posterior_cmd(&cfg),
        Command::ConvergeTest => checks_cmd(&cfg, acceptance_checks()),
        Command::VerifyAll => checks_cmd(&cfg, all_checks()),
    })?;

    let pass = outcome.rows.iter().all(|r| r.pass) && outcome.checks.iter().all(|c| c.pass);
    for c in &outcome.checks {
        println!("{:<24} {}", c.id, if c.pass { "PASS" } else { "FAIL" });
    }
    let name = cli.command.name();
    let mut report = RunReport {
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        rng: RngProvenance {
            generator: "ChaCha8",
            keying: "key = (seed, purpose tag), stream = sample index",
            seed: cfg.seed,
        },
        config: cfg,
        pass,
        rows: outcome.rows,
        checks: outcome.checks,
        ess: outcome.ess,
        predictive: outcome.predictive,
        csv: None,
        timing_seconds: start.elapsed().as_secs_f64(),
    };
    let dir = report.config.output.clone();
    write_outputs(&dir, name, outcome.csv.as_deref(), &mut report)?;
    println!("wrote {}", dir.join(format!("{name}.json")).display());
    Ok(pass)
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{msg}");
            2
        }
    }
}
