//! The `honest-ate` command line.

pub mod cache;
pub mod input;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::alt_estimators::TiePolicy;
use crate::data::{Exponent, LipschitzSpec, NormSpec, Sample, TargetKind};
use crate::error::Error;
use crate::estimator::{efficiency_bounds, Criterion, Levels, PathPoint};
use crate::path::{PathOptions, SolutionPath};
use crate::pipeline::{prepare_data, PipelineConfig, Prepared};
use crate::variance::{VarianceMethod, VarianceMetric};
use report::{cell, render_table, rows_table, Envelope, Row, SCHEMA_ID, SCHEMA_VERSION};

/// Lindeberg ratios above this are flagged.
pub const LINDEBERG_WARNING: f64 = 0.1;

/// Checkpoint spacing used for cached paths.
pub const CHECKPOINT_EVERY: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::InvalidParameter(_)
            | Error::InvalidNorm(_)
            | Error::NotArmLevel
            | Error::WeightsSum { .. }
            | Error::NegativeWeight { .. }
            | Error::TooFewOpposite { .. } => CliError::Config(msg),
            Error::EmptyArm { .. }
            | Error::NonFinite { .. }
            | Error::LengthMismatch { .. }
            | Error::DimensionMismatch { .. }
            | Error::ArmTooSmall { .. }
            | Error::EmptyWindow { .. }
            | Error::MissingOutcomes => CliError::Data(msg),
            Error::UnboundedBias { .. } => CliError::Data(format!(
                "{msg}. Treated weights must sum to one and control weights to minus one, \
                 otherwise some Lipschitz function makes the bias arbitrarily large"
            )),
            Error::InconsistentSystem { .. }
            | Error::MaxKnotsExceeded { .. }
            | Error::KktViolation { .. }
            | Error::SolverStall { .. }
            | Error::DegenerateNormalizer
            | Error::NotBracketed => CliError::Numerical(msg),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "honest-ate",
    version,
    about = "Minimax linear treatment effect estimates with bias-aware confidence intervals"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal estimators and confidence intervals for one Lipschitz constant.
    Estimate(EstimateArgs),
    /// Estimates and bounds over a grid of Lipschitz constants.
    Sensitivity(SensitivityArgs),
    /// Worst-case bias and confidence intervals for supplied weights.
    Audit(AuditArgs),
    /// Matching estimators with their exact worst-case bias.
    Matching(MatchingArgs),
    /// Weight concentration, path statistics and efficiency bounds.
    Diagnostics(DiagnosticsArgs),
    /// Knots and segment scalars of the solution path.
    PathDump(PathDumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Input CSV with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    /// Outcome column.
    #[arg(long)]
    pub outcome: String,
    /// Column holding 0 (control) or 1 (treated).
    #[arg(long)]
    pub treatment: String,
    /// Covariate columns; defaults to every other column.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Diagonal of the scaling matrix, comma separated.
    #[arg(long = "norm-diag")]
    pub norm_diag: Option<String>,
    /// File holding the square scaling matrix.
    #[arg(long = "norm-file")]
    pub norm_file: Option<PathBuf>,
    /// Exponent of the norm: 1, 2 or inf.
    #[arg(long, default_value = "2")]
    pub p: String,
    /// `cate` or `catt`.
    #[arg(long, default_value = "cate")]
    pub target: String,
    /// Confidence intervals have level 1 - alpha.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Quantile of excess length minimized by the one-sided criterion.
    #[arg(long, default_value_t = 0.8)]
    pub beta: f64,
    /// `nn:J` or `nw:h`.
    #[arg(long, default_value = "nn:3")]
    pub variance: String,
    /// `analysis` or `mahalanobis`.
    #[arg(long = "variance-metric", default_value = "analysis")]
    pub variance_metric: String,
    /// Output format.
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Directory for cached solution paths.
    #[arg(long = "cache-dir")]
    pub cache_dir: Option<PathBuf>,
    /// Require the solution path to come from the cache.
    #[arg(long = "from-cache", requires = "cache_dir")]
    pub from_cache: bool,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lipschitz constant.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// Comma-separated subset of rmse, flci, oci.
    #[arg(long, default_value = "rmse,flci,oci")]
    pub criterion: String,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[command(flatten)]
    pub common: Common,
    /// Ascending, comma-separated Lipschitz constants.
    #[arg(long = "C-grid")]
    pub c_grid: String,
    /// Comma-separated subset of rmse, flci, oci.
    #[arg(long, default_value = "rmse,flci,oci")]
    pub criterion: String,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lipschitz constant.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// One weight per data row, in input order.
    #[arg(long)]
    pub weights: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchingArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lipschitz constant.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// A single number of matches.
    #[arg(long = "M", conflicts_with = "m_range")]
    pub m: Option<usize>,
    /// A range `a:b` of match counts to tune over.
    #[arg(long = "M-range")]
    pub m_range: Option<String>,
    /// `lowest` (lowest index wins) or `average` (split over ties).
    #[arg(long, default_value = "lowest")]
    pub ties: String,
    /// Comma-separated subset of rmse, flci, oci.
    #[arg(long, default_value = "rmse,flci,oci")]
    pub criterion: String,
}

#[derive(Debug, Args)]
pub struct DiagnosticsArgs {
    #[command(flatten)]
    pub common: Common,
    /// Lipschitz constant.
    #[arg(long = "C", default_value_t = 1.0)]
    pub c: f64,
    /// `lowest` (lowest index wins) or `average` (split over ties).
    #[arg(long, default_value = "lowest")]
    pub ties: String,
}

#[derive(Debug, Args)]
pub struct PathDumpArgs {
    #[command(flatten)]
    pub common: Common,
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn parse_criteria(s: &str) -> Result<Vec<Criterion>, CliError> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let c: Criterion = part.trim().parse().map_err(config_err)?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    if out.is_empty() {
        return Err(CliError::Config("no criteria given".into()));
    }
    Ok(out)
}

fn check_c(c: f64) -> Result<(), CliError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(CliError::Config(format!("--C must be positive and finite, got {c}")));
    }
    Ok(())
}

/// Echo of the settings that shaped a report.
#[derive(Debug, Serialize)]
pub struct ConfigEcho {
    pub csv: String,
    pub outcome: String,
    pub treatment: String,
    pub covariates: Vec<String>,
    pub n: usize,
    pub n_treated: usize,
    pub norm: NormSpec,
    pub target: TargetKind,
    pub alpha: f64,
    pub beta: f64,
    pub variance: String,
    pub variance_metric: VarianceMetric,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ties: Option<TiePolicy>,
}

/// A loaded and validated run.
pub struct Session {
    pub sample: Sample,
    pub lipschitz: LipschitzSpec,
    pub config: PipelineConfig,
    pub echo: ConfigEcho,
    pub format: Format,
    cache_dir: Option<PathBuf>,
    from_cache: bool,
}

impl Session {
    pub fn open(common: &Common) -> Result<Self, CliError> {
        let p: Exponent = common.p.parse().map_err(config_err)?;
        let target: TargetKind = common.target.parse().map_err(config_err)?;
        if target == TargetKind::Custom {
            return Err(CliError::Config("--target must be cate or catt".into()));
        }
        let levels = Levels {
            alpha: common.alpha,
            beta: common.beta,
        };
        levels.validate().map_err(config_err)?;
        let variance: VarianceMethod = common.variance.parse().map_err(config_err)?;
        if let VarianceMethod::NadarayaWatson { bandwidth } = variance {
            if !(bandwidth > 0.0) || !bandwidth.is_finite() {
                return Err(CliError::Config("the kernel bandwidth must be positive".into()));
            }
        }
        let metric: VarianceMetric = common.variance_metric.parse().map_err(config_err)?;
        let (sample, cols) = input::load_sample(
            &common.csv,
            &common.outcome,
            &common.treatment,
            common.covariates.as_deref(),
        )?;
        let norm = input::build_norm(
            common.norm_diag.as_deref(),
            common.norm_file.as_deref(),
            p,
            sample.dim(),
        )?;
        let lipschitz = LipschitzSpec::new(1.0, norm.clone()).map_err(config_err)?;
        let config = PipelineConfig {
            target,
            variance,
            metric,
            levels,
            path: PathOptions {
                checkpoint_every: CHECKPOINT_EVERY,
                ..PathOptions::default()
            },
        };
        let echo = ConfigEcho {
            csv: common.csv.display().to_string(),
            outcome: cols.outcome,
            treatment: cols.treatment,
            covariates: cols.covariates,
            n: sample.len(),
            n_treated: sample.n1(),
            norm,
            target,
            alpha: levels.alpha,
            beta: levels.beta,
            variance: variance.to_string(),
            variance_metric: metric,
            ties: None,
        };
        Ok(Self {
            sample,
            lipschitz,
            config,
            echo,
            format: common.format,
            cache_dir: common.cache_dir.clone(),
            from_cache: common.from_cache,
        })
    }

    /// Variance estimates and, when `with_path`, the solution path; read
    /// from and written to the cache when one is configured.
    pub fn prepare(&self, with_path: bool) -> Result<Prepared, CliError> {
        let key = cache::key(&self.sample, &self.lipschitz.norm, &self.config)?;
        if let Some(dir) = &self.cache_dir {
            if let Some(entry) = cache::load(dir, &key)? {
                return Ok(Prepared::from_parts(
                    &self.sample,
                    &self.lipschitz,
                    self.config.target,
                    entry.variance,
                    Some(entry.path),
                )?);
            }
            if self.from_cache {
                return Err(CliError::Config(format!(
                    "--from-cache: no cached path {key} in {}",
                    dir.display()
                )));
            }
        }
        let mut prepared = prepare_data(&self.sample, &self.lipschitz, &self.config)?;
        if with_path || self.cache_dir.is_some() {
            prepared.trace(&self.sample, &self.config.path)?;
        }
        if let (Some(dir), Some(path)) = (&self.cache_dir, &prepared.path) {
            cache::store(dir, &key, &prepared.variance, path)?;
        }
        Ok(prepared)
    }

    fn levels(&self) -> Levels {
        self.config.levels
    }

    fn render<R: Serialize>(&self, command: &'static str, results: R, table: impl Fn(&Value) -> String) -> Result<String, CliError> {
        let env = Envelope {
            schema: SCHEMA_ID,
            version: SCHEMA_VERSION,
            command,
            config: &self.echo,
            results,
        };
        let fail = |e: serde_json::Error| CliError::Numerical(e.to_string());
        match self.format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(&env).map_err(fail)?;
                s.push('\n');
                Ok(s)
            }
            Format::Table => Ok(table(&serde_json::to_value(&env.results).map_err(fail)?)),
        }
    }
}

fn warnings_for(rows: &[Row]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for r in rows.iter().filter(|r| r.lindeberg > LINDEBERG_WARNING) {
        let label = match (r.estimator, r.m, r.criterion) {
            ("matching", Some(m), _) => format!("matching with M = {m}"),
            (e, _, Some(k)) => format!("{e} {k}"),
            (e, _, None) => e.to_string(),
        };
        let msg = format!(
            "{label} (C = {}): largest squared weight is {:.3} of the total; normal approximation may be poor",
            r.c, r.lindeberg
        );
        if !out.contains(&msg) {
            out.push(msg);
        }
    }
    out
}

fn table_with_warnings(results: &Value, rows_key: &str) -> String {
    let rows = results[rows_key].as_array().cloned().unwrap_or_default();
    let mut out = rows_table(&rows, 3);
    if let Some(w) = results["warnings"].as_array() {
        for m in w {
            out.push_str(&format!("warning: {}\n", m.as_str().unwrap_or_default()));
        }
    }
    out
}

#[derive(Serialize)]
struct EstimateResults {
    c: f64,
    sigma2: f64,
    knots: usize,
    rows: Vec<Row>,
    limits: Vec<Row>,
    warnings: Vec<String>,
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<String, CliError> {
    check_c(args.c)?;
    let criteria = parse_criteria(&args.criterion)?;
    let s = Session::open(&args.common)?;
    let prep = s.prepare(true)?;
    let levels = s.levels();
    let rows = criteria
        .iter()
        .map(|&k| Ok(Row::from_estimate(&prep.optimal(&s.sample, args.c, k, levels)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let limits = [PathPoint::Zero, PathPoint::Infinity]
        .iter()
        .map(|&pt| Ok(Row::from_estimate(&prep.at_point(&s.sample, args.c, pt, None, levels.alpha)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let results = EstimateResults {
        c: args.c,
        sigma2: prep.variance.sigma2,
        knots: prep.path()?.num_knots(),
        warnings: warnings_for(&rows),
        rows,
        limits,
    };
    s.render("estimate", results, |v| {
        let mut out = table_with_warnings(v, "rows");
        let limits = v["limits"].as_array().cloned().unwrap_or_default();
        out.push_str("\npath limits\n");
        out.push_str(&rows_table(&limits, 3));
        out
    })
}

#[derive(Serialize)]
struct SensitivityResults {
    sigma2: f64,
    rows: Vec<Row>,
    warnings: Vec<String>,
}

pub fn cmd_sensitivity(args: &SensitivityArgs) -> Result<String, CliError> {
    let grid = input::parse_grid(&args.c_grid)?;
    let criteria = parse_criteria(&args.criterion)?;
    let s = Session::open(&args.common)?;
    let prep = s.prepare(true)?;
    let levels = s.levels();
    let per_c: Vec<Vec<Row>> = grid
        .par_iter()
        .map(|&c| {
            criteria
                .iter()
                .map(|&k| Ok(Row::from_estimate(&prep.optimal(&s.sample, c, k, levels)?)))
                .collect::<Result<Vec<_>, Error>>()
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let rows: Vec<Row> = per_c.into_iter().flatten().collect();
    let results = SensitivityResults {
        sigma2: prep.variance.sigma2,
        warnings: warnings_for(&rows),
        rows,
    };
    s.render("sensitivity", results, |v| table_with_warnings(v, "rows"))
}

#[derive(Serialize)]
struct AuditResults {
    sigma2: f64,
    row: Row,
    bias_to_se: f64,
    warnings: Vec<String>,
}

pub fn cmd_audit(args: &AuditArgs) -> Result<String, CliError> {
    check_c(args.c)?;
    let s = Session::open(&args.common)?;
    let weights = input::load_weights(&args.weights)?;
    if weights.len() != s.sample.len() {
        return Err(CliError::Data(format!(
            "{} holds {} weights but the data has {} rows",
            args.weights.display(),
            weights.len(),
            s.sample.len()
        )));
    }
    let prep = s.prepare(false)?;
    let est = prep.audit(&s.sample, args.c, weights, s.levels().alpha)?;
    let row = Row::from_estimate(&est);
    let ratio = if est.se_robust > 0.0 { est.maxbias / est.se_robust } else { f64::INFINITY };
    let mut warnings = warnings_for(std::slice::from_ref(&row));
    if ratio > 1.0 {
        warnings.push(format!(
            "worst-case bias is {ratio:.2} standard errors, so the critical value {:.2} is far above 1.96; \
             conventional intervals would undercover",
            est.cv
        ));
    }
    let results = AuditResults {
        sigma2: prep.variance.sigma2,
        row,
        bias_to_se: ratio,
        warnings,
    };
    s.render("audit", results, |v| {
        let rows = vec![v["row"].clone()];
        let mut out = rows_table(&rows, 3);
        for m in v["warnings"].as_array().into_iter().flatten() {
            out.push_str(&format!("warning: {}\n", m.as_str().unwrap_or_default()));
        }
        out
    })
}

#[derive(Serialize)]
struct MatchingResults {
    c: f64,
    sigma2: f64,
    ties: TiePolicy,
    fits: Vec<Row>,
    best: Vec<Row>,
    warnings: Vec<String>,
}

pub fn cmd_matching(args: &MatchingArgs) -> Result<String, CliError> {
    check_c(args.c)?;
    let criteria = parse_criteria(&args.criterion)?;
    let ties: TiePolicy = args.ties.parse().map_err(config_err)?;
    let range = match (&args.m, &args.m_range) {
        (Some(m), _) if *m >= 1 => *m..=*m,
        (Some(_), _) => return Err(CliError::Config("--M must be at least 1".into())),
        (None, Some(r)) => input::parse_range(r)?,
        (None, None) => 1..=1,
    };
    let mut s = Session::open(&args.common)?;
    s.echo.ties = Some(ties);
    let prep = s.prepare(false)?;
    let levels = s.levels();
    let fits: Vec<Row> = range
        .clone()
        .into_par_iter()
        .map(|m| Ok(Row::from_estimate(&prep.matching(&s.sample, args.c, m, ties, levels.alpha)?)))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut best = Vec::new();
    for &k in &criteria {
        let value = |r: &Row| crate::estimator::criterion(k, r.maxbias, r.se_homoskedastic, levels);
        let b = fits
            .iter()
            .fold(None::<&Row>, |acc, r| match acc {
                Some(a) if value(a) <= value(r) => Some(a),
                _ => Some(r),
            })
            .expect("non-empty range");
        best.push(b.clone().with_criterion(k.name()));
    }
    let results = MatchingResults {
        c: args.c,
        sigma2: prep.variance.sigma2,
        ties,
        warnings: warnings_for(&best),
        fits,
        best,
    };
    s.render("matching", results, |v| {
        let mut out = table_with_warnings(v, "best");
        let fits = v["fits"].as_array().cloned().unwrap_or_default();
        if fits.len() > 1 {
            out.push_str("\nall fits\n");
            out.push_str(&rows_table(&fits, 3));
        }
        out
    })
}

#[derive(Serialize)]
struct MatchSpread {
    treated_mean: f64,
    treated_max: usize,
    control_mean: f64,
    control_max: usize,
}

#[derive(Serialize)]
struct DiagnosticsResults {
    c: f64,
    sigma2: f64,
    knots: usize,
    checkpoints: usize,
    lindeberg_optimal_rmse: f64,
    lindeberg_matching_m1: Option<f64>,
    effective_matches: MatchSpread,
    efficiency_one_sided: f64,
    efficiency_flci: f64,
    degenerate_variance_windows: usize,
    warnings: Vec<String>,
}

fn effective_matches(path: &SolutionPath, mu: f64) -> Result<MatchSpread, Error> {
    let st = path.state_at(mu)?;
    let mut treated = vec![0usize; path.treated.len()];
    let mut control = vec![0usize; path.controls.len()];
    // lambda0 bounds counterfactuals of treated units, lambda1 of controls
    for l in st.lambda0.iter().filter(|l| l.value > 0.0) {
        treated[l.treated] += 1;
    }
    for l in st.lambda1.iter().filter(|l| l.value > 0.0) {
        control[l.control] += 1;
    }
    let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len().max(1) as f64;
    Ok(MatchSpread {
        treated_mean: mean(&treated),
        treated_max: treated.iter().copied().max().unwrap_or(0),
        control_mean: mean(&control),
        control_max: control.iter().copied().max().unwrap_or(0),
    })
}

pub fn cmd_diagnostics(args: &DiagnosticsArgs) -> Result<String, CliError> {
    check_c(args.c)?;
    let ties: TiePolicy = args.ties.parse().map_err(config_err)?;
    let mut s = Session::open(&args.common)?;
    s.echo.ties = Some(ties);
    let prep = s.prepare(true)?;
    let levels = s.levels();
    let path = prep.path()?;
    let opt = prep.optimal(&s.sample, args.c, Criterion::Rmse, levels)?;
    let mu = match opt.provenance {
        crate::pipeline::Provenance::Optimal {
            point: PathPoint::Mu(mu),
            ..
        } => mu,
        _ => path.knots.get(1).map_or(1.0, |k| k.mu),
    };
    let matching = match prep.matching(&s.sample, args.c, 1, ties, levels.alpha) {
        Ok(m) => Some(m.lindeberg),
        Err(Error::TooFewOpposite { .. }) => None,
        Err(e) => return Err(e.into()),
    };
    let eff = efficiency_bounds(path, args.c, levels)?;
    let mut warnings = Vec::new();
    if opt.lindeberg > LINDEBERG_WARNING {
        warnings.push(format!(
            "the RMSE-optimal weights put {:.3} of their squared mass on one unit",
            opt.lindeberg
        ));
    }
    if let Some(l) = matching.filter(|&l| l > LINDEBERG_WARNING) {
        warnings.push(format!("matching with M = 1 puts {l:.3} of its squared mass on one unit"));
    }
    if !prep.variance.degenerate.is_empty() {
        warnings.push(format!(
            "{} units had no other same-arm unit in their variance window",
            prep.variance.degenerate.len()
        ));
    }
    let results = DiagnosticsResults {
        c: args.c,
        sigma2: prep.variance.sigma2,
        knots: path.num_knots(),
        checkpoints: path.checkpoints.len(),
        lindeberg_optimal_rmse: opt.lindeberg,
        lindeberg_matching_m1: matching,
        effective_matches: effective_matches(path, mu)?,
        efficiency_one_sided: eff.one_sided,
        efficiency_flci: eff.flci,
        degenerate_variance_windows: prep.variance.degenerate.len(),
        warnings,
    };
    s.render("diagnostics", results, |v| {
        let keys = [
            "c",
            "sigma2",
            "knots",
            "checkpoints",
            "lindeberg_optimal_rmse",
            "lindeberg_matching_m1",
            "efficiency_one_sided",
            "efficiency_flci",
            "degenerate_variance_windows",
        ];
        let mut rows: Vec<Vec<String>> = keys.iter().map(|k| vec![k.to_string(), cell(&v[*k], 4)]).collect();
        for k in ["treated_mean", "treated_max", "control_mean", "control_max"] {
            rows.push(vec![format!("effective_matches.{k}"), cell(&v["effective_matches"][k], 4)]);
        }
        let mut out = render_table(&["quantity", "value"], &rows);
        for m in v["warnings"].as_array().into_iter().flatten() {
            out.push_str(&format!("warning: {}\n", m.as_str().unwrap_or_default()));
        }
        out
    })
}

#[derive(Serialize)]
struct KnotRow {
    index: usize,
    mu: f64,
    ops: usize,
    q: f64,
    p: f64,
    delta: f64,
    omega: f64,
    sd: f64,
    maxbias: f64,
}

#[derive(Serialize)]
struct PathDumpResults {
    sigma2: f64,
    complete: bool,
    knots: Vec<KnotRow>,
}

pub fn cmd_path_dump(args: &PathDumpArgs) -> Result<String, CliError> {
    let s = Session::open(&args.common)?;
    let prep = s.prepare(true)?;
    let path = prep.path()?;
    let knots = path
        .knots
        .iter()
        .zip(&path.segments)
        .enumerate()
        .map(|(i, (k, seg))| {
            let point = if i == 0 { PathPoint::Zero } else { PathPoint::Mu(k.mu) };
            let sum = path.summary(point, 1.0)?;
            Ok(KnotRow {
                index: i,
                mu: k.mu,
                ops: k.ops.len(),
                q: seg.q,
                p: seg.p,
                delta: sum.delta,
                omega: sum.omega,
                sd: sum.sd,
                maxbias: sum.maxbias,
            })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let results = PathDumpResults {
        sigma2: prep.variance.sigma2,
        complete: path.complete,
        knots,
    };
    s.render("path-dump", results, |v| {
        let keys = ["index", "mu", "ops", "delta", "omega", "sd", "maxbias"];
        let rows: Vec<Vec<String>> = v["knots"]
            .as_array()
            .into_iter()
            .flatten()
            .map(|r| keys.iter().map(|k| cell(&r[*k], 6)).collect())
            .collect();
        render_table(&keys, &rows)
    })
}

/// Runs a parsed command line and returns the text for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Sensitivity(a) => cmd_sensitivity(a),
        Command::Audit(a) => cmd_audit(a),
        Command::Matching(a) => cmd_matching(a),
        Command::Diagnostics(a) => cmd_diagnostics(a),
        Command::PathDump(a) => cmd_path_dump(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("honest-ate: {e}");
            e.exit_code()
        }
    }
}
