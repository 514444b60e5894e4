//! Command-line front end for `perron-chain`: argument handling, source
//! loading, the five run modes and report emission.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use serde_json::{json, Value};
use thiserror::Error;

use perron_chain::convergence::{classify_recurrence, N_MAX};
use perron_chain::io::{ingest, write_csv_report, write_json_report, Ingested};
use perron_chain::matrix::{ball, build_kernel, is_irreducible, period};
use perron_chain::mc::{estimate_left, estimate_right, McConfig, DEFAULT_BATCHES, DEFAULT_SEED};
use perron_chain::metzler::{
    embedded_matrix, embedded_recurrence, estimate_metzler_mc, left_vector_metzler_series,
    spectral_bound_ladder,
};
use perron_chain::models::{parse_model, AnalyticReference, Realization};
use perron_chain::series::{eigen_pair, residuals, total_mass, Hypotheses, Horizon};
use perron_chain::verify::{run_verify, VerifyConfig};
use perron_chain::{convergence_parameter_ladder, Error, MatrixSource, MetzlerSource, StateId};

pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_HYPOTHESES: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Adaptive step cap on infinite sources, where each step also widens the
/// reachable state set. Pass `--horizon` to go further.
pub const INFINITE_N_MAX: usize = 1 << 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Irreducibility, convergence parameter and recurrence.
    Analyze,
    /// Left and right vectors from the taboo series.
    EigSeries,
    /// Left and right vectors from regenerative Monte Carlo.
    EigMc,
    /// Spectral bound and left vector of a Metzler matrix.
    Metzler,
    /// Property suite on the built-in corpus.
    Verify,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "perron-chain", version, about = "Perron-Frobenius eigenvectors through Markov-chain representations")]
pub struct Cli {
    #[arg(value_enum)]
    pub mode: Mode,
    /// Matrix Market file (coordinate format).
    #[arg(long, conflicts_with = "model")]
    pub input: Option<PathBuf>,
    /// Built-in model: `srw:p=0.3`, `bd:lambda=1,mu=2`, `metzler-tri:diag=-2,off=1`.
    #[arg(long)]
    pub model: Option<String>,
    /// Reference state (0-based for files; the model's origin by default).
    #[arg(long, allow_hyphen_values = true)]
    pub k: Option<i64>,
    /// Use this R instead of computing it.
    #[arg(long = "R")]
    pub r: Option<f64>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    /// Fixed series horizon N; also the jump cap of MC excursions.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Excursions per estimate (`metzler` runs MC only when this is given).
    #[arg(long)]
    pub excursions: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    pub batches: usize,
    /// Worker threads for the parallel stages.
    #[arg(long, env = "PERRON_CHAIN_THREADS")]
    pub threads: Option<usize>,
    /// Truncation radii for infinite sources.
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub radii: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Report path; stdout when absent.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("hypotheses not satisfied: {0}")]
    Hypotheses(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_PARSE,
            CliError::Hypotheses(_) => EXIT_HYPOTHESES,
            CliError::Core(e) => match e {
                Error::Parse { .. }
                | Error::NegativeOffDiagonal { .. }
                | Error::DuplicateEntry { .. }
                | Error::NegativeEntry { .. }
                | Error::UnknownState(_)
                | Error::Domain(_)
                | Error::InvalidArgument(_)
                | Error::Io(_)
                | Error::Json(_) => EXIT_PARSE,
                Error::NonFiniteRowSum { .. }
                | Error::ShiftInadmissible { .. }
                | Error::LemmaViolated { .. } => EXIT_HYPOTHESES,
                Error::HorizonOverflow { .. }
                | Error::StateBudgetExhausted { .. }
                | Error::NoConvergence { .. }
                | Error::LadderNotMonotone { .. }
                | Error::AllTruncated { .. }
                | Error::NonPositiveScale { .. } => EXIT_NUMERICAL,
            },
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// What the run reads.
#[derive(Clone, Debug, PartialEq)]
pub enum InputSpec {
    File(PathBuf),
    Model(String),
    BuiltIn,
}

/// Validated run settings.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: InputSpec,
    pub k: Option<i64>,
    pub r_override: Option<f64>,
    pub tol: f64,
    pub horizon: Option<usize>,
    pub excursions: Option<u64>,
    pub seed: u64,
    pub batches: usize,
    pub radii: Vec<usize>,
    pub format: Format,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_cli(cli: &Cli) -> CliResult<Self> {
        let input = match (&cli.input, &cli.model, cli.mode) {
            (_, _, Mode::Verify) => InputSpec::BuiltIn,
            (Some(p), None, _) => InputSpec::File(p.clone()),
            (None, Some(m), _) => InputSpec::Model(m.clone()),
            _ => return Err(CliError::Usage("this mode needs --input or --model".into())),
        };
        if !(cli.tol > 0.0 && cli.tol < 1.0) {
            return Err(CliError::Usage(format!("--tol must lie in (0, 1), got {}", cli.tol)));
        }
        if let Some(r) = cli.r {
            if !(r > 0.0 && r.is_finite()) {
                return Err(CliError::Usage(format!("--R must be positive and finite, got {r}")));
            }
        }
        if cli.horizon == Some(0) {
            return Err(CliError::Usage("--horizon must be at least 1".into()));
        }
        if cli.radii.is_empty() || cli.radii.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("--radii must be strictly increasing".into()));
        }
        Ok(RunConfig {
            mode: cli.mode,
            input,
            k: cli.k,
            r_override: cli.r,
            tol: cli.tol,
            horizon: cli.horizon,
            excursions: cli.excursions,
            seed: cli.seed,
            batches: cli.batches,
            radii: cli.radii.clone(),
            format: cli.format,
            output: cli.output.clone(),
        })
    }

    fn horizon(&self, n_states: Option<usize>) -> Horizon {
        match (self.horizon, n_states) {
            (Some(n), _) => Horizon::fixed(n),
            (None, Some(_)) => Horizon::adaptive(self.tol),
            (None, None) => Horizon::Adaptive { tol: self.tol, n_max: INFINITE_N_MAX },
        }
    }

    /// Step limit for recurrence checks.
    fn steps(&self, n_states: Option<usize>) -> usize {
        self.horizon.unwrap_or(if n_states.is_some() { N_MAX } else { INFINITE_N_MAX })
    }

    fn max_radius(&self) -> usize {
        self.radii.last().copied().unwrap_or(64)
    }

    fn mc(&self, k: StateId, default_excursions: u64) -> McConfig {
        let mut cfg = McConfig::new(k, self.excursions.unwrap_or(default_excursions));
        cfg.seed = self.seed;
        cfg.batches = self.batches;
        if let Some(n) = self.horizon {
            cfg.horizon_cap = n;
        }
        cfg
    }
}

/// A report plus the exit code it carries.
#[derive(Debug)]
pub struct Outcome {
    pub report: Value,
    pub code: i32,
}

impl Outcome {
    fn ok(report: Value) -> Self {
        Outcome { report, code: 0 }
    }
}

enum Loaded {
    NonNegative {
        src: MatrixSource,
        k: StateId,
        reference: Option<AnalyticReference>,
        label: Value,
    },
    Metzler {
        g: MetzlerSource,
        k: StateId,
        reference: Option<AnalyticReference>,
        label: Value,
    },
}

fn load(cfg: &RunConfig) -> CliResult<Loaded> {
    match &cfg.input {
        InputSpec::File(path) => {
            let k = StateId(cfg.k.unwrap_or(0));
            let label = json!({ "input": path.display().to_string() });
            Ok(match ingest(path)? {
                Ingested::NonNegative(src) => Loaded::NonNegative { src, k, reference: None, label },
                Ingested::Metzler(g) => Loaded::Metzler { g, k, reference: None, label },
            })
        }
        InputSpec::Model(spec) => {
            let m = parse_model(spec)?;
            let k = cfg.k.map(StateId).unwrap_or(m.origin);
            let label = json!({ "model": m.name, "parameters": m.parameters });
            let reference = Some(m.reference.clone());
            Ok(match m.realization {
                Realization::NonNegative(src) => Loaded::NonNegative { src, k, reference, label },
                Realization::Metzler(g) => Loaded::Metzler { g, k, reference, label },
            })
        }
        InputSpec::BuiltIn => Err(CliError::Usage("verify reads no input".into())),
    }
}

fn finite_k(n: Option<usize>, k: StateId) -> CliResult<()> {
    match n {
        Some(n) if k.index().is_none_or(|i| i >= n) => Err(Error::UnknownState(k).into()),
        _ => Ok(()),
    }
}

/// States the vectors are evaluated on: every state of a finite source, the
/// ball of the largest radius otherwise.
fn evaluation_states(src: &MatrixSource, k: StateId, radius: usize) -> CliResult<Vec<StateId>> {
    Ok(match src.states() {
        Some(all) => all,
        None => ball(src, k, radius)?,
    })
}

fn irreducibility(src: &MatrixSource, k: StateId, radius: usize) -> CliResult<Value> {
    let radius = src.n_states().unwrap_or(radius);
    let verdict = is_irreducible(src, k, radius)?;
    if !verdict.holds() {
        return Err(CliError::Hypotheses(format!("matrix is reducible: {verdict:?}")));
    }
    Ok(serde_json::to_value(verdict).map_err(Error::from)?)
}

fn resolve_r(cfg: &RunConfig, src: &MatrixSource, k: StateId, reference: &Option<AnalyticReference>) -> CliResult<(f64, &'static str)> {
    if let Some(r) = cfg.r_override {
        return Ok((r, "override"));
    }
    if let Some(r) = reference.as_ref().and_then(|m| m.r) {
        return Ok((r, "analytic-model"));
    }
    let rep = convergence_parameter_ladder(src, k, &cfg.radii, cfg.tol)?;
    Ok((rep.r, if src.is_finite() { "dense-oracle" } else { "truncation-ladder" }))
}

fn to_value<T: serde::Serialize>(v: &T) -> CliResult<Value> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn analyze(cfg: &RunConfig, loaded: Loaded) -> CliResult<Outcome> {
    match loaded {
        Loaded::NonNegative { src, k, reference, label } => {
            finite_k(src.n_states(), k)?;
            let irr = irreducibility(&src, k, cfg.max_radius())?;
            let states = evaluation_states(&src, k, cfg.max_radius())?;
            let d = period(&src, &states, k)?;
            let conv = convergence_parameter_ladder(&src, k, &cfg.radii, cfg.tol)?;
            let mut report = json!({
                "mode": "analyze",
                "source": label,
                "k": k,
                "irreducibility": irr,
                "period": d,
                "convergence": to_value(&conv)?,
            });
            if let Some(r) = cfg.r_override {
                let c = classify_recurrence(&src, r, k, cfg.steps(src.n_states()), cfg.tol.max(1e-9))?;
                report["recurrence_at_R"] = json!({ "R": r, "classification": to_value(&c)? });
            }
            if let Some(m) = reference {
                report["reference"] = to_value(&m)?;
            }
            Ok(Outcome::ok(report))
        }
        Loaded::Metzler { g, k, reference, label } => {
            finite_k(g.n_states(), k)?;
            let pattern = g.positivity_pattern()?;
            let irr = irreducibility(&pattern, k, cfg.max_radius())?;
            let spectral = spectral_bound_ladder(&g, k, &cfg.radii, cfg.tol)?;
            let mbar = embedded_matrix(&g, spectral.lambda)?;
            let rec = embedded_recurrence(&mbar, k, cfg.steps(g.n_states()), cfg.tol.max(1e-9))?;
            let mut report = json!({
                "mode": "analyze",
                "source": label,
                "k": k,
                "irreducibility": irr,
                "spectral": to_value(&spectral)?,
                "embedded_recurrence": to_value(&rec)?,
            });
            if let Some(m) = reference {
                report["reference"] = to_value(&m)?;
            }
            Ok(Outcome::ok(report))
        }
    }
}

fn nonnegative(loaded: Loaded, mode: &str) -> CliResult<(MatrixSource, StateId, Option<AnalyticReference>, Value)> {
    match loaded {
        Loaded::NonNegative { src, k, reference, label } => Ok((src, k, reference, label)),
        Loaded::Metzler { .. } => Err(CliError::Usage(format!(
            "{mode} needs a non-negative matrix; use the metzler mode for negative diagonals"
        ))),
    }
}

fn eig_series(cfg: &RunConfig, loaded: Loaded) -> CliResult<Outcome> {
    let (src, k, reference, label) = nonnegative(loaded, "eig-series")?;
    finite_k(src.n_states(), k)?;
    let (r, r_method) = resolve_r(cfg, &src, k, &reference)?;
    let states = evaluation_states(&src, k, cfg.max_radius())?;
    let horizon = cfg.horizon(src.n_states());
    let pair = eigen_pair(&src, r, k, Some(&states), horizon)?;
    let mass = total_mass(&src, r, k, horizon)?;
    let hypotheses = pair.hypotheses;
    let report = json!({
        "mode": "eig-series",
        "source": label,
        "R_method": r_method,
        "result": to_value(&pair)?,
        "total_mass": to_value(&mass)?,
    });
    let code = if hypotheses == Hypotheses::NotSatisfied { EXIT_HYPOTHESES } else { 0 };
    Ok(Outcome { report, code })
}

fn eig_mc(cfg: &RunConfig, loaded: Loaded) -> CliResult<Outcome> {
    let (src, k, reference, label) = nonnegative(loaded, "eig-mc")?;
    finite_k(src.n_states(), k)?;
    let (r, r_method) = resolve_r(cfg, &src, k, &reference)?;
    let states = evaluation_states(&src, k, cfg.max_radius())?;
    let kernel = build_kernel(&src)?;
    let mc = cfg.mc(k, 100_000);
    let left = estimate_left(&kernel, r, &mc)?;
    let right = estimate_right(&kernel, r, &mc, &states)?;
    let u = left.states.iter().map(|s| (s.state, s.estimate)).collect();
    let y = right.states.iter().map(|s| (s.state, s.estimate)).collect();
    let res = residuals(&src, Some(&u), Some(&y), r)?;
    let report = json!({
        "mode": "eig-mc",
        "source": label,
        "R": r,
        "R_method": r_method,
        "config": to_value(&mc)?,
        "left": to_value(&left)?,
        "right": to_value(&right)?,
        "residuals": to_value(&res)?,
    });
    Ok(Outcome::ok(report))
}

fn metzler(cfg: &RunConfig, loaded: Loaded) -> CliResult<Outcome> {
    let (g, k, reference, label) = match loaded {
        Loaded::Metzler { g, k, reference, label } => (g, k, reference, label),
        Loaded::NonNegative { src, k, reference, label } => {
            // A non-negative matrix is Metzler with a non-negative diagonal.
            let rows = src
                .to_dense()
                .ok_or_else(|| CliError::Usage("the metzler mode needs a Metzler model or a finite file".into()))?;
            (MetzlerSource::from_dense(&rows)?, k, reference, label)
        }
    };
    finite_k(g.n_states(), k)?;
    let spectral = spectral_bound_ladder(&g, k, &cfg.radii, cfg.tol)?;
    // A truncation ladder only bounds λ from below, so a model's exact value wins.
    let (lambda, lambda_method) = match reference.as_ref().and_then(|m| m.lambda) {
        Some(l) => (l, "analytic-model"),
        None => (spectral.lambda, if g.n_states().is_some() { "dense-oracle" } else { "truncation-ladder" }),
    };
    let mbar = embedded_matrix(&g, lambda)?;
    let rec = embedded_recurrence(&mbar, k, cfg.steps(g.n_states()), cfg.tol.max(1e-9))?;
    let states = match g.states() {
        Some(all) => all,
        None => ball(&g.positivity_pattern()?, k, cfg.max_radius())?,
    };
    let series = left_vector_metzler_series(&g, lambda, k, Some(&states), cfg.horizon(g.n_states()))?;
    let mut report = json!({
        "mode": "metzler",
        "source": label,
        "spectral": to_value(&spectral)?,
        "lambda": lambda,
        "lambda_method": lambda_method,
        "embedded_recurrence": to_value(&rec)?,
        "series": to_value(&series)?,
    });
    if cfg.excursions.is_some() {
        let mc = cfg.mc(k, 0);
        report["mc"] = to_value(&estimate_metzler_mc(&g, lambda, &mc)?)?;
    }
    if let Some(m) = reference {
        report["reference"] = to_value(&m)?;
    }
    let code = if series.hypotheses == Hypotheses::NotSatisfied { EXIT_HYPOTHESES } else { 0 };
    Ok(Outcome { report, code })
}

fn verify(cfg: &RunConfig) -> CliResult<Outcome> {
    let mut vc = VerifyConfig::default();
    if let Some(n) = cfg.excursions {
        vc.excursions = n;
        vc.metzler_excursions = n;
    }
    vc.batches = cfg.batches;
    vc.seeds = (0..vc.seeds.len() as u64).map(|s| cfg.seed.wrapping_add(s)).collect();
    vc.metzler_seed = cfg.seed;
    let report = run_verify(&vc)?;
    let code = if report.passed { 0 } else { EXIT_VERIFY_FAILED };
    Ok(Outcome { report: to_value(&report)?, code })
}

/// Runs the selected pipeline and returns its report.
pub fn run(cfg: &RunConfig) -> CliResult<Outcome> {
    if cfg.mode == Mode::Verify {
        return verify(cfg);
    }
    let loaded = load(cfg)?;
    match cfg.mode {
        Mode::Analyze => analyze(cfg, loaded),
        Mode::EigSeries => eig_series(cfg, loaded),
        Mode::EigMc => eig_mc(cfg, loaded),
        Mode::Metzler => metzler(cfg, loaded),
        Mode::Verify => unreachable!(),
    }
}

pub fn emit(cfg: &RunConfig, report: &Value) -> CliResult<()> {
    let out: Box<dyn Write> = match &cfg.output {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(Error::from)?)),
        None => Box::new(io::stdout().lock()),
    };
    match cfg.format {
        Format::Json => write_json_report(out, report)?,
        Format::Csv => write_csv_report(out, report)?,
    }
    Ok(())
}
