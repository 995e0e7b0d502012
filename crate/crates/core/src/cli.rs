//! Batch command-line interface: `synth`, `fit`, `sample` and `eval`.

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{MqgmError, Result};
use crate::evalsuite::calibration::{all_conditionals, cdf_calibration, CalibrationOptions};
use crate::evalsuite::path::{method_roc, AucMode, Method, PathSettings};
use crate::evalsuite::recovery::recovery_rate;
use crate::features::{fit_basis, Dataset};
use crate::gibbs::{gibbs_sample, GibbsConfig};
use crate::io::{format_f64, read_dataset, write_dataset, write_matrix_file};
use crate::model::{EdgeSet, MqgmModel};
use crate::proxops::QuantileGrid;
use crate::solver::{fit_mqgm, lambda_max, SolverConfig};
use crate::synthdata::{
    gen_autoregressive_ring, gen_ring, gen_sparse_gaussian, gen_sparse_t, RingParams, SyntheticInstance,
};

#[derive(Debug, Parser)]
#[command(name = "mqgm", version, about = "Multiple quantile graphical models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with its true edge set.
    Synth(SynthArgs),
    /// Fit an MQGM to a CSV dataset.
    Fit(FitArgs),
    /// Draw Gibbs samples from a fitted model.
    Sample(SampleArgs),
    /// Structure-recovery and calibration reports.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Generator {
    Ring,
    Gaussian,
    T,
    Autoregressive,
}

#[derive(Debug, Args)]
struct RingArgs {
    /// Upper end of the uniform angle range (radians).
    #[arg(long, default_value_t = 2.0 * std::f64::consts::PI)]
    angle_max: f64,
    #[arg(long, default_value_t = 1.0)]
    radius_mean: f64,
    /// Radius noise; a variance unless --noise-sd is given.
    #[arg(long, default_value_t = 0.1)]
    radius_noise: f64,
    /// Read --radius-noise as a standard deviation.
    #[arg(long)]
    noise_sd: bool,
}

impl RingArgs {
    fn params(&self) -> RingParams {
        RingParams {
            angle_max: self.angle_max,
            radius_mean: self.radius_mean,
            radius_noise: self.radius_noise,
            noise_is_variance: !self.noise_sd,
        }
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(value_enum)]
    generator: Generator,
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Dimension (ignored for ring, which is always 4).
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 0.1)]
    edge_prob: f64,
    /// Degrees of freedom for the t generator.
    #[arg(long, default_value_t = 3.0)]
    dof: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for data.csv, truth.json and descriptor.json.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[command(flatten)]
    ring: RingArgs,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// Group-lasso weight. Defaults to --lambda-ratio times lambda_max.
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    lambda_ratio: f64,
    #[arg(long, default_value_t = 0.0)]
    lambda2: f64,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 2000)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol_abs: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol_rel: f64,
    #[arg(long)]
    no_noncrossing: bool,
    #[arg(long)]
    residual_balancing: bool,
    #[arg(long, default_value_t = 1.0)]
    relaxation: f64,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda1: self.lambda1.unwrap_or(0.0),
            lambda2: self.lambda2,
            rho: self.rho,
            max_iters: self.max_iters,
            tol_abs: self.tol_abs,
            tol_rel: self.tol_rel,
            noncrossing: !self.no_noncrossing,
            residual_balancing: self.residual_balancing,
            relaxation: self.relaxation,
        }
    }
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Basis functions per variable.
    #[arg(long, default_value_t = 10)]
    m: usize,
    /// Number of quantile levels, spaced l/(r+1).
    #[arg(long, default_value_t = 20)]
    r: usize,
    /// Explicit comma-separated quantile levels (overrides --r).
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

impl GridArgs {
    fn grid(&self) -> Result<QuantileGrid> {
        match &self.levels {
            Some(levels) => QuantileGrid::new(levels.clone()),
            None => QuantileGrid::uniform(self.r),
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "model.json")]
    out: PathBuf,
    /// Per-variable solver diagnostics (JSON).
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Columns to treat as exogenous features.
    #[arg(long, value_delimiter = ',')]
    exogenous: Vec<String>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    burn_in: usize,
    #[arg(long, default_value_t = 5)]
    thin: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
    /// Exogenous feature values held fixed during sampling.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Starting point (defaults to the training medians).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    init: Option<Vec<f64>>,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// ROC curve and AUC of one method over a tuning-parameter path.
    Auc(AucArgs),
    /// Binned conditional-CDF distances between a fitted model and the data.
    Calibration(CalibrationArgs),
    /// Exact-recovery rate over seeded synthetic trials.
    Recovery(RecoveryArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Mqgm,
    Mb,
    Laplace,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mqgm => Method::Mqgm,
            MethodArg::Mb => Method::Mb,
            MethodArg::Laplace => Method::Laplace,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Refit,
    Threshold,
}

#[derive(Debug, Args)]
struct PathArgs {
    /// Number of path points.
    #[arg(long = "path", default_value_t = 20)]
    points: usize,
    /// Smallest path value as a fraction of lambda_max.
    #[arg(long, default_value_t = 1e-3)]
    min_ratio: f64,
    #[arg(long, value_enum, default_value_t = MethodArg::Mqgm)]
    method: MethodArg,
    #[command(flatten)]
    grid: GridArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

impl PathArgs {
    fn settings(&self) -> Result<PathSettings> {
        let mut s = PathSettings::new(self.grid.m, self.grid.grid()?);
        s.solver = self.solver.config();
        s.points = self.points;
        s.min_ratio = self.min_ratio;
        Ok(s)
    }
}

#[derive(Debug, Args)]
struct AucArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Refit)]
    mode: ModeArg,
    #[arg(long, default_value = "auc.json")]
    out: PathBuf,
    /// Tidy ROC table: method, lambda, fpr, tpr.
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    path: PathArgs,
}

#[derive(Debug, Args)]
struct CalibrationArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_delimiter = ',')]
    exogenous: Vec<String>,
    #[arg(long, default_value_t = 5)]
    bins: usize,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "calibration.json")]
    out: PathBuf,
    /// Tidy per-bin table: target, given, bin, tv, ks.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Tidy fitted quantiles at the training rows: row, variable, level, value.
    #[arg(long)]
    quantiles: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecoveryArgs {
    #[arg(long, value_enum, default_value_t = Generator::Ring)]
    generator: Generator,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 0.1)]
    edge_prob: f64,
    #[arg(long, default_value_t = 3.0)]
    dof: f64,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// First seed; trials use consecutive seeds.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "recovery.json")]
    out: PathBuf,
    #[arg(long)]
    table: Option<PathBuf>,
    #[command(flatten)]
    ring: RingArgs,
    #[command(flatten)]
    path: PathArgs,
}

/// A failure with its process exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

/// Validation problems exit with 2, failures during computation with 3.
fn usage(e: MqgmError) -> CliError {
    CliError { code: 2, message: e.to_string() }
}

fn runtime(e: MqgmError) -> CliError {
    let code = match &e {
        MqgmError::InvalidArgument(_) | MqgmError::DimensionMismatch(_) | MqgmError::ConstantVariable(_) => 2,
        MqgmError::Subproblem { source, .. }
            if matches!(**source, MqgmError::InvalidArgument(_) | MqgmError::DimensionMismatch(_)) =>
        {
            2
        }
        _ => 3,
    };
    CliError { code, message: e.to_string() }
}

fn io_error(path: &Path, e: MqgmError) -> CliError {
    CliError { code: 2, message: format!("{}: {e}", path.display()) }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Sample(a) => single_threaded(|| cmd_sample(&a)),
        Command::Eval(EvalCommand::Auc(a)) => single_threaded(|| cmd_auc(&a)),
        Command::Eval(EvalCommand::Calibration(a)) => single_threaded(|| cmd_calibration(&a)),
        Command::Eval(EvalCommand::Recovery(a)) => single_threaded(|| cmd_recovery(&a)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn with_threads<T>(threads: usize, f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T>
where
    T: Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError { code: 3, message: e.to_string() })?;
    pool.install(f)
}

fn single_threaded<T: Send>(f: impl FnOnce() -> CliResult<T> + Send) -> CliResult<T> {
    with_threads(1, f)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut file = File::create(path).map_err(|e| runtime(e.into()))?;
    serde_json::to_writer_pretty(&mut file, value).map_err(|e| runtime(e.into()))?;
    file.write_all(b"\n").map_err(|e| runtime(e.into()))
}

fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| runtime(e.into()))?;
    w.write_record(header).map_err(|e| runtime(e.into()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| runtime(e.into()))?;
    }
    w.flush().map_err(|e| runtime(e.into()))
}

fn generate(
    generator: Generator,
    n: usize,
    d: usize,
    edge_prob: f64,
    dof: f64,
    seed: u64,
    ring: RingParams,
) -> Result<SyntheticInstance> {
    match generator {
        Generator::Ring => gen_ring(n, seed, ring),
        Generator::Gaussian => gen_sparse_gaussian(n, d, edge_prob, seed),
        Generator::T => gen_sparse_t(n, d, edge_prob, dof, seed),
        Generator::Autoregressive => gen_autoregressive_ring(n, d, seed, ring),
    }
}

fn cmd_synth(a: &SynthArgs) -> CliResult<()> {
    let inst = generate(a.generator, a.n, a.d, a.edge_prob, a.dof, a.seed, a.ring.params()).map_err(runtime)?;
    std::fs::create_dir_all(&a.out).map_err(|e| runtime(e.into()))?;
    write_dataset(&a.out.join("data.csv"), &inst.data).map_err(runtime)?;
    write_json(&a.out.join("truth.json"), &inst.truth.to_json(inst.data.names()))?;
    write_json(&a.out.join("descriptor.json"), &inst.descriptor)?;
    if let Some(omega) = &inst.precision {
        write_matrix_file(&a.out.join("precision.csv"), inst.data.names(), omega.view()).map_err(runtime)?;
    }
    Ok(())
}

fn load_data(path: &Path, exogenous: &[String]) -> CliResult<Dataset> {
    read_dataset(path, exogenous).map_err(|e| io_error(path, e))
}

fn cmd_fit(a: &FitArgs) -> CliResult<()> {
    let data = load_data(&a.data, &a.exogenous)?;
    let grid = a.grid.grid().map_err(usage)?;
    let mut cfg = a.solver.config();
    cfg.validate().map_err(usage)?;
    if a.grid.m == 0 {
        return Err(usage(MqgmError::InvalidArgument("m must be at least 1".into())));
    }
    let model = with_threads(a.threads, || {
        let basis = fit_basis(&data, a.grid.m).map_err(usage)?;
        if a.solver.lambda1.is_none() {
            let lmax = lambda_max(&data, &basis, &grid, &cfg, 1e-3).map_err(runtime)?;
            cfg.lambda1 = a.solver.lambda_ratio * lmax;
        }
        fit_mqgm(&data, &basis, &grid, &cfg).map_err(runtime)
    })?;
    model.save(&a.out).map_err(runtime)?;
    let mut diag = model.diagnostics_json();
    diag["lambda1"] = serde_json::json!(cfg.lambda1);
    if let Some(path) = &a.diagnostics {
        write_json(path, &diag)?;
    }
    if !model.all_converged() {
        eprintln!("warning: {}", diag["warning"].as_str().unwrap_or("some subproblems did not converge"));
    }
    Ok(())
}

fn load_model(path: &Path) -> CliResult<MqgmModel> {
    MqgmModel::load(path).map_err(|e| io_error(path, e))
}

fn cmd_sample(a: &SampleArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let init = a.init.clone().unwrap_or_else(|| model.init().to_vec());
    if init.len() != model.d() {
        return Err(usage(MqgmError::DimensionMismatch(format!(
            "--init has {} values, model has d = {}",
            init.len(),
            model.d()
        ))));
    }
    let x_len = a.x.as_ref().map_or(0, Vec::len);
    if x_len != model.p() {
        return Err(usage(MqgmError::DimensionMismatch(format!(
            "--x has {x_len} values, model has p = {}",
            model.p()
        ))));
    }
    let cfg = GibbsConfig {
        n_samples: a.n,
        burn_in: a.burn_in,
        thin: a.thin,
        seed: a.seed,
        ..Default::default()
    };
    let samples = gibbs_sample(&model, &init, a.x.as_deref(), &cfg).map_err(runtime)?;
    write_matrix_file(&a.out, model.names(), samples.view()).map_err(runtime)
}

#[derive(Serialize)]
struct AucReport<'a> {
    method: &'a str,
    mode: &'a str,
    path_points: usize,
    min_ratio: f64,
    auc: f64,
    points: &'a [crate::evalsuite::roc::RocPoint],
}

fn cmd_auc(a: &AucArgs) -> CliResult<()> {
    let data = load_data(&a.data, &[])?;
    let text = std::fs::read_to_string(&a.truth).map_err(|e| io_error(&a.truth, e.into()))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_error(&a.truth, e.into()))?;
    let truth = EdgeSet::from_json(&value).map_err(|e| io_error(&a.truth, e))?;
    if truth.d() != data.d() {
        return Err(usage(MqgmError::DimensionMismatch(format!(
            "truth has d = {}, data has d = {}",
            truth.d(),
            data.d()
        ))));
    }
    let settings = a.path.settings().map_err(usage)?;
    settings.solver.validate().map_err(usage)?;
    let method: Method = a.path.method.into();
    let mode = match a.mode {
        ModeArg::Refit => AucMode::Refit,
        ModeArg::Threshold => AucMode::Threshold,
    };
    let roc = method_roc(method, &data, &truth, &settings, mode).map_err(runtime)?;
    let report = AucReport {
        method: method.name(),
        mode: match mode {
            AucMode::Refit => "refit",
            AucMode::Threshold => "threshold",
        },
        path_points: settings.points,
        min_ratio: settings.min_ratio,
        auc: roc.auc,
        points: &roc.points,
    };
    write_json(&a.out, &report)?;
    if let Some(table) = &a.table {
        let rows = roc.points.iter().map(|p| {
            vec![method.name().to_string(), format_f64(p.param), format_f64(p.fpr), format_f64(p.tpr)]
        });
        write_rows(table, &["method", "lambda", "fpr", "tpr"], rows)?;
    }
    Ok(())
}

fn cmd_calibration(a: &CalibrationArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let data = load_data(&a.data, &a.exogenous)?;
    if data.d() != model.d() || data.p() != model.p() {
        return Err(usage(MqgmError::DimensionMismatch(format!(
            "model has d = {}, p = {}; data has d = {}, p = {}",
            model.d(),
            model.p(),
            data.d(),
            data.p()
        ))));
    }
    let opts = CalibrationOptions { bins: a.bins, points: a.points };
    let report = cdf_calibration(&model, &data, &all_conditionals(data.d()), &opts, a.seed).map_err(runtime)?;
    write_json(&a.out, &report)?;
    if let Some(table) = &a.table {
        let names = data.names();
        let rows = report.per_conditional.iter().map(|c| {
            vec![
                names[c.target].clone(),
                names[c.given].clone(),
                c.bin.to_string(),
                format_f64(c.tv),
                format_f64(c.ks),
            ]
        });
        write_rows(table, &["target", "given", "bin", "tv", "ks"], rows)?;
    }
    if let Some(path) = &a.quantiles {
        let table = model.fitted_quantiles_table(&data).map_err(runtime)?;
        let names = data.names();
        let rows = table
            .into_iter()
            .map(|(i, k, level, v)| vec![i.to_string(), names[k].clone(), format_f64(level), format_f64(v)]);
        write_rows(path, &["row", "variable", "level", "value"], rows)?;
    }
    Ok(())
}

fn cmd_recovery(a: &RecoveryArgs) -> CliResult<()> {
    if a.trials == 0 {
        return Err(usage(MqgmError::InvalidArgument("--trials must be at least 1".into())));
    }
    let settings = a.path.settings().map_err(usage)?;
    settings.solver.validate().map_err(usage)?;
    let seeds: Vec<u64> = (0..a.trials as u64).map(|t| a.seed + t).collect();
    let ring = a.ring.params();
    let gen = |seed| generate(a.generator, a.n, a.d, a.edge_prob, a.dof, seed, ring);
    let report = recovery_rate(&seeds, gen, a.path.method.into(), &settings).map_err(runtime)?;
    write_json(&a.out, &report)?;
    if let Some(table) = &a.table {
        let rows = report.trials.iter().map(|t| {
            vec![
                report.method.name().to_string(),
                t.seed.to_string(),
                t.recovered.to_string(),
                t.lambda.map(format_f64).unwrap_or_default(),
            ]
        });
        write_rows(table, &["method", "seed", "recovered", "lambda"], rows)?;
    }
    Ok(())
}
