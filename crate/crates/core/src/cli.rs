//! Command-line front end shared by the `kronsolve` binary and the CLI tests.
//!
//! Every subcommand writes its outputs atomically and drops the fully
//! resolved settings next to the primary output as `<output>.config`, in the
//! same flat `key = value` format that `--config` reads.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::enkf::{
    metrics_csv, run_filter, CovarianceEstimator, FilterConfig, IdentityEstimator, SampleRidgeEstimator,
    SgPalmEstimator, SyGlassoEstimator,
};
use crate::error::{Error, Result};
use crate::gram::SampleSet;
use crate::kten::{read_factors, read_kten, write_atomic, write_factors, write_kten};
use crate::metrics::{fnorm_rel_error, fpr_fnr, mcc, SupportMask, SUPPORT_THRESHOLD};
use crate::pde::{
    generate_factors, ks_default_dt, sample_sylvester, simulate, DynamicsModel, FactorGraphSpec, FactorKind,
    GridSpec, ModelKind, Trajectory,
};
use crate::penalty::PenaltyKind;
use crate::sgpalm::{self, theorem_penalties, SolveTrace, SolverConfig};
use crate::syglasso::{self, SyGlassoConfig, WMode};
use crate::tensor::{kron_sum_dense, DenseTensor, SylvesterFactors};

/// Environment variable consulted when `--threads` is absent.
pub const THREADS_ENV: &str = "KRONSOLVE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "kronsolve", version, about = "Sparse Kronecker-structured precision estimation and multiway EnKF")]
pub struct Cli {
    /// Cap on worker threads (falls back to KRONSOLVE_THREADS, then all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file of defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate PDE trajectories or Sylvester-model samples.
    Simulate(SimulateArgs),
    /// Fit Kronecker-sum factors with SG-PALM or SyGlasso.
    Estimate(EstimateArgs),
    /// Run the ensemble Kalman filter against a simulated truth.
    Track(TrackArgs),
    /// Compare estimated factors with the truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimModel {
    PoissonAr,
    ConvectionDiffusion,
    Ks,
    /// Samples of the Sylvester graphical model with random sparse factors.
    Sylvester,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Ar1,
    Sb,
    Er,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Sgpalm,
    Syglasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PenaltyArg {
    L1,
    Scad,
    Mcp,
}

impl From<PenaltyArg> for PenaltyKind {
    fn from(p: PenaltyArg) -> Self {
        match p {
            PenaltyArg::L1 => PenaltyKind::L1,
            PenaltyArg::Scad => PenaltyKind::Scad,
            PenaltyArg::Mcp => PenaltyKind::Mcp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WModeArg {
    Free,
    KroneckerSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EstimatorArg {
    Sgpalm,
    Syglasso,
    Sample,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Mcc,
    Fnorm,
    Fprfnr,
}

/// Dynamics flags shared by `simulate` and `track`.
#[derive(Debug, Clone, Args)]
pub struct DynamicsArgs {
    /// Grid sizes; two for PDE models, one per mode for `sylvester`.
    #[arg(long, num_args = 1.., required = true, value_name = "D")]
    pub grid: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    pub steps: usize,
    /// AR(1) coefficient of the Poisson source.
    #[arg(long, default_value_t = 0.8)]
    pub a: f64,
    /// Process noise std.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Diffusivity.
    #[arg(long, default_value_t = 1.0)]
    pub theta: f64,
    /// Convection velocity.
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Mesh spacing.
    #[arg(long, default_value_t = 1.0)]
    pub h: f64,
    /// Time step [default: 0.1 h for ks, 1 otherwise].
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl DynamicsArgs {
    fn grid_spec(&self, ks: bool) -> Result<GridSpec> {
        let [d1, d2] = self.grid[..] else {
            return Err(Error::InvalidParameter(format!("PDE models need two grid sizes, got {:?}", self.grid)));
        };
        let g = GridSpec {
            h: self.h,
            dt: self.dt.unwrap_or(if ks { ks_default_dt(self.h) } else { 1.0 }),
            ..GridSpec::new(d1, d2, self.steps)
        };
        g.validate()?;
        Ok(g)
    }

    fn model(&self, kind: ModelKind) -> DynamicsModel {
        match kind {
            ModelKind::PoissonAr1 => DynamicsModel::poisson_ar(self.a, self.sigma),
            ModelKind::ConvectionDiffusion => DynamicsModel::convection_diffusion(self.theta, self.eps, self.sigma),
            ModelKind::KuramotoSivashinsky => DynamicsModel::kuramoto_sivashinsky(self.sigma),
        }
    }

    fn entries(&self, out: &mut Vec<(&'static str, String)>) {
        let grid = self.grid.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        out.push(("grid", grid));
        out.push(("steps", self.steps.to_string()));
        out.push(("a", float(self.a)));
        out.push(("sigma", float(self.sigma)));
        out.push(("theta", float(self.theta)));
        out.push(("eps", float(self.eps)));
        out.push(("h", float(self.h)));
        if let Some(dt) = self.dt {
            out.push(("dt", float(dt)));
        }
        out.push(("seed", self.seed.to_string()));
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub model: SimModel,
    #[command(flatten)]
    pub dynamics: DynamicsArgs,
    /// Sample count for `sylvester`.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    /// Factor graph family for `sylvester`.
    #[arg(long, value_enum, default_value_t = GraphKind::Er)]
    pub graph: GraphKind,
    /// Correlation of the ar1 and sb graphs.
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Star block size of the sb graph.
    #[arg(long, default_value_t = 4)]
    pub block: usize,
    /// Edges per factor of the er graph.
    #[arg(long, default_value_t = 16)]
    pub edges: usize,
    /// States as a (d1, d2, T) tensor, or samples as (d_1, .., d_K, N).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the true factors (the spatial operator for linear PDEs).
    #[arg(long)]
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[arg(long, value_enum, default_value_t = Method::Sgpalm)]
    pub method: Method,
    /// Samples stacked along the last mode.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = PenaltyArg::L1)]
    pub penalty: PenaltyArg,
    /// C in lambda_k = C sqrt(d_k ln(d) / N).
    #[arg(long, default_value_t = 1.0)]
    pub lambda_scale: f64,
    /// SCAD/MCP shape [default: 3.7 for scad, 3 for mcp].
    #[arg(long)]
    pub shape: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    /// Subtract the sample mean first.
    #[arg(long)]
    pub center: bool,
    /// SyGlasso treatment of the diagonal tensor W.
    #[arg(long, value_enum, default_value_t = WModeArg::Free)]
    pub w_mode: WModeArg,
    /// SyGlasso: hold W at this KTEN tensor instead of updating it.
    #[arg(long)]
    pub fixed_w: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// SyGlasso W tensor output [default: <out>.w.kten].
    #[arg(long)]
    pub w_out: Option<PathBuf>,
    /// Per-iteration trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrackArgs {
    #[arg(long, value_enum, default_value_t = SimModel::PoissonAr)]
    pub model: SimModel,
    #[command(flatten)]
    pub dynamics: DynamicsArgs,
    #[arg(long, default_value_t = 15)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 0.5)]
    pub obs_frac: f64,
    /// Observation noise std.
    #[arg(long, default_value_t = 0.1)]
    pub obs_noise: f64,
    #[arg(long, value_enum, default_value_t = EstimatorArg::Sgpalm)]
    pub estimator: EstimatorArg,
    #[arg(long, value_enum, default_value_t = PenaltyArg::L1)]
    pub penalty: PenaltyArg,
    /// Penalty scale C for sgpalm and syglasso.
    #[arg(long, default_value_t = 0.5)]
    pub lambda_scale: f64,
    /// Ridge factor of the sample estimator, relative to trace / d.
    #[arg(long, default_value_t = 1e-3)]
    pub ridge: f64,
    /// Re-estimate every this many steps, reusing the last estimate between.
    #[arg(long, default_value_t = 1)]
    pub refit_every: usize,
    /// Report estimator time as 0 so metrics are byte-reproducible.
    #[arg(long)]
    pub no_timing: bool,
    #[arg(long)]
    pub metrics: PathBuf,
    /// Write the analysis ensemble of every step as step_NNNN.kten (d1, d2, N).
    #[arg(long)]
    pub dump_ensemble: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Estimated factors.
    #[arg(long)]
    pub est: PathBuf,
    /// True factors.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Mcc)]
    pub metric: MetricArg,
    /// |entry| above this counts as an edge.
    #[arg(long, default_value_t = SUPPORT_THRESHOLD)]
    pub threshold: f64,
}

fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn value_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_owned()
}

fn path(p: &Path) -> String {
    p.display().to_string()
}

/// Flags that take no value; `true` in a config file switches them on.
const SWITCHES: [&str; 2] = ["center", "no-timing"];

/// Parses a flat `key = value` config file. Blank lines and `#` comments are
/// skipped; keys are long flag names with `_` and `-` interchangeable.
pub fn parse_config(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`, got `{line}`", i + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_owned()));
    }
    Ok(out)
}

/// Appends config-file entries as flags unless the command line already sets
/// them, so flags win.
pub fn merge_config(argv: &[OsString], entries: &[(String, String)]) -> Vec<OsString> {
    let given: Vec<String> = argv
        .iter()
        .filter_map(|a| a.to_str())
        .filter_map(|a| a.strip_prefix("--"))
        .map(|a| a.split('=').next().unwrap_or(a).to_owned())
        .collect();
    let mut out = argv.to_vec();
    for (k, v) in entries {
        if k == "config" || given.iter().any(|g| g == k) {
            continue;
        }
        if SWITCHES.contains(&k.as_str()) {
            if v == "true" {
                out.push(format!("--{k}").into());
            }
            continue;
        }
        out.push(format!("--{k}").into());
        out.extend(v.split_whitespace().map(OsString::from));
    }
    out
}

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().filter_map(|a| a.to_str());
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Parses `argv` (program name first), merging any `--config` file. Usage
/// problems come back as clap errors carrying exit code 2.
pub fn parse_args(argv: Vec<OsString>) -> std::result::Result<Cli, clap::Error> {
    let argv = match config_path(&argv) {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| {
                clap::Error::raw(clap::error::ErrorKind::Io, format!("cannot read config `{}`: {e}\n", p.display()))
            })?;
            let entries =
                parse_config(&text).map_err(|e| clap::Error::raw(clap::error::ErrorKind::InvalidValue, e + "\n"))?;
            merge_config(&argv, &entries)
        }
        None => argv,
    };
    Cli::try_parse_from(argv)
}

/// Runs the binary: parses, dispatches and maps failures to exit codes
/// (2 for usage, 1 for runtime errors).
pub fn main_with_args(argv: Vec<OsString>) -> i32 {
    let cli = match parse_args(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads(flag: Option<usize>) -> Result<()> {
    let n = match flag {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(
                v.trim()
                    .parse()
                    .map_err(|_| Error::InvalidParameter(format!("{THREADS_ENV} must be a thread count, got `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidParameter("thread count must be positive".into()));
        }
        // Fails only if a pool already exists, e.g. on a second in-process run.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match &cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Track(a) => run_track(a),
        Command::Eval(a) => run_eval(a),
    }
}

fn sibling(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_resolved(primary: &Path, command: &str, entries: &[(&str, String)]) -> Result<()> {
    let mut s = format!("# kronsolve {command}\n");
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {v}");
    }
    write_atomic(&sibling(primary, ".config"), s.as_bytes())
}

fn pde_kind(m: SimModel) -> Option<ModelKind> {
    match m {
        SimModel::PoissonAr => Some(ModelKind::PoissonAr1),
        SimModel::ConvectionDiffusion => Some(ModelKind::ConvectionDiffusion),
        SimModel::Ks => Some(ModelKind::KuramotoSivashinsky),
        SimModel::Sylvester => None,
    }
}

fn run_simulate(a: &SimulateArgs) -> Result<()> {
    let mut entries = vec![("model", value_name(a.model))];
    a.dynamics.entries(&mut entries);
    match pde_kind(a.model) {
        Some(kind) => {
            let grid = a.dynamics.grid_spec(kind == ModelKind::KuramotoSivashinsky)?;
            let traj: Trajectory = simulate(&grid, &a.dynamics.model(kind), a.dynamics.seed)?;
            write_kten(&traj.to_tensor(), &a.out)?;
            if let Some(t) = &a.truth_out {
                if traj.factors.is_empty() {
                    return Err(Error::InvalidParameter("the ks model has no linear spatial operator to write".into()));
                }
                write_factors(&SylvesterFactors::from_dense(&traj.factors)?, t)?;
            }
        }
        None => {
            let kind = match a.graph {
                GraphKind::Ar1 => FactorKind::Ar1 { rho: a.rho },
                GraphKind::Sb => FactorKind::StarBlock { rho: a.rho, block: a.block },
                GraphKind::Er => FactorKind::ErdosRenyi { edges: a.edges },
            };
            let specs: Vec<FactorGraphSpec> = a.dynamics.grid.iter().map(|&dim| FactorGraphSpec { kind, dim }).collect();
            let (factors, _) = generate_factors(&specs, a.dynamics.seed)?;
            let data = sample_sylvester(&factors, a.samples, a.dynamics.seed)?;
            write_kten(&data.to_tensor(), &a.out)?;
            if let Some(t) = &a.truth_out {
                write_factors(&factors, t)?;
            }
            entries.push(("samples", a.samples.to_string()));
            entries.push(("graph", value_name(a.graph)));
            entries.push(("rho", float(a.rho)));
            entries.push(("block", a.block.to_string()));
            entries.push(("edges", a.edges.to_string()));
        }
    }
    entries.push(("out", path(&a.out)));
    if let Some(t) = &a.truth_out {
        entries.push(("truth-out", path(t)));
    }
    write_resolved(&a.out, "simulate", &entries)
}

/// Trace CSV: `iter,objective,eta_1..eta_K,nnz_1..nnz_K`.
pub fn trace_csv(trace: &SolveTrace, order: usize) -> String {
    let mut s = String::from("iter,objective");
    for k in 1..=order {
        let _ = write!(s, ",eta_{k}");
    }
    for k in 1..=order {
        let _ = write!(s, ",nnz_{k}");
    }
    s.push('\n');
    for r in &trace.records {
        let _ = write!(s, "{},{:.16e}", r.iter, r.objective);
        for e in &r.etas {
            let _ = write!(s, ",{e:.16e}");
        }
        for n in &r.nnz {
            let _ = write!(s, ",{n}");
        }
        s.push('\n');
    }
    s
}

fn run_estimate(a: &EstimateArgs) -> Result<()> {
    let mut data = SampleSet::from_tensor_last_mode(&read_kten(&a.input)?)?;
    if a.center {
        data = data.centered();
    }
    let kind = PenaltyKind::from(a.penalty);
    let shape = a.shape.unwrap_or(kind.default_shape());
    let mut entries = vec![
        ("method", value_name(a.method)),
        ("input", path(&a.input)),
        ("penalty", value_name(a.penalty)),
        ("lambda-scale", float(a.lambda_scale)),
        ("shape", float(shape)),
        ("tol", float(a.tol)),
        ("max-iter", a.max_iter.to_string()),
        ("center", a.center.to_string()),
    ];
    let trace = match a.method {
        Method::Sgpalm => {
            if a.fixed_w.is_some() || a.w_mode != WModeArg::Free {
                return Err(Error::InvalidParameter("--fixed-w and --w-mode apply to syglasso only".into()));
            }
            let cfg = SolverConfig {
                max_iters: a.max_iter,
                rel_tol: a.tol,
                ..SolverConfig::new(theorem_penalties(kind, a.lambda_scale, shape, &data)?)
            };
            let (f, trace) = sgpalm::fit(&data, &cfg)?;
            write_factors(&f, &a.out)?;
            trace
        }
        Method::Syglasso => {
            if kind != PenaltyKind::L1 {
                return Err(Error::InvalidParameter("syglasso supports the l1 penalty only".into()));
            }
            let w_mode = match (&a.fixed_w, a.w_mode) {
                (Some(p), _) => WMode::Fixed(read_kten(p)?),
                (None, WModeArg::Free) => WMode::Free,
                (None, WModeArg::KroneckerSum) => WMode::KroneckerSum,
            };
            let cfg = SyGlassoConfig {
                max_iters: a.max_iter,
                rel_tol: a.tol,
                w_mode,
                ..SyGlassoConfig::new(syglasso::scaled_lambdas(a.lambda_scale, &data))
            };
            let fit = syglasso::fit(&data, &cfg)?;
            let w_out = a.w_out.clone().unwrap_or_else(|| sibling(&a.out, ".w.kten"));
            write_factors(&fit.factors, &a.out)?;
            write_kten(&fit.w, &w_out)?;
            entries.push(("w-mode", value_name(a.w_mode)));
            if let Some(p) = &a.fixed_w {
                entries.push(("fixed-w", path(p)));
            }
            entries.push(("w-out", path(&w_out)));
            fit.trace
        }
    };
    if let Some(t) = &a.trace {
        write_atomic(t, trace_csv(&trace, data.order()).as_bytes())?;
        entries.push(("trace", path(t)));
    }
    entries.push(("out", path(&a.out)));
    write_resolved(&a.out, "estimate", &entries)
}

fn run_track(a: &TrackArgs) -> Result<()> {
    let kind = pde_kind(a.model)
        .ok_or_else(|| Error::InvalidParameter("track needs a PDE model, not sylvester".into()))?;
    let grid = a.dynamics.grid_spec(kind == ModelKind::KuramotoSivashinsky)?;
    let cfg = FilterConfig {
        obs_frac: a.obs_frac,
        obs_noise_std: a.obs_noise,
        refit_every: a.refit_every,
        timing: !a.no_timing,
        keep_ensembles: a.dump_ensemble.is_some(),
        ..FilterConfig::new(grid, a.dynamics.model(kind), a.ensemble, a.dynamics.seed)
    };
    let estimator: Box<dyn CovarianceEstimator> = match a.estimator {
        EstimatorArg::Sgpalm => Box::new(SgPalmEstimator::new(a.penalty.into(), a.lambda_scale)),
        EstimatorArg::Syglasso => Box::new(SyGlassoEstimator::new(a.lambda_scale)),
        EstimatorArg::Sample => Box::new(SampleRidgeEstimator { ridge: a.ridge }),
        EstimatorArg::Identity => Box::new(IdentityEstimator),
    };
    let report = run_filter(&cfg, estimator.as_ref())?;
    write_atomic(&a.metrics, metrics_csv(&report.metrics).as_bytes())?;
    if let Some(dir) = &a.dump_ensemble {
        fs::create_dir_all(dir)?;
        for ens in &report.ensembles {
            let values: Vec<f64> = ens.members.concat();
            let t = DenseTensor::new(vec![grid.d1, grid.d2, ens.size()], values)?;
            write_kten(&t, &dir.join(format!("step_{:04}.kten", ens.t)))?;
        }
    }
    let mut entries = vec![("model", value_name(a.model))];
    a.dynamics.entries(&mut entries);
    entries.extend([
        ("ensemble", a.ensemble.to_string()),
        ("obs-frac", float(a.obs_frac)),
        ("obs-noise", float(a.obs_noise)),
        ("estimator", value_name(a.estimator)),
        ("penalty", value_name(a.penalty)),
        ("lambda-scale", float(a.lambda_scale)),
        ("ridge", float(a.ridge)),
        ("refit-every", a.refit_every.to_string()),
        ("no-timing", a.no_timing.to_string()),
        ("metrics", path(&a.metrics)),
    ]);
    if let Some(d) = &a.dump_ensemble {
        entries.push(("dump-ensemble", path(d)));
    }
    write_resolved(&a.metrics, "track", &entries)
}

/// Evaluates `est` against `truth` and returns the CSV row that `eval` prints.
pub fn eval_row(est: &SylvesterFactors, truth: &SylvesterFactors, metric: MetricArg, threshold: f64) -> Result<String> {
    let e = SupportMask::from_factors(est, threshold);
    let t = SupportMask::from_factors(truth, threshold);
    Ok(match metric {
        MetricArg::Mcc => format!("mcc,{:.16e}", mcc(&e, &t)?),
        MetricArg::Fprfnr => {
            let (fpr, fnr) = fpr_fnr(&e, &t)?;
            format!("fprfnr,{fpr:.16e},{fnr:.16e}")
        }
        MetricArg::Fnorm => {
            let (le, lt) = (kron_sum_dense(est)?, kron_sum_dense(truth)?);
            format!("fnorm,{:.16e}", fnorm_rel_error(&(&le * &le), &(&lt * &lt), false)?)
        }
    })
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let row = eval_row(&read_factors(&a.est)?, &read_factors(&a.truth)?, a.metric, a.threshold)?;
    println!("{row}");
    Ok(())
}
