//! Command-line driver. Every subcommand reads an optional JSON config,
//! applies flag overrides on top, validates, and then either prints the
//! effective config (`--dump-config`) or runs.
//!
//! Exit codes: 0 success, 1 numerical or I/O failure, 2 invalid config or
//! arguments.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::gibbs::{slice_within_gibbs, Init};
use crate::kernels::{self, Family, Grid, Kernel2x2, KernelParams};
use crate::krylov::{self, Beta, EsrKind, GsOptions, Reorth, Scheme, SkewInnerProduct};
use crate::oracles;
use crate::sampler::{format_real, stream_rng, SampleRun, TopKSampler};
use crate::skew::{PointIndexSet, SkewMatrix};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(Error::Io(e))
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

/// `from:to:step`, both ends included when they fall on the lattice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Span {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

impl Span {
    pub fn values(&self) -> Vec<f64> {
        let count = ((self.to - self.from) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.from + i as f64 * self.step).collect()
    }

    fn validate(&self, field: &str) -> CliResult<()> {
        if !(self.step > 0.0) || !(self.to >= self.from) || !self.from.is_finite() || !self.to.is_finite() {
            return config_err(format!("field `{field}`: need from <= to and step > 0"));
        }
        Ok(())
    }
}

impl FromStr for Span {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let p: Vec<&str> = s.split(':').collect();
        if p.len() != 3 {
            return Err(format!("expected from:to:step, got `{s}`"));
        }
        let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
        Ok(Span { from: f(p[0])?, to: f(p[1])?, step: f(p[2])? })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for Bounds {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s.split_once(':').ok_or_else(|| format!("expected lo:hi, got `{s}`"))?;
        let f = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"));
        Ok(Bounds { lo: f(a)?, hi: f(b)? })
    }
}

fn parse_init(s: &str) -> Result<Init, String> {
    if let Some(rest) = s.strip_prefix("equispaced:") {
        let b: Bounds = rest.parse()?;
        return Ok(Init::Equispaced { lo: b.lo, hi: b.hi });
    }
    if let Some(rest) = s.strip_prefix("explicit:") {
        let points = rest.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}"))).collect::<Result<_, _>>()?;
        return Ok(Init::Explicit { points });
    }
    Err(format!("expected equispaced:lo:hi or explicit:x1,x2,..., got `{s}`"))
}

fn parse_reorth(s: &str) -> Result<Reorth, String> {
    match s {
        "none" => Ok(Reorth::None),
        "twice" => Ok(Reorth::Twice),
        _ => {
            let eta = s.strip_prefix("iterated:").ok_or_else(|| format!("expected none, twice or iterated:eta, got `{s}`"))?;
            Ok(Reorth::Iterated { eta: eta.parse().map_err(|e| format!("`{eta}`: {e}"))? })
        }
    }
}

fn parse_family(s: &str) -> Result<Family, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown family `{s}` (goe, gse, airy1, airy4, corner_growth)"))
}

fn parse_esr(s: &str) -> Result<EsrKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown ESR variant `{s}` (esr1, esr2, esr3, esr3m)"))
}

fn parse_scheme(s: &str) -> Result<Scheme, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown scheme `{s}` (csgs, msgs)"))
}

// ---------------------------------------------------------------- configs

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelBuildConfig {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub q: Option<f64>,
    pub cutoff: Option<usize>,
    pub grid: Option<Span>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub kernel: Option<PathBuf>,
    pub samples: usize,
    pub seed: Option<u64>,
    /// Keep only the largest `top` points, sampled top-down.
    pub top: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { kernel: None, samples: 1, seed: None, top: None, out: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SopWeight {
    /// Equispaced nodes on [-1, 1] with unit weight.
    Uniform,
    /// Nodes 0, 1, ... with weight 0.5^x.
    Decaying,
    Goe,
    Gse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SopMethod {
    Arnoldi,
    Cholesky,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SopConfig {
    pub weight: SopWeight,
    pub nodes: usize,
    pub n: usize,
    pub method: SopMethod,
    pub esr: EsrKind,
    pub scheme: Scheme,
    pub reorth: Reorth,
    pub out: Option<PathBuf>,
}

impl Default for SopConfig {
    fn default() -> Self {
        let g = GsOptions::default();
        Self { weight: SopWeight::Uniform, nodes: 512, n: 10, method: SopMethod::Arnoldi, esr: g.esr, scheme: g.scheme, reorth: g.reorth, out: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleModel {
    Goe,
    Gse,
    Tridiag,
    CornerGrowth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    pub model: Option<OracleModel>,
    pub n: usize,
    pub samples: usize,
    pub seed: Option<u64>,
    pub beta: Option<f64>,
    pub q: Option<f64>,
    /// Apply the soft-edge map to every eigenvalue.
    pub rescale: bool,
    pub out: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { model: None, n: 10, samples: 1, seed: None, beta: None, q: None, rescale: false, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FredholmConfig {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub q: Option<f64>,
    pub cutoff: Option<usize>,
    pub s: Option<Span>,
    pub s_max: Option<f64>,
    pub nodes: usize,
    pub out: Option<PathBuf>,
}

impl Default for FredholmConfig {
    fn default() -> Self {
        Self { family: None, n: None, q: None, cutoff: None, s: None, s_max: None, nodes: DEFAULT_QUAD_NODES, out: None }
    }
}

/// Gauss–Legendre nodes for Fredholm Pfaffians and densities.
pub const DEFAULT_QUAD_NODES: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistStat {
    Max,
    Second,
    Min,
    Count,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistConfig {
    pub input: Option<PathBuf>,
    pub stat: HistStat,
    pub bins: usize,
    pub range: Option<Bounds>,
    pub batches: Option<usize>,
    pub batch_size: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Default for HistConfig {
    fn default() -> Self {
        Self { input: None, stat: HistStat::Max, bins: 20, range: None, batches: None, batch_size: None, out: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GibbsConfig {
    pub family: Option<Family>,
    pub n: Option<usize>,
    pub steps: usize,
    pub burn_in: usize,
    pub seed: Option<u64>,
    pub init: Option<Init>,
    pub out: Option<PathBuf>,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self { family: None, n: None, steps: 1100, burn_in: crate::gibbs::DEFAULT_BURN_IN, seed: None, init: None, out: None }
    }
}

/// JSON written next to a kernel file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSidecar {
    pub family: Family,
    pub params: KernelParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub grid: Option<GridSpec>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub nodes: Option<Vec<f64>>,
    pub build_tolerances: BuildTolerances,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildTolerances {
    /// Sum of the diagonal (1,2) entries of the stored matrix.
    pub expected_points: f64,
    /// `|expected_points - N|` for rank-N kernels.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank_defect: Option<f64>,
}

pub fn sidecar_path(kernel: &Path) -> PathBuf {
    let mut s = kernel.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

// ------------------------------------------------------------------- clap

#[derive(Parser, Debug)]
#[command(name = "pfpp", version, about = "Pfaffian point process sampling and kernels")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Kernel construction.
    #[command(subcommand)]
    Kernel(KernelCmd),
    /// Draw samples from a stored kernel.
    Sample(SampleArgs),
    /// Skew-orthogonal polynomials.
    Sop(SopArgs),
    /// Matrix-model and corner-growth oracles.
    #[command(subcommand)]
    Oracle(OracleCmd),
    /// Gap probabilities pf(J - K) on (s, s_max].
    Fredholm(FredholmArgs),
    /// Densities derived from a kernel.
    #[command(subcommand)]
    Density(DensityCmd),
    /// Histogram of a samples CSV.
    Hist(HistArgs),
    /// Slice-within-Gibbs sampling on a continuous ground set.
    Gibbs(GibbsArgs),
}

#[derive(Subcommand, Debug)]
enum KernelCmd {
    /// Build and discretize a kernel.
    Build(KernelBuildArgs),
}

#[derive(Subcommand, Debug)]
enum OracleCmd {
    Goe(OracleArgs),
    Gse(OracleArgs),
    Tridiag(OracleArgs),
    CornerGrowth(OracleArgs),
}

#[derive(Subcommand, Debug)]
enum DensityCmd {
    /// Density of the second-largest point.
    SecondEig(FredholmArgs),
}

#[derive(Args, Debug)]
struct KernelBuildArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// x_min:x_max:delta
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<Span>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    kernel: Option<PathBuf>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    top: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SopArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = |s: &str| serde_json::from_value::<SopWeight>(serde_json::Value::String(s.into())).map_err(|e| e.to_string()))]
    weight: Option<SopWeight>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_parser = |s: &str| serde_json::from_value::<SopMethod>(serde_json::Value::String(s.into())).map_err(|e| e.to_string()))]
    method: Option<SopMethod>,
    #[arg(long, value_parser = parse_esr)]
    esr: Option<EsrKind>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// none, twice or iterated:eta
    #[arg(long, value_parser = parse_reorth)]
    reorth: Option<Reorth>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    rescale: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FredholmArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    cutoff: Option<usize>,
    /// from:to:step
    #[arg(long, allow_hyphen_values = true)]
    s: Option<Span>,
    #[arg(long, allow_hyphen_values = true)]
    s_max: Option<f64>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct HistArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = |s: &str| serde_json::from_value::<HistStat>(serde_json::Value::String(s.into())).map_err(|e| e.to_string()))]
    stat: Option<HistStat>,
    #[arg(long)]
    bins: Option<usize>,
    /// lo:hi
    #[arg(long, allow_hyphen_values = true)]
    range: Option<Bounds>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GibbsArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_family)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// equispaced:lo:hi or explicit:x1,x2,...
    #[arg(long, value_parser = parse_init, allow_hyphen_values = true)]
    init: Option<Init>,
    #[arg(long)]
    out: Option<PathBuf>,
}

// ------------------------------------------------------------------ entry

/// Runs the command line `args` (program name first) and returns the exit
/// code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(CliError::Config(msg)) => {
            eprintln!("config error: {msg}");
            2
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("PFPP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0) {
        // A pool may already exist when run() is called more than once.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn load_config<T: DeserializeOwned + Default>(path: &Option<PathBuf>) -> CliResult<T> {
    let Some(p) = path else { return Ok(T::default()) };
    let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: line {}, column {}: {e}", p.display(), e.line(), e.column())))
}

fn dump<T: Serialize>(cfg: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
    println!("{text}");
    Ok(())
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, v: Option<T>) {
    if v.is_some() {
        *slot = v;
    }
}

fn required<T: Clone>(v: &Option<T>, field: &str) -> CliResult<T> {
    v.clone().ok_or_else(|| CliError::Config(format!("field `{field}` is required")))
}

fn output(path: &Option<PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| CliError::Config(format!("field `out`: {}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(std::io::stdout())),
    })
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Kernel(KernelCmd::Build(a)) => {
            let mut c: KernelBuildConfig = load_config(&a.common.config)?;
            set_opt(&mut c.family, a.family);
            set_opt(&mut c.n, a.n);
            set_opt(&mut c.q, a.q);
            set_opt(&mut c.cutoff, a.cutoff);
            set_opt(&mut c.grid, a.grid);
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            kernel_build(&c)
        }
        Command::Sample(a) => {
            let mut c: SampleConfig = load_config(&a.common.config)?;
            set_opt(&mut c.kernel, a.kernel);
            set(&mut c.samples, a.samples);
            set_opt(&mut c.seed, a.seed);
            set_opt(&mut c.top, a.top);
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            sample_cmd(&c)
        }
        Command::Sop(a) => {
            let mut c: SopConfig = load_config(&a.common.config)?;
            set(&mut c.weight, a.weight);
            set(&mut c.nodes, a.nodes);
            set(&mut c.n, a.n);
            set(&mut c.method, a.method);
            set(&mut c.esr, a.esr);
            set(&mut c.scheme, a.scheme);
            set(&mut c.reorth, a.reorth);
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            sop_cmd(&c)
        }
        Command::Oracle(o) => {
            let (model, a) = match o {
                OracleCmd::Goe(a) => (OracleModel::Goe, a),
                OracleCmd::Gse(a) => (OracleModel::Gse, a),
                OracleCmd::Tridiag(a) => (OracleModel::Tridiag, a),
                OracleCmd::CornerGrowth(a) => (OracleModel::CornerGrowth, a),
            };
            let mut c: OracleConfig = load_config(&a.common.config)?;
            if c.model.is_some_and(|m| m != model) {
                return config_err("field `model` disagrees with the subcommand");
            }
            c.model = Some(model);
            set(&mut c.n, a.n);
            set(&mut c.samples, a.samples);
            set_opt(&mut c.seed, a.seed);
            set_opt(&mut c.beta, a.beta);
            set_opt(&mut c.q, a.q);
            c.rescale |= a.rescale;
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            oracle_cmd(&c)
        }
        Command::Fredholm(a) => {
            let (c, d) = fredholm_config(a)?;
            if d {
                return dump(&c);
            }
            fredholm_cmd(&c, false)
        }
        Command::Density(DensityCmd::SecondEig(a)) => {
            let (c, d) = fredholm_config(a)?;
            if d {
                return dump(&c);
            }
            fredholm_cmd(&c, true)
        }
        Command::Hist(a) => {
            let mut c: HistConfig = load_config(&a.common.config)?;
            set_opt(&mut c.input, a.input);
            set(&mut c.stat, a.stat);
            set(&mut c.bins, a.bins);
            set_opt(&mut c.range, a.range);
            set_opt(&mut c.batches, a.batches);
            set_opt(&mut c.batch_size, a.batch_size);
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            hist_cmd(&c)
        }
        Command::Gibbs(a) => {
            let mut c: GibbsConfig = load_config(&a.common.config)?;
            set_opt(&mut c.family, a.family);
            set_opt(&mut c.n, a.n);
            set(&mut c.steps, a.steps);
            set(&mut c.burn_in, a.burn_in);
            set_opt(&mut c.seed, a.seed);
            set_opt(&mut c.init, a.init);
            set_opt(&mut c.out, a.out);
            if a.common.dump_config {
                return dump(&c);
            }
            gibbs_cmd(&c)
        }
    }
}

fn fredholm_config(a: FredholmArgs) -> CliResult<(FredholmConfig, bool)> {
    let mut c: FredholmConfig = load_config(&a.common.config)?;
    set_opt(&mut c.family, a.family);
    set_opt(&mut c.n, a.n);
    set_opt(&mut c.q, a.q);
    set_opt(&mut c.cutoff, a.cutoff);
    set_opt(&mut c.s, a.s);
    set_opt(&mut c.s_max, a.s_max);
    set(&mut c.nodes, a.nodes);
    set_opt(&mut c.out, a.out);
    Ok((c, a.common.dump_config))
}

// --------------------------------------------------------------- commands

/// Kernel of the requested family; `Config` errors for missing parameters.
pub fn make_kernel(family: Family, n: Option<usize>, q: Option<f64>, cutoff: Option<usize>) -> CliResult<Kernel2x2> {
    Ok(match family {
        Family::GoeN | Family::GseN => kernels::build_finite_kernel(family, required(&n, "n")?)?,
        Family::Airy1 => kernels::build_airy_kernel(Beta::One),
        Family::Airy4 => kernels::build_airy_kernel(Beta::Four),
        Family::CornerGrowth => {
            let q = required(&q, "q")?;
            if !(q > 0.0 && q < 1.0) {
                return config_err("field `q`: must lie in (0, 1)");
            }
            kernels::corner_growth_kernel(q, required(&n, "n")?, cutoff)?
        }
        Family::Custom => return config_err("field `family`: custom kernels cannot be built from the command line"),
    })
}

fn kernel_build(c: &KernelBuildConfig) -> CliResult<()> {
    let family = required(&c.family, "family")?;
    let out = required(&c.out, "out")?;
    let k = make_kernel(family, c.n, c.q, c.cutoff)?;
    let (m, grid, nodes) = match k.nodes() {
        Some(nodes) => (kernels::discretize_nodes(&k)?, None, Some(nodes.to_vec())),
        None => {
            let span = required(&c.grid, "grid")?;
            span.validate("grid")?;
            let g = Grid::new(span.from, span.to, span.step)?;
            (kernels::discretize(&k, &g)?, Some(GridSpec { x_min: g.x_min, x_max: g.x_max, delta: g.delta }), None)
        }
    };
    let expected_points: f64 = (0..m.order_pairs()).map(|i| m.get(2 * i, 2 * i + 1)).sum();
    let rank_defect = k.params.n.map(|n| (expected_points - n as f64).abs());
    let side = KernelSidecar { family, params: k.params.clone(), grid, nodes, build_tolerances: BuildTolerances { expected_points, rank_defect } };
    m.save(&out)?;
    let text = serde_json::to_string_pretty(&side).map_err(|e| CliError::Run(Error::Format(e.to_string())))?;
    std::fs::write(sidecar_path(&out), text + "\n")?;
    Ok(())
}

/// Stored kernel and the coordinates of its points.
pub fn load_kernel(path: &Path) -> CliResult<(SkewMatrix, KernelSidecar, Vec<f64>)> {
    let m = SkewMatrix::load(path)?;
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| CliError::Config(format!("{}: {e}", side_path.display())))?;
    let side: KernelSidecar = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: line {}, column {}: {e}", side_path.display(), e.line(), e.column())))?;
    let coords = match (&side.grid, &side.nodes) {
        (Some(g), _) => Grid::new(g.x_min, g.x_max, g.delta)?.nodes().to_vec(),
        (None, Some(n)) => n.clone(),
        (None, None) => (0..m.order_pairs()).map(|i| i as f64).collect(),
    };
    if coords.len() != m.order_pairs() {
        return Err(CliError::Run(Error::Shape(format!("sidecar describes {} points, matrix has {}", coords.len(), m.order_pairs()))));
    }
    Ok((m, side, coords))
}

fn sample_cmd(c: &SampleConfig) -> CliResult<()> {
    let path = required(&c.kernel, "kernel")?;
    let seed = required(&c.seed, "seed")?;
    let (m, side, coords) = load_kernel(&path)?;
    let id = side.family.to_string();
    let run = match c.top {
        None => SampleRun::draw(&id, &m, seed, c.samples, None, Some(coords))?,
        Some(top) => {
            let order = TopKSampler::descending(&coords);
            let mut s = TopKSampler::new(&m, &order, top)?;
            let samples = (0..c.samples as u64).map(|b| s.sample(&mut stream_rng(seed, b)).map(PointIndexSet::from_unsorted)).collect::<crate::Result<Vec<_>>>()?;
            SampleRun { kernel_id: id, seed, samples, grid: Some(coords) }
        }
    };
    let mut w = output(&c.out)?;
    run.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn sop_cmd(c: &SopConfig) -> CliResult<()> {
    if c.n == 0 {
        return config_err("field `n` must be positive");
    }
    let ip = match c.weight {
        SopWeight::Uniform => {
            if c.nodes < 2 {
                return config_err("field `nodes` must be at least 2");
            }
            let nodes = (0..c.nodes).map(|i| -1.0 + 2.0 * i as f64 / (c.nodes - 1) as f64).collect();
            SkewInnerProduct::beta1_discrete(nodes, vec![1.0; c.nodes])?
        }
        SopWeight::Decaying => {
            let nodes: Vec<f64> = (0..c.nodes).map(|i| i as f64).collect();
            let w = nodes.iter().map(|&x| 0.5f64.powf(x)).collect();
            SkewInnerProduct::beta1_discrete(nodes, w)?
        }
        SopWeight::Goe => SkewInnerProduct::goe(c.n)?,
        SopWeight::Gse => SkewInnerProduct::gse(c.n)?,
    };
    let basis = match c.method {
        SopMethod::Arnoldi => krylov::symplectic_arnoldi(&ip, c.n, &GsOptions { esr: c.esr, scheme: c.scheme, reorth: c.reorth })?,
        SopMethod::Cholesky => krylov::cholesky_sop(&ip, c.n)?,
    };
    let (max, mean) = krylov::skew_orthogonality_error(&ip, &basis.s)?;
    eprintln!("skew-orthogonality error: max {} mean {}", format_real(max), format_real(mean));
    let mut w = output(&c.out)?;
    krylov::write_sop_csv(&mut w, &ip, &basis.s)?;
    w.flush()?;
    Ok(())
}

fn oracle_cmd(c: &OracleConfig) -> CliResult<()> {
    let model = required(&c.model, "model")?;
    let seed = required(&c.seed, "seed")?;
    if c.n == 0 {
        return config_err("field `n` must be positive");
    }
    let n = c.n;
    let beta = match model {
        OracleModel::Tridiag => {
            let b = required(&c.beta, "beta")?;
            if !(b > 0.0) {
                return config_err("field `beta` must be positive");
            }
            b
        }
        OracleModel::Goe => 1.0,
        OracleModel::Gse => 4.0,
        OracleModel::CornerGrowth => 0.0,
    };
    let q = if model == OracleModel::CornerGrowth {
        let q = required(&c.q, "q")?;
        if !(q > 0.0 && q < 1.0) {
            return config_err("field `q`: must lie in (0, 1)");
        }
        q
    } else {
        0.0
    };
    let rescale = |x: f64| -> f64 {
        if !c.rescale {
            return x;
        }
        match model {
            OracleModel::Goe => oracles::soft_edge_rescale(x, n, Beta::One),
            OracleModel::Gse => oracles::soft_edge_rescale(x, n, Beta::Four),
            // β=4 on the GSE scale; other β with the standard N^{1/6} map of λ/√β.
            OracleModel::Tridiag if beta == 4.0 => oracles::soft_edge_rescale(x / (2.0 * std::f64::consts::SQRT_2), n, Beta::Four),
            OracleModel::Tridiag => oracles::soft_edge_rescale(x / beta.sqrt(), n, Beta::One),
            OracleModel::CornerGrowth => x,
        }
    };
    let rows: Vec<String> = (0..c.samples as u64)
        .into_par_iter()
        .map(|i| -> crate::Result<String> {
            let mut rng = stream_rng(seed, i);
            let eig = match model {
                OracleModel::Goe => oracles::dense_goe(n, &mut rng)?.eigenvalues,
                OracleModel::Gse => oracles::dense_gse(n, &mut rng)?.eigenvalues,
                OracleModel::Tridiag => oracles::tridiagonal_hermite(n, beta, &mut rng)?.eigenvalues,
                OracleModel::CornerGrowth => return Ok(oracles::corner_growth_simulate(n, q, &mut rng)?.to_string()),
            };
            Ok(eig.into_iter().map(|x| format_real(rescale(x))).collect::<Vec<_>>().join(" "))
        })
        .collect::<crate::Result<_>>()?;
    let mut w = output(&c.out)?;
    writeln!(w, "sample_index,points")?;
    for (i, r) in rows.iter().enumerate() {
        writeln!(w, "{i},{r}")?;
    }
    w.flush()?;
    Ok(())
}

/// Default upper end of the gap interval.
fn default_s_max(k: &Kernel2x2) -> f64 {
    match (k.family, k.params.n) {
        (Family::GoeN, Some(n)) => 2.0 * (n as f64).sqrt() + 10.0,
        (Family::GseN, Some(n)) => (2.0 * n as f64).sqrt() + 6.0,
        _ => match k.nodes() {
            Some(nodes) => *nodes.last().unwrap(),
            None => 12.0,
        },
    }
}

fn fredholm_cmd(c: &FredholmConfig, density: bool) -> CliResult<()> {
    let family = required(&c.family, "family")?;
    let span = required(&c.s, "s")?;
    span.validate("s")?;
    if c.nodes == 0 {
        return config_err("field `nodes` must be positive");
    }
    let k = make_kernel(family, c.n, c.q, c.cutoff)?;
    let s_max = c.s_max.unwrap_or_else(|| default_s_max(&k));
    let mut w = output(&c.out)?;
    writeln!(w, "{}", if density { "s,density" } else { "s,cdf" })?;
    for s in span.values() {
        let v = if density { kernels::second_eigenvalue_density(&k, s, s_max, c.nodes)? } else { kernels::fredholm_pfaffian(&k, s, s_max, c.nodes)? };
        writeln!(w, "{},{}", format_real(s), format_real(v))?;
    }
    w.flush()?;
    Ok(())
}

/// Point lists from a samples CSV (any schema whose last column is `points`).
pub fn read_points_csv(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let f = File::open(path).map_err(|e| CliError::Config(format!("field `input`: {}: {e}", path.display())))?;
    let mut lines = BufReader::new(f).lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.split(',').next_back() != Some("points") {
        return Err(CliError::Run(Error::Format(format!("{}: last column must be `points`, header is `{header}`", path.display()))));
    }
    let cols = header.split(',').count();
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.splitn(cols, ',').collect();
        if fields.len() != cols {
            return Err(CliError::Run(Error::Format(format!("{}: line {}: expected {cols} columns", path.display(), ln + 2))));
        }
        let pts = fields[cols - 1]
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|e| Error::Format(format!("{}: line {}: `{t}`: {e}", path.display(), ln + 2))))
            .collect::<crate::Result<Vec<f64>>>()?;
        out.push(pts);
    }
    Ok(out)
}

fn statistic(stat: HistStat, pts: &[f64]) -> Vec<f64> {
    let mut s = pts.to_vec();
    s.sort_by(f64::total_cmp);
    match stat {
        HistStat::Max => s.last().copied().into_iter().collect(),
        HistStat::Second => (s.len() >= 2).then(|| s[s.len() - 2]).into_iter().collect(),
        HistStat::Min => s.first().copied().into_iter().collect(),
        HistStat::Count => vec![s.len() as f64],
        HistStat::All => s,
    }
}

fn hist_cmd(c: &HistConfig) -> CliResult<()> {
    let input = required(&c.input, "input")?;
    if c.bins == 0 {
        return config_err("field `bins` must be positive");
    }
    let rows = read_points_csv(&input)?;
    let batches: Vec<Vec<f64>> = match (c.batches, c.batch_size) {
        (None, None) => vec![rows.iter().flat_map(|p| statistic(c.stat, p)).collect()],
        (Some(b), size) => {
            if b == 0 {
                return config_err("field `batches` must be positive");
            }
            let size = size.unwrap_or(rows.len() / b);
            if size == 0 || b * size > rows.len() {
                return config_err(format!("field `batch_size`: {b} batches of {size} need more than the {} samples available", rows.len()));
            }
            rows.chunks(size).take(b).map(|ch| ch.iter().flat_map(|p| statistic(c.stat, p)).collect()).collect()
        }
        (None, Some(_)) => return config_err("field `batch_size` needs `batches`"),
    };
    let all: Vec<f64> = batches.iter().flatten().copied().collect();
    let (lo, hi) = match c.range {
        Some(b) => (b.lo, b.hi),
        None => (all.iter().copied().fold(f64::INFINITY, f64::min), all.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
    };
    if !(hi > lo) {
        return config_err("field `range`: empty histogram range");
    }
    let width = (hi - lo) / c.bins as f64;
    let bin_of = |x: f64| -> Option<usize> {
        if x < lo || x > hi {
            return None;
        }
        Some((((x - lo) / width).floor() as usize).min(c.bins - 1))
    };
    let counts = |vals: &[f64]| {
        let mut k = vec![0usize; c.bins];
        for &x in vals {
            if let Some(b) = bin_of(x) {
                k[b] += 1;
            }
        }
        k
    };
    let total = counts(&all);
    let mut w = output(&c.out)?;
    let batched = c.batches.is_some();
    writeln!(w, "bin_left,bin_right,count,density{}", if batched { ",batch_mean,batch_stddev" } else { "" })?;
    let per_batch: Vec<Vec<f64>> = batches.iter().map(|b| counts(b).into_iter().map(|k| k as f64 / (b.len().max(1) as f64 * width)).collect()).collect();
    for i in 0..c.bins {
        let left = lo + i as f64 * width;
        let right = if i + 1 == c.bins { hi } else { lo + (i + 1) as f64 * width };
        let density = total[i] as f64 / (all.len().max(1) as f64 * width);
        write!(w, "{},{},{},{}", format_real(left), format_real(right), total[i], format_real(density))?;
        if batched {
            let v: Vec<f64> = per_batch.iter().map(|b| b[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let sd = if v.len() > 1 { (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt() } else { 0.0 };
            write!(w, ",{},{}", format_real(m), format_real(sd))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn gibbs_cmd(c: &GibbsConfig) -> CliResult<()> {
    let family = required(&c.family, "family")?;
    let n = required(&c.n, "n")?;
    let seed = required(&c.seed, "seed")?;
    if !matches!(family, Family::GoeN | Family::GseN) {
        return config_err("field `family`: Gibbs sampling needs a rank-N kernel (goe or gse)");
    }
    if c.steps <= c.burn_in {
        return config_err("field `steps` must exceed `burn_in`");
    }
    let k = make_kernel(family, Some(n), None, None)?;
    let edge = if family == Family::GoeN { 2.0 * (n as f64).sqrt() } else { (2.0 * n as f64).sqrt() };
    let init = c.init.clone().unwrap_or(Init::Equispaced { lo: -0.5 * edge, hi: 0.5 * edge });
    let mut rng = stream_rng(seed, 0);
    let sweeps = slice_within_gibbs(&k, n, &init, c.steps, c.burn_in, &mut rng)?;
    let mut w = output(&c.out)?;
    writeln!(w, "sample_index,sweep,points")?;
    for (i, s) in sweeps.iter().enumerate() {
        let pts: Vec<String> = s.points.iter().map(|&x| format_real(x)).collect();
        writeln!(w, "{i},{},{}", s.sweep, pts.join(" "))?;
    }
    w.flush()?;
    Ok(())
}
