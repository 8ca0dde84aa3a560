//! Command-line front end: one TOML configuration drives `build`, `run`,
//! `oracle` and `compare`.
//!
//! Marginal files are CSV with the header `site,symbol,probability`, one row
//! per site and supported symbol, sites ascending and symbols written as
//! colon-joined cell indices (`2:4`).

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::automaton::{Automaton, Boundary, Grid};
use crate::densities::{encode_symbols, DeBruijnDensity, Interval, SparseDensity};
use crate::error::CpaError;
use crate::models::{ArsenateFlow, ArsenateParams, ArsenatePipe, AveragingFlow, IdentityFlow, LinearAdvection};
use crate::oracle::{apply_pb, build_pb, mc_reference, sample_points, CoarseModel, McReport, McSetup};
use crate::partition::{AnyPartition, CellPartition, PartitionSpec, Symbol};
use crate::translator::{compose_f0, estimate_f0, load_f0, save_f0, FlowMap, LocalFunction, LocalRule};

/// Failure of a command, grouped by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent configuration (exit code 2).
    Config(String),
    /// Zero mass, unexplored preimages or unstable dynamics (exit code 3).
    Numeric(CpaError),
    /// Files that cannot be read, written or decoded (exit code 4).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Numeric(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CpaError> for CliError {
    fn from(e: CpaError) -> Self {
        match e {
            CpaError::ZeroMass
            | CpaError::NonExtendable { .. }
            | CpaError::UnexploredPreimage { .. }
            | CpaError::ModelInstability { .. }
            | CpaError::DomainViolation { .. } => CliError::Numeric(e),
            CpaError::Io(_) | CpaError::Json(_) | CpaError::Format(_) | CpaError::Checksum { .. } => {
                CliError::Io(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// A cell given either by its flat index or by colon-joined cell indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SymbolSpec {
    Index(usize),
    Cells(String),
}

impl SymbolSpec {
    fn resolve(&self, partition: &dyn CellPartition) -> CliResult<usize> {
        let s = match self {
            SymbolSpec::Index(i) => Symbol(*i),
            SymbolSpec::Cells(text) => {
                let cells = parse_cells(text).map_err(CliError::Config)?;
                partition.symbol_of(&cells)?
            }
        };
        partition.check_symbol(s)?;
        Ok(s.index())
    }
}

fn parse_cells(text: &str) -> Result<Vec<usize>, String> {
    text.split(':')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad symbol `{text}`")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedSymbol {
    pub symbol: SymbolSpec,
    pub weight: f64,
}

/// A weighted joint assignment of the sites of `K_l` or `K_r`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedPattern {
    pub symbols: Vec<SymbolSpec>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Identity {
        #[serde(default = "one")]
        dim: usize,
    },
    Averaging,
    Advection {
        speed: f64,
        dx: f64,
        tau: f64,
    },
    Arsenate {
        #[serde(default)]
        params: ArsenateParams,
    },
}

fn one() -> usize {
    1
}

impl ModelConfig {
    pub fn flow(&self) -> CliResult<Arc<dyn FlowMap>> {
        Ok(match self {
            ModelConfig::Identity { dim } => Arc::new(IdentityFlow::new(*dim)),
            ModelConfig::Averaging => Arc::new(AveragingFlow),
            ModelConfig::Advection { speed, dx, tau } => Arc::new(LinearAdvection::new(*speed, *dx, *tau)?),
            ModelConfig::Arsenate { params } => Arc::new(ArsenateFlow::new(params.clone())?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomatonConfig {
    /// Number of sites `m`.
    pub m: usize,
    /// Sites `W` over which the estimated patterns are glued, `V = Ṽ + W`.
    #[serde(default = "origin")]
    pub w: [i64; 2],
}

fn origin() -> [i64; 2] {
    [0, 0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Estimated pattern window `Ṽ`.
    #[serde(default = "origin")]
    pub v: [i64; 2],
    /// Test points per cell for each site of `U + Ṽ`; a single value is repeated.
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    pub seed: Option<u64>,
    #[serde(default = "default_table")]
    pub table: PathBuf,
}

fn default_counts() -> Vec<usize> {
    vec![100]
}

fn default_table() -> PathBuf {
    PathBuf::from("f0.cpa")
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            v: origin(),
            counts: default_counts(),
            seed: None,
            table: default_table(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundaryConfig {
    Deterministic {
        #[serde(default)]
        left: Vec<SymbolSpec>,
        #[serde(default)]
        right: Vec<SymbolSpec>,
    },
    WhiteNoise {
        #[serde(default)]
        left: Vec<WeightedPattern>,
        #[serde(default)]
        right: Vec<WeightedPattern>,
    },
    /// Arsenate source: equal weight on the listed `D` cells at adsorption equilibrium.
    ArsenateTank { d_cells: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// One symbol per site of `{1+r, .., m-s}`, or `fill` for all of them.
    Point {
        fill: Option<SymbolSpec>,
        symbols: Option<Vec<SymbolSpec>>,
    },
    /// Independent site densities.
    Product { sites: Vec<Vec<WeightedSymbol>> },
    Uniform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub steps: usize,
    #[serde(default)]
    pub threshold: f64,
    /// Steps to write; all steps when absent.
    pub report_steps: Option<Vec<usize>>,
    #[serde(default = "default_run_output")]
    pub output: PathBuf,
}

fn default_run_output() -> PathBuf {
    PathBuf::from("run")
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            steps: 0,
            threshold: 0.0,
            report_steps: None,
            output: default_run_output(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    /// Monte Carlo over continuous trajectories.
    Mc,
    /// Discretized global transition matrix.
    Pb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleDynamics {
    /// The arsenate pipe on its fine grid; other models fall back to `coarse`.
    Fine,
    /// Repeated application of the coarse flow map.
    Coarse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_method")]
    pub method: OracleMethod,
    #[serde(default = "default_dynamics")]
    pub dynamics: OracleDynamics,
    #[serde(default = "default_runs")]
    pub runs: u64,
    pub seed: Option<u64>,
    /// Test points per cell for each site of the grid (`pb` only); a single value is repeated.
    #[serde(default = "default_counts")]
    pub counts: Vec<usize>,
    #[serde(default = "default_oracle_output")]
    pub output: PathBuf,
}

fn default_method() -> OracleMethod {
    OracleMethod::Mc
}

fn default_dynamics() -> OracleDynamics {
    OracleDynamics::Fine
}

fn default_runs() -> u64 {
    1000
}

fn default_oracle_output() -> PathBuf {
    PathBuf::from("oracle")
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            method: default_method(),
            dynamics: default_dynamics(),
            runs: default_runs(),
            seed: None,
            counts: default_counts(),
            output: default_oracle_output(),
        }
    }
}

/// Everything a build, run or oracle invocation needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub partition: PartitionSpec,
    pub automaton: AutomatonConfig,
    #[serde(default)]
    pub build: BuildConfig,
    pub boundary: BoundaryConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    /// Directory that relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Parses and validates a configuration; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &dir).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn validate(&self) -> CliResult<()> {
        let flow = self.model.flow()?;
        let partition = self.partition.build()?;
        if partition.dim() != flow.dim() {
            return Err(CliError::Config(format!(
                "partition has {} dimensions, model state has {}",
                partition.dim(),
                flow.dim()
            )));
        }
        self.grid(flow.as_ref())?;
        if !(0.0..1.0).contains(&self.run.threshold) {
            return Err(CpaError::InvalidThreshold(self.run.threshold).into());
        }
        if self.build.counts.is_empty() || self.build.counts.contains(&0) {
            return Err(CliError::Config("build.counts must be positive".into()));
        }
        Ok(())
    }

    fn interval(name: &str, pair: [i64; 2]) -> CliResult<Interval> {
        Interval::new(pair[0], pair[1]).map_err(|e| CliError::Config(format!("{name}: {e}")))
    }

    pub fn estimated_v(&self) -> CliResult<Interval> {
        Self::interval("build.v", self.build.v)
    }

    pub fn w(&self) -> CliResult<Interval> {
        Self::interval("automaton.w", self.automaton.w)
    }

    /// The grid of the automaton, with `V = Ṽ + W`.
    pub fn grid(&self, flow: &dyn FlowMap) -> CliResult<Grid> {
        let v = self.estimated_v()?.sum(&self.w()?);
        Ok(Grid::new(self.automaton.m, flow.neighborhood(), v)?)
    }

    fn build_counts(&self, flow: &dyn FlowMap) -> CliResult<Vec<usize>> {
        let len = flow.neighborhood().sum(&self.estimated_v()?).len();
        broadcast("build.counts", &self.build.counts, len)
    }
}

fn broadcast(name: &str, values: &[usize], len: usize) -> CliResult<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; len]),
        n if n == len => Ok(values.to_vec()),
        n => Err(CliError::Config(format!("{name} has {n} entries, expected 1 or {len}"))),
    }
}

fn fresh_seed() -> u64 {
    rand::thread_rng().next_u64()
}

/// Outcome of `build`.
#[derive(Clone, Debug, Serialize)]
pub struct BuildReport {
    pub table: PathBuf,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub rows: usize,
    pub explored_rows: usize,
    pub unexplored: usize,
    pub image_points: u64,
    pub clamped: u64,
    pub clamp_rate: f64,
    pub wall_seconds: f64,
}

/// Estimates the local function and writes it with a JSON report next to it.
pub fn cmd_build(cfg: &RunConfig, out: Option<&Path>) -> CliResult<BuildReport> {
    let start = Instant::now();
    let flow = cfg.model.flow()?;
    let partition: Arc<dyn CellPartition> = Arc::new(cfg.partition.build()?);
    let counts = cfg.build_counts(flow.as_ref())?;
    let seed = cfg.build.seed.unwrap_or_else(fresh_seed);
    let (table, stats) = estimate_f0(flow, partition, cfg.estimated_v()?, &counts, seed)?;
    let path = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve(&cfg.build.table));
    ensure_parent(&path)?;
    save_f0(&table, &path)?;
    let report = BuildReport {
        table: path.clone(),
        seed,
        counts,
        rows: table.num_rows(),
        explored_rows: table.explored_rows(),
        unexplored: table.num_rows() - table.explored_rows(),
        image_points: stats.image_points,
        clamped: stats.clamped,
        clamp_rate: stats.clamp_rate(),
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&path.with_extension("report.json"), &report)?;
    Ok(report)
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

/// Boundary densities on `K_l` and `K_r` as configured.
pub fn boundary_of(cfg: &RunConfig, grid: &Grid, partition: &dyn CellPartition) -> CliResult<Boundary> {
    let base = partition.num_symbols();
    match &cfg.boundary {
        BoundaryConfig::Deterministic { left, right } => Ok(Boundary::Deterministic {
            left: left.iter().map(|s| s.resolve(partition)).collect::<CliResult<_>>()?,
            right: right.iter().map(|s| s.resolve(partition)).collect::<CliResult<_>>()?,
        }),
        BoundaryConfig::WhiteNoise { left, right } => {
            let side = |entries: &[WeightedPattern], k: Interval| -> CliResult<SparseDensity> {
                if k.is_empty() && entries.is_empty() {
                    return Ok(SparseDensity::point(k, base, 0)?);
                }
                let mut weights = Vec::with_capacity(entries.len());
                for e in entries {
                    if e.symbols.len() != k.len() {
                        return Err(CliError::Config(format!(
                            "boundary pattern has {} symbols, sites {k} need {}",
                            e.symbols.len(),
                            k.len()
                        )));
                    }
                    let syms = e.symbols.iter().map(|s| s.resolve(partition)).collect::<CliResult<Vec<_>>>()?;
                    weights.push((encode_symbols(base, &syms), e.weight));
                }
                Ok(SparseDensity::from_weights(k, base, weights)?.normalize()?)
            };
            Ok(Boundary::WhiteNoise {
                left: side(left, grid.k_left())?,
                right: side(right, grid.k_right())?,
            })
        }
        BoundaryConfig::ArsenateTank { d_cells } => {
            let ModelConfig::Arsenate { params } = &cfg.model else {
                return Err(CliError::Config("boundary kind arsenate_tank needs the arsenate model".into()));
            };
            if grid.k_left() != Interval::single(1) {
                return Err(CliError::Config(format!("the tank source needs K_l = {{1}}, grid has {}", grid.k_left())));
            }
            Ok(Boundary::WhiteNoise {
                left: params.tank_source(partition, d_cells)?,
                right: SparseDensity::point(grid.k_right(), base, 0)?,
            })
        }
    }
}

/// Site densities of the initial condition on `{1+r, .., m-s}`.
pub fn initial_densities(cfg: &RunConfig, grid: &Grid, partition: &dyn CellPartition) -> CliResult<Vec<SparseDensity>> {
    let base = partition.num_symbols();
    let n = grid.interior().len();
    let site = Interval::single(0);
    match &cfg.initial {
        InitialConfig::Point { fill, symbols } => {
            let syms: Vec<usize> = match (fill, symbols) {
                (Some(f), None) => vec![f.resolve(partition)?; n],
                (None, Some(list)) => list.iter().map(|s| s.resolve(partition)).collect::<CliResult<_>>()?,
                _ => return Err(CliError::Config("initial point needs exactly one of `fill` and `symbols`".into())),
            };
            if syms.len() != n {
                return Err(CliError::Config(format!("initial condition needs {n} symbols, got {}", syms.len())));
            }
            Ok(syms.into_iter().map(|s| SparseDensity::point(site, base, s as u64)).collect::<Result<_, _>>()?)
        }
        InitialConfig::Product { sites } => {
            if sites.len() != n {
                return Err(CliError::Config(format!("initial condition needs {n} sites, got {}", sites.len())));
            }
            sites
                .iter()
                .map(|entries| {
                    let w = entries
                        .iter()
                        .map(|e| Ok((e.symbol.resolve(partition)? as u64, e.weight)))
                        .collect::<CliResult<Vec<_>>>()?;
                    Ok(SparseDensity::from_weights(site, base, w)?.normalize()?)
                })
                .collect()
        }
        InitialConfig::Uniform => Ok(vec![SparseDensity::uniform(site, base)?; n]),
    }
}

/// Per-site symbol densities, keyed by site.
pub type Marginals = BTreeMap<i64, SparseDensity>;

/// Single-site marginals of an automaton state on all of `{1, .., m}`.
pub fn state_marginals(grid: &Grid, g: &DeBruijnDensity, left: &SparseDensity, right: &SparseDensity) -> CliResult<Marginals> {
    let mut out = Marginals::new();
    let single = Interval::single(0);
    for (k, site) in [(left, grid.k_left()), (right, grid.k_right())] {
        for i in site.sites() {
            out.insert(i, k.marginal(&Interval::single(i))?.relabel(single)?);
        }
    }
    let sites = grid.sites();
    for j in grid.interior().sites() {
        let anchor = j.clamp(sites.lo, sites.hi);
        let d = g.at(anchor).marginal(&Interval::single(j - anchor))?.relabel(single)?;
        out.insert(j, d);
    }
    Ok(out)
}

/// Writes marginals in the `site,symbol,probability` schema.
pub fn write_marginals(path: &Path, partition: &dyn CellPartition, marginals: &Marginals) -> CliResult<()> {
    ensure_parent(path)?;
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = String::from("site,symbol,probability\n");
    for (site, d) in marginals {
        for (code, p) in d.iter() {
            let cells = partition.multi_index(Symbol(code as usize))?;
            let label: Vec<String> = cells.iter().map(usize::to_string).collect();
            body.push_str(&format!("{site},{},{p}\n", label.join(":")));
        }
    }
    w.write_all(body.as_bytes()).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Marginals as read back from CSV: site → cell indices → probability.
pub type CsvMarginals = BTreeMap<i64, BTreeMap<Vec<usize>, f64>>;

pub fn read_marginals(path: &Path) -> CliResult<CsvMarginals> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = CsvMarginals::new();
    let mut width = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        let bad = |what: &str| CliError::Io(format!("{}:{}: {what}", path.display(), n + 1));
        if n == 0 {
            if line.trim() != "site,symbol,probability" {
                return Err(bad("expected header `site,symbol,probability`"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(bad("expected three fields"));
        }
        let site: i64 = fields[0].trim().parse().map_err(|_| bad("bad site"))?;
        let cells = parse_cells(fields[1]).map_err(|m| bad(&m))?;
        let p: f64 = fields[2].trim().parse().map_err(|_| bad("bad probability"))?;
        if *width.get_or_insert(cells.len()) != cells.len() {
            return Err(bad("symbols of different dimensions"));
        }
        *out.entry(site).or_default().entry(cells).or_insert(0.0) += p;
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct StepSummary {
    pub step: usize,
    /// Largest per-site mass removed by pruning and trimming.
    pub removed_mass: f64,
    pub support: Vec<usize>,
}

/// Outcome of `run`.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub output: PathBuf,
    pub steps: usize,
    pub threshold: f64,
    /// Product over steps of the retained mass at the worst site.
    pub mass_retained: f64,
    pub per_step: Vec<StepSummary>,
    pub wall_seconds: f64,
}

fn report_steps(requested: &Option<Vec<usize>>, steps: usize) -> CliResult<Vec<usize>> {
    let list = match requested {
        Some(list) => list.clone(),
        None => (0..=steps).collect(),
    };
    if let Some(bad) = list.iter().find(|&&s| s > steps) {
        return Err(CliError::Config(format!("report step {bad} exceeds the {steps} configured steps")));
    }
    Ok(list)
}

fn step_file(dir: &Path, step: usize) -> PathBuf {
    dir.join(format!("step_{step:05}.csv"))
}

/// The local function for the configured `V`, composed over `W` when needed.
pub fn prepare_rule(cfg: &RunConfig, table: LocalFunction, partition: &dyn CellPartition) -> CliResult<LocalFunction> {
    table.check_partition(partition)?;
    let flow = cfg.model.flow()?;
    let header = table.header();
    if header.u != flow.neighborhood() || header.v != cfg.estimated_v()? || header.dim != flow.dim() {
        return Err(CpaError::Mismatch(format!(
            "table has U = {}, V = {}, dim {}; configuration has U = {}, V = {}, dim {}",
            header.u,
            header.v,
            header.dim,
            flow.neighborhood(),
            cfg.estimated_v()?,
            flow.dim()
        ))
        .into());
    }
    let w = cfg.w()?;
    if w == Interval::single(0) {
        Ok(table)
    } else {
        Ok(compose_f0(&table, w)?)
    }
}

/// Evolves the automaton and writes one marginal file per reported step.
pub fn cmd_run(cfg: &RunConfig, table: Option<&Path>) -> CliResult<RunSummary> {
    let start = Instant::now();
    let partition = cfg.partition.build()?;
    let path = table.map(Path::to_path_buf).unwrap_or_else(|| cfg.resolve(&cfg.build.table));
    let rule: Arc<dyn LocalRule> = Arc::new(prepare_rule(cfg, load_f0(&path)?, &partition)?);
    let flow = cfg.model.flow()?;
    let grid = cfg.grid(flow.as_ref())?;
    let automaton = Automaton::new(cfg.automaton.m, rule, boundary_of(cfg, &grid, &partition)?)?;
    let g0 = automaton.product_state(&initial_densities(cfg, &grid, &partition)?)?;
    let steps = cfg.run.steps;
    let wanted = report_steps(&cfg.run.report_steps, steps)?;
    let traj = automaton.evolve(&g0, steps, cfg.run.threshold)?;
    let dir = cfg.resolve(&cfg.run.output);
    for &n in &wanted {
        let (left, right) = automaton.boundary_densities(n);
        let marginals = state_marginals(&grid, &traj.states[n], &left, &right)?;
        write_marginals(&step_file(&dir, n), &partition, &marginals)?;
    }
    let per_step: Vec<StepSummary> = traj
        .reports
        .iter()
        .enumerate()
        .map(|(k, r)| StepSummary {
            step: k + 1,
            removed_mass: r.pruned + r.trimmed,
            support: r.support.clone(),
        })
        .collect();
    let summary = RunSummary {
        output: dir.clone(),
        steps,
        threshold: cfg.run.threshold,
        mass_retained: per_step.iter().map(|s| 1.0 - s.removed_mass).product(),
        per_step,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Outcome of `oracle`.
#[derive(Clone, Debug, Serialize)]
pub struct OracleSummary {
    pub output: PathBuf,
    pub method: OracleMethod,
    pub seed: u64,
    pub runs: u64,
    pub steps: usize,
    pub report_steps: Vec<usize>,
    pub clamped: u64,
    pub wall_seconds: f64,
}

fn report_marginals(report: &McReport, t: usize, m: usize) -> CliResult<Marginals> {
    (1..=m).map(|i| Ok((i as i64, report.density(t, 0, i)?))).collect()
}

/// Runs the Monte Carlo or global-matrix reference and writes marginal files.
pub fn cmd_oracle(cfg: &RunConfig) -> CliResult<OracleSummary> {
    let start = Instant::now();
    let partition = cfg.partition.build()?;
    let flow = cfg.model.flow()?;
    let grid = cfg.grid(flow.as_ref())?;
    let m = cfg.automaton.m;
    let boundary = boundary_of(cfg, &grid, &partition)?;
    let initial = initial_densities(cfg, &grid, &partition)?;
    let steps = cfg.run.steps;
    let wanted = report_steps(&cfg.run.report_steps, steps)?;
    let seed = cfg.oracle.seed.unwrap_or_else(fresh_seed);
    let dir = cfg.resolve(&cfg.oracle.output);
    let (runs, clamped) = match cfg.oracle.method {
        OracleMethod::Mc => {
            let report = run_mc(cfg, flow, &partition, &boundary, &initial, seed, &wanted)?;
            for (t, &n) in wanted.iter().enumerate() {
                write_marginals(&step_file(&dir, n), &partition, &report_marginals(&report, t, m)?)?;
            }
            (report.runs, report.clamped)
        }
        OracleMethod::Pb => {
            let Boundary::Deterministic { left, right } = &boundary else {
                return Err(CliError::Config("the pb oracle needs a deterministic boundary".into()));
            };
            let base = partition.num_symbols();
            let counts = broadcast("oracle.counts", &cfg.oracle.counts, m)?;
            let mut g = SparseDensity::point(grid.k_left(), base, encode_symbols(base, left))?;
            for d in &initial {
                g = g.product(&d.relabel(Interval::single(g.window().hi + 1))?)?;
            }
            g = g.product(&SparseDensity::point(grid.k_right(), base, encode_symbols(base, right))?)?;
            let all = grid.all_sites();
            let write = |n: usize, g: &SparseDensity| -> CliResult<()> {
                let marginals = all
                    .sites()
                    .map(|i| Ok((i, g.marginal(&Interval::single(i))?.relabel(Interval::single(0))?)))
                    .collect::<CliResult<Marginals>>()?;
                write_marginals(&step_file(&dir, n), &partition, &marginals)
            };
            if wanted.contains(&0) {
                write(0, &g)?;
            }
            for n in 1..=steps {
                let support: Vec<u64> = g.support().collect();
                let pb = build_pb(flow.as_ref(), &partition, m, &counts, seed, Some(&support))?;
                g = apply_pb(&pb, &g)?;
                if wanted.contains(&n) {
                    write(n, &g)?;
                }
            }
            (1, 0)
        }
    };
    let summary = OracleSummary {
        output: dir.clone(),
        method: cfg.oracle.method,
        seed,
        runs,
        steps,
        report_steps: wanted,
        clamped,
        wall_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn run_mc(
    cfg: &RunConfig,
    flow: Arc<dyn FlowMap>,
    partition: &AnyPartition,
    boundary: &Boundary,
    initial: &[SparseDensity],
    seed: u64,
    wanted: &[usize],
) -> CliResult<McReport> {
    let m = cfg.automaton.m;
    let base = partition.num_symbols();
    let grid = cfg.grid(flow.as_ref())?;
    let (left, right) = match boundary {
        Boundary::Deterministic { left, right } => (
            SparseDensity::point(grid.k_left(), base, encode_symbols(base, left))?,
            SparseDensity::point(grid.k_right(), base, encode_symbols(base, right))?,
        ),
        Boundary::WhiteNoise { left, right } => (left.clone(), right.clone()),
    };
    let draw_boundary = |rng: &mut dyn RngCore, _n: usize| -> crate::Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        Ok((sample_points(partition, &left, rng)?, sample_points(partition, &right, rng)?))
    };
    let draw_initial = |rng: &mut dyn RngCore| -> crate::Result<Vec<Vec<f64>>> {
        let (l, r) = draw_boundary(rng, 0)?;
        let mut values = l;
        for d in initial {
            values.extend(sample_points(partition, d, rng)?);
        }
        values.extend(r);
        Ok(values)
    };
    let setup = McSetup {
        first_run: 0,
        runs: cfg.oracle.runs,
        steps: cfg.run.steps,
        seed,
        report_steps: wanted.to_vec(),
        partitions: vec![partition as &dyn CellPartition],
    };
    let fine = match (&cfg.model, cfg.oracle.dynamics) {
        (ModelConfig::Arsenate { params }, OracleDynamics::Fine) => Some(params),
        _ => None,
    };
    let report = match fine {
        Some(params) => {
            if grid.k_left() != Interval::single(1) || !grid.k_right().is_empty() {
                return Err(CliError::Config("the fine arsenate pipe has the source at site 1 only".into()));
            }
            let pipe = ArsenatePipe::new(params, m)?;
            mc_reference(&pipe, &draw_initial, &draw_boundary, &setup)?
        }
        None => mc_reference(&CoarseModel::new(flow, m)?, &draw_initial, &draw_boundary, &setup)?,
    };
    Ok(report)
}

/// Per-site L1 distances between two marginal files.
#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub sites: Vec<(i64, f64)>,
    pub max: f64,
    pub mean: f64,
}

/// Compares two marginal files site by site, optionally after reducing the
/// symbols to one of their cell coordinates.
pub fn cmd_compare(a: &Path, b: &Path, component: Option<usize>) -> CliResult<CompareReport> {
    let (ma, mb) = (read_marginals(a)?, read_marginals(b)?);
    if ma.keys().ne(mb.keys()) {
        return Err(CliError::Config(format!(
            "{} and {} cover different sites",
            a.display(),
            b.display()
        )));
    }
    let width = |m: &CsvMarginals| m.values().flat_map(|d| d.keys()).map(Vec::len).next();
    if let (Some(wa), Some(wb)) = (width(&ma), width(&mb)) {
        if wa != wb {
            return Err(CliError::Config(format!("symbols have {wa} and {wb} cell coordinates")));
        }
        if let Some(c) = component.filter(|&c| c >= wa) {
            return Err(CliError::Config(format!("component {c} out of range for {wa} coordinates")));
        }
    }
    let reduce = |d: &BTreeMap<Vec<usize>, f64>| -> BTreeMap<Vec<usize>, f64> {
        let mut out = BTreeMap::new();
        for (cells, p) in d {
            let key = match component {
                Some(c) => vec![cells[c]],
                None => cells.clone(),
            };
            *out.entry(key).or_insert(0.0) += p;
        }
        out
    };
    let mut sites = Vec::with_capacity(ma.len());
    for (site, da) in &ma {
        let (da, db) = (reduce(da), reduce(&mb[site]));
        let mut l1 = 0.0;
        for k in da.keys().chain(db.keys().filter(|k| !da.contains_key(*k))) {
            l1 += (da.get(k).copied().unwrap_or(0.0) - db.get(k).copied().unwrap_or(0.0)).abs();
        }
        sites.push((*site, l1));
    }
    let max = sites.iter().map(|s| s.1).fold(0.0, f64::max);
    let mean = if sites.is_empty() {
        0.0
    } else {
        sites.iter().map(|s| s.1).sum::<f64>() / sites.len() as f64
    };
    Ok(CompareReport { sites, max, mean })
}

#[derive(Debug, Parser)]
#[command(name = "cpa", version, about = "Cellular probabilistic automata for uncertainty propagation")]
pub struct Cli {
    /// Caps the number of worker threads.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimates the local function and writes it to a table file.
    Build {
        config: PathBuf,
        /// Table path, overriding `build.table`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evolves the automaton and writes per-step site marginals.
    Run {
        config: PathBuf,
        /// Table path, overriding `build.table`.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Computes reference marginals by Monte Carlo or the global transition matrix.
    Oracle { config: PathBuf },
    /// Reports per-site L1 distances between two marginal files.
    Compare {
        a: PathBuf,
        b: PathBuf,
        /// Compare marginals of this cell coordinate only.
        #[arg(long)]
        component: Option<usize>,
    },
}

fn execute(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot set up {n} workers: {e}")))?;
    }
    match cli.command {
        Command::Build { config, out } => {
            let cfg = RunConfig::load(&config)?;
            Ok(json(&cmd_build(&cfg, out.as_deref())?))
        }
        Command::Run { config, table } => {
            let cfg = RunConfig::load(&config)?;
            let s = cmd_run(&cfg, table.as_deref())?;
            Ok(format!(
                "wrote {} steps to {} (mass retained {:.6})",
                s.steps + 1,
                s.output.display(),
                s.mass_retained
            ))
        }
        Command::Oracle { config } => {
            let cfg = RunConfig::load(&config)?;
            Ok(json(&cmd_oracle(&cfg)?))
        }
        Command::Compare { a, b, component } => {
            let r = cmd_compare(&a, &b, component)?;
            let mut text = String::from("site,l1\n");
            for (site, l1) in &r.sites {
                text.push_str(&format!("{site},{l1:.6}\n"));
            }
            text.push_str(&format!("max,{:.6}\nmean,{:.6}", r.max, r.mean));
            Ok(text)
        }
    }
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_default()
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(text) => {
            println!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const IDENTITY: &str = r#"
        [model]
        kind = "identity"

        [partition]
        kind = "uniform"
        lower = [0.0]
        upper = [1.0]
        cells = [4]

        [automaton]
        m = 3

        [boundary]
        kind = "deterministic"

        [initial]
        kind = "point"
        symbols = [0, 1, 3]
    "#;

    #[test]
    fn parses_identity_config() {
        let cfg = RunConfig::from_toml_str(IDENTITY, Path::new(".")).unwrap();
        assert_eq!(cfg.automaton.m, 3);
        assert_eq!(cfg.run.threshold, 0.0);
    }

    #[test]
    fn unknown_key_reports_line() {
        let text = IDENTITY.replace("m = 3", "m = 3\nsize = 4");
        let err = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn symbol_specs_resolve() {
        let p = PartitionSpec::Uniform {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
            cells: vec![5, 5],
        }
        .build()
        .unwrap();
        assert_eq!(SymbolSpec::Cells("1:4".into()).resolve(&p).unwrap(), 9);
        assert_eq!(SymbolSpec::Index(24).resolve(&p).unwrap(), 24);
        assert!(SymbolSpec::Index(25).resolve(&p).is_err());
        assert!(SymbolSpec::Cells("1:x".into()).resolve(&p).is_err());
    }

    #[test]
    fn error_classes_map_to_exit_codes() {
        assert_eq!(CliError::from(CpaError::ZeroMass).exit_code(), 3);
        assert_eq!(CliError::from(CpaError::Geometry("x".into())).exit_code(), 2);
        assert_eq!(CliError::from(CpaError::Format("x".into())).exit_code(), 4);
    }
}
