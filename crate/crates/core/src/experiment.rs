//! Experiment harness: configuration, problem generation, sweeps over
//! quantization levels, and CSV output.
//!
//! A sweep runs the decentralized method once per quantization level plus
//! one exact-averaging baseline, all on the same graph, costs and starting
//! point.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::fqac::{FqacConfig, FqacTraceRow};
use crate::graph::{random_strongly_connected_digraph, DirectedGraph, GraphError};
use crate::metrics::{RunRecord, RunSummary};
use crate::netsim::WidthPolicy;
use crate::optimizer::{
    initial_point, rc_aladin_step, solve, CentralState, Coordinator, CostOracle, InitMode,
    OptimError, QuadraticCost, SolveFailure, SolverConfig,
};
use crate::quantizer::QuantizationLevel;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("invalid value for {key}: {message}")]
    InvalidValue { key: String, message: String },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinatorKind {
    Fqac,
    ExactAverage,
}

impl CoordinatorKind {
    pub fn label(self) -> &'static str {
        match self {
            CoordinatorKind::Fqac => "fqac",
            CoordinatorKind::ExactAverage => "exact_average",
        }
    }
}

impl FromStr for CoordinatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fqac" => Ok(CoordinatorKind::Fqac),
            "exact_average" | "exact-average" => Ok(CoordinatorKind::ExactAverage),
            other => Err(format!("unknown coordinator {other:?}")),
        }
    }
}

/// Which family of local costs to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostFamily {
    /// `P = A^T A + eps I` with a small trace-scaled ridge.
    StronglyConvex,
    /// `P = A^T A` with `A` of rank `n - 2`, no ridge.
    RankDeficient,
}

impl CostFamily {
    pub fn label(self) -> &'static str {
        match self {
            CostFamily::StronglyConvex => "strongly_convex",
            CostFamily::RankDeficient => "rank_deficient",
        }
    }
}

impl FromStr for CostFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "strongly_convex" | "strongly-convex" => Ok(CostFamily::StronglyConvex),
            "rank_deficient" | "rank-deficient" => Ok(CostFamily::RankDeficient),
            other => Err(format!("unknown cost family {other:?}")),
        }
    }
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub n_nodes: usize,
    pub dimension: usize,
    pub rho: f64,
    pub deltas: Vec<QuantizationLevel>,
    pub seed: u64,
    pub max_outer_iterations: usize,
    pub stop_tol: f64,
    pub patience: usize,
    pub extra_edge_probability: f64,
    pub graph_file: Option<PathBuf>,
    pub coordinator: CoordinatorKind,
    pub bit_width: WidthPolicy,
    pub float_width: u32,
    pub cost_family: CostFamily,
    pub init: InitMode,
    pub max_fqac_rounds: Option<u64>,
    pub trace_fqac: bool,
    pub baseline: bool,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_nodes: 20,
            dimension: 20,
            rho: 1.0,
            deltas: ["1e-3", "1e-4", "1e-5"]
                .iter()
                .map(|s| s.parse().expect("literal levels parse"))
                .collect(),
            seed: 1,
            max_outer_iterations: 800,
            stop_tol: 1e-12,
            patience: 10,
            extra_edge_probability: 0.2,
            graph_file: None,
            coordinator: CoordinatorKind::Fqac,
            bit_width: WidthPolicy::Fixed(32),
            float_width: 64,
            cost_family: CostFamily::StronglyConvex,
            init: InitMode::Common,
            max_fqac_rounds: None,
            trace_fqac: false,
            baseline: true,
            out: PathBuf::from("out"),
        }
    }
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::InvalidValue {
        key: key.to_string(),
        message: message.into(),
    }
}

fn parse_as<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse::<T>().map_err(|e| invalid(key, e.to_string()))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value.trim() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(invalid(key, format!("expected a boolean, got {other:?}"))),
    }
}

impl ExperimentConfig {
    /// Sets one field from its textual form. Keys accept `_` or `-`.
    /// `delta` appends to the sweep (comma-separated values allowed); the
    /// first `delta` seen replaces the defaults.
    pub fn set(&mut self, key: &str, value: &str, deltas_seen: &mut bool) -> Result<(), ConfigError> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "n_nodes" | "nodes" => self.n_nodes = parse_as(k, value)?,
            "dimension" => self.dimension = parse_as(k, value)?,
            "rho" => self.rho = parse_as(k, value)?,
            "delta" | "deltas" => {
                if !*deltas_seen {
                    self.deltas.clear();
                    *deltas_seen = true;
                }
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    self.deltas.push(parse_as(k, part)?);
                }
            }
            "seed" => self.seed = parse_as(k, value)?,
            "max_outer_iterations" => self.max_outer_iterations = parse_as(k, value)?,
            "stop_tol" => self.stop_tol = parse_as(k, value)?,
            "patience" => self.patience = parse_as(k, value)?,
            "extra_edge_probability" | "extra_edge_prob" => {
                self.extra_edge_probability = parse_as(k, value)?
            }
            "graph_file" => {
                let v = value.trim();
                self.graph_file = (!v.is_empty() && v != "none").then(|| PathBuf::from(v));
            }
            "coordinator" => self.coordinator = parse_as(k, value)?,
            "bit_width" => self.bit_width = parse_as(k, value)?,
            "float_width" => self.float_width = parse_as(k, value)?,
            "cost_family" => self.cost_family = parse_as(k, value)?,
            "init" => self.init = parse_as(k, value)?,
            "max_fqac_rounds" => {
                let v = value.trim();
                self.max_fqac_rounds = if v == "auto" || v.is_empty() {
                    None
                } else {
                    Some(parse_as(k, v)?)
                };
            }
            "trace_fqac" => self.trace_fqac = parse_bool(k, value)?,
            "baseline" => self.baseline = parse_bool(k, value)?,
            "out" => self.out = PathBuf::from(value.trim()),
            _ => return Err(ConfigError::UnknownKey(key)),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut deltas_seen = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            self.set(key, value, &mut deltas_seen)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_nodes < 2 {
            return Err(invalid("n_nodes", "need at least 2 nodes"));
        }
        if self.dimension < 1 {
            return Err(invalid("dimension", "must be positive"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(invalid("rho", "must be positive"));
        }
        if self.coordinator == CoordinatorKind::Fqac && self.deltas.is_empty() {
            return Err(invalid("delta", "at least one level is required"));
        }
        if self.max_outer_iterations == 0 {
            return Err(invalid("max_outer_iterations", "must be positive"));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(invalid("stop_tol", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.extra_edge_probability) {
            return Err(invalid("extra_edge_probability", "must lie in [0, 1]"));
        }
        if self.float_width == 0 {
            return Err(invalid("float_width", "must be positive"));
        }
        if self.cost_family == CostFamily::RankDeficient && self.dimension < 3 {
            return Err(invalid("cost_family", "rank-deficient costs need dimension >= 3"));
        }
        Ok(())
    }

    /// The resolved configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let deltas: Vec<&str> = self.deltas.iter().map(QuantizationLevel::label).collect();
        let _ = writeln!(out, "n_nodes = {}", self.n_nodes);
        let _ = writeln!(out, "dimension = {}", self.dimension);
        let _ = writeln!(out, "rho = {}", self.rho);
        let _ = writeln!(out, "delta = {}", deltas.join(", "));
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "max_outer_iterations = {}", self.max_outer_iterations);
        let _ = writeln!(out, "stop_tol = {:e}", self.stop_tol);
        let _ = writeln!(out, "patience = {}", self.patience);
        let _ = writeln!(out, "extra_edge_probability = {}", self.extra_edge_probability);
        let _ = writeln!(
            out,
            "graph_file = {}",
            self.graph_file
                .as_ref()
                .map_or("none".to_string(), |p| p.display().to_string())
        );
        let _ = writeln!(out, "coordinator = {}", self.coordinator.label());
        let _ = writeln!(out, "bit_width = {}", self.bit_width);
        let _ = writeln!(out, "float_width = {}", self.float_width);
        let _ = writeln!(out, "cost_family = {}", self.cost_family.label());
        let _ = writeln!(out, "init = {}", self.init.label());
        let _ = writeln!(
            out,
            "max_fqac_rounds = {}",
            self.max_fqac_rounds.map_or("auto".to_string(), |r| r.to_string())
        );
        let _ = writeln!(out, "trace_fqac = {}", self.trace_fqac);
        let _ = writeln!(out, "baseline = {}", self.baseline);
        let _ = writeln!(out, "out = {}", self.out.display());
        out
    }

    fn fqac_config(&self) -> FqacConfig {
        FqacConfig {
            max_rounds: self.max_fqac_rounds,
            width_policy: self.bit_width,
            float_width: self.float_width,
            trace: self.trace_fqac,
        }
    }

    fn solver_config(&self, coordinator: Coordinator) -> SolverConfig {
        SolverConfig {
            rho: self.rho,
            max_iterations: self.max_outer_iterations,
            stop_tol: self.stop_tol,
            patience: self.patience,
            coordinator,
            seed: self.seed,
            init: self.init,
        }
    }
}

const GRAPH_STREAM: u64 = 0;
const COST_STREAM: u64 = 1;

/// Independent 64-bit seed for one purpose, derived from the master seed.
pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = StandardNormal.sample(rng);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

fn normal_vector(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// `P_i = A_i^T A_i + eps I` with `eps = 1e-6 trace(A_i^T A_i) / n`, and
/// `p_i = -A_i^T b_i`; `A_i` symmetric with standard normal entries.
pub fn generate_quadratics(
    dimension: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<QuadraticCost>, OptimError> {
    if dimension < 1 || count < 2 {
        return Err(OptimError::InvalidConfig(format!(
            "need dimension >= 1 and count >= 2, got {dimension} and {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = random_symmetric(dimension, &mut rng);
            let b = normal_vector(dimension, &mut rng);
            let gram = symmetrize(&(a.transpose() * &a));
            let ridge = 1e-6 * gram.trace() / dimension as f64;
            let p = gram + DMatrix::identity(dimension, dimension) * ridge;
            QuadraticCost::new(p, -(a.transpose() * b))
        })
        .collect()
}

/// Like [`generate_quadratics`] but with the two smallest-magnitude
/// eigenvalues of each `A_i` zeroed, so `P_i = A_i^T A_i` has rank `n - 2`
/// and no ridge is added.
pub fn generate_rank_deficient_quadratics(
    dimension: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<QuadraticCost>, OptimError> {
    if dimension < 3 || count < 2 {
        return Err(OptimError::InvalidConfig(format!(
            "need dimension >= 3 and count >= 2, got {dimension} and {count}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let a = random_symmetric(dimension, &mut rng);
            let b = normal_vector(dimension, &mut rng);
            let eig = SymmetricEigen::new(a);
            let mut order: Vec<usize> = (0..dimension).collect();
            order.sort_by(|&i, &j| eig.eigenvalues[i].abs().total_cmp(&eig.eigenvalues[j].abs()));
            let mut values = eig.eigenvalues.clone();
            for &i in &order[..2] {
                values[i] = 0.0;
            }
            let q = &eig.eigenvectors;
            let a = symmetrize(&(q * DMatrix::from_diagonal(&values) * q.transpose()));
            let p = symmetrize(&(a.transpose() * &a));
            QuadraticCost::new(p, -(a.transpose() * b))
        })
        .collect()
}

pub fn build_costs(config: &ExperimentConfig) -> Result<Vec<QuadraticCost>, OptimError> {
    let seed = sub_seed(config.seed, COST_STREAM);
    match config.cost_family {
        CostFamily::StronglyConvex => generate_quadratics(config.dimension, config.n_nodes, seed),
        CostFamily::RankDeficient => {
            generate_rank_deficient_quadratics(config.dimension, config.n_nodes, seed)
        }
    }
}

pub fn build_graph(config: &ExperimentConfig) -> Result<DirectedGraph, ExperimentError> {
    let graph = match &config.graph_file {
        Some(path) => DirectedGraph::read_file(path, true)?,
        None => random_strongly_connected_digraph(
            config.n_nodes,
            config.extra_edge_probability,
            sub_seed(config.seed, GRAPH_STREAM),
        )?,
    };
    if graph.node_count() != config.n_nodes {
        return Err(ConfigError::InvalidValue {
            key: "graph_file".to_string(),
            message: format!(
                "graph has {} nodes but n_nodes = {}",
                graph.node_count(),
                config.n_nodes
            ),
        }
        .into());
    }
    Ok(graph)
}

/// One sweep point.
#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub name: String,
    pub delta: Option<QuantizationLevel>,
}

impl SweepPoint {
    pub fn file_stem(&self) -> String {
        match &self.delta {
            Some(d) => format!("run_delta_{}", sanitize(d.label())),
            None => "run_exact_average".to_string(),
        }
    }
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub fn sweep_points(config: &ExperimentConfig) -> Vec<SweepPoint> {
    let mut points = Vec::new();
    if config.coordinator == CoordinatorKind::Fqac {
        points.extend(config.deltas.iter().map(|d| SweepPoint {
            name: format!("delta={}", d.label()),
            delta: Some(d.clone()),
        }));
    }
    if config.baseline || config.coordinator == CoordinatorKind::ExactAverage {
        points.push(SweepPoint {
            name: "exact_average".to_string(),
            delta: None,
        });
    }
    points
}

#[derive(Debug)]
pub struct RunResult {
    pub point: SweepPoint,
    pub outcome: Result<RunRecord, SolveFailure>,
    pub trace: Vec<(usize, FqacTraceRow)>,
    /// Max deviation from replayed centralized RC-ALADIN (baseline only).
    pub centralized_deviation: Option<f64>,
}

impl RunResult {
    pub fn record(&self) -> &RunRecord {
        match &self.outcome {
            Ok(r) => r,
            Err(f) => &f.partial,
        }
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary::of(self.record(), self.point.delta.as_ref().map(QuantizationLevel::as_f64))
    }
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub graph: DirectedGraph,
    pub runs: Vec<RunResult>,
}

impl ExperimentReport {
    pub fn any_failed(&self) -> bool {
        self.runs.iter().any(|r| r.outcome.is_err())
    }

    pub fn run(&self, delta: Option<&str>) -> Option<&RunResult> {
        self.runs.iter().find(|r| match (&r.point.delta, delta) {
            (Some(d), Some(s)) => d.label() == s,
            (None, None) => true,
            _ => false,
        })
    }

    /// `summary.csv` contents.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "run,delta,status,iterations,plateau_error,iterations_to_plateau,plateau_lyapunov,\
m_z,neighborhood_term,error_contraction,lyapunov_contraction,total_bits_quantized,\
total_bits_float_equivalent,total_messages,fqac_rounds_total,all_checks_ok,centralized_deviation\n",
        );
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |x| format!("{x:.16e}"));
        for run in &self.runs {
            let s = run.summary();
            let status = match &run.outcome {
                Ok(_) => "ok".to_string(),
                Err(f) => format!("failed: {}", f.error).replace(',', ";"),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{:.16e},{},{:.16e},{:.16e},{:.16e},{},{},{},{},{},{},{},{}",
                run.point.name,
                run.point.delta.as_ref().map_or("none", |d| d.label()),
                status,
                run.record().rows.len(),
                s.plateau_error,
                s.iterations_to_plateau,
                s.plateau_lyapunov,
                s.m_z,
                s.neighborhood,
                opt(s.error_contraction),
                opt(s.lyapunov_contraction),
                s.total_bits_quantized,
                s.total_bits_float_equivalent,
                s.total_messages,
                s.total_fqac_rounds,
                s.all_checks_ok,
                opt(run.centralized_deviation),
            );
        }
        out
    }

    pub fn meta_text(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        out.push_str(&self.config.to_text());
        let g = &self.graph;
        let _ = writeln!(out, "# graph: {} nodes, {} edges, diameter {}, hash {}",
            g.node_count(), g.edge_count(), g.diameter().unwrap_or(0), g.fingerprint());
        let source = match &self.config.graph_file {
            Some(p) => format!("file {}", p.display()),
            None => format!(
                "random Hamiltonian cycle plus independent extra edges (p = {})",
                self.config.extra_edge_probability
            ),
        };
        let _ = writeln!(out, "# graph source: {source}");
        let costs = match self.config.cost_family {
            CostFamily::StronglyConvex => {
                "P_i = A_i^T A_i + eps I, eps = 1e-6 trace(A_i^T A_i)/n; p_i = -A_i^T b_i"
            }
            CostFamily::RankDeficient => {
                "P_i = A_i^T A_i with rank(A_i) = n - 2, no ridge; p_i = -A_i^T b_i"
            }
        };
        let _ = writeln!(out, "# costs: {costs}");
        let init = match self.config.init {
            InitMode::Common => "z shared, uniform on [-1, 1]^n; lambda_i i.i.d. uniform on [-1, 1]^n",
            InitMode::Independent => "z_i and lambda_i i.i.d. uniform on [-1, 1]^n",
        };
        let _ = writeln!(out, "# initialization: {init}");
        if let Some(r) = self.runs.first() {
            let m = &r.record().meta;
            let _ = writeln!(out, "# regime: {} (min mu = {:e}, max L = {:e})", m.regime, m.mu_min, m.lipschitz_max);
        }
        out
    }

    /// Writes every run CSV, optional traces, `summary.csv` and `meta.txt`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, std::io::Error> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for run in &self.runs {
            let path = dir.join(format!("{}.csv", run.point.file_stem()));
            fs::write(&path, run.record().to_csv())?;
            written.push(path);
            if self.config.trace_fqac && run.point.delta.is_some() {
                let path = dir.join(format!(
                    "{}.csv",
                    run.point.file_stem().replacen("run_", "fqac_trace_", 1)
                ));
                fs::write(&path, trace_csv(&run.trace))?;
                written.push(path);
            }
        }
        let summary = dir.join("summary.csv");
        fs::write(&summary, self.summary_csv())?;
        written.push(summary);
        let meta = dir.join("meta.txt");
        fs::write(&meta, self.meta_text())?;
        written.push(meta);
        Ok(written)
    }
}

/// `iteration,round,node,chi,xi,gap`, with `chi` components `;`-separated.
pub fn trace_csv(rows: &[(usize, FqacTraceRow)]) -> String {
    let mut out = String::from("iteration,round,node,chi,xi,gap\n");
    for (k, r) in rows {
        let chi: Vec<String> = r.chi.iter().map(i64::to_string).collect();
        let _ = writeln!(out, "{},{},{},{},{},{}", k, r.round, r.node + 1, chi.join(";"), r.xi, r.gap);
    }
    out
}

/// Replays centralized RC-ALADIN from the run's starting point and returns
/// the largest deviation of `z` and `lambda` from the recorded final nodes
/// at every step. Only meaningful with a shared initial `z`.
pub fn centralized_deviation(
    costs: &[QuadraticCost],
    config: &SolverConfig,
    iterations: usize,
    graph: &DirectedGraph,
) -> Result<f64, OptimError> {
    let dimension = costs[0].dimension();
    let init = initial_point(costs.len(), dimension, config.seed, InitMode::Common);
    let oracles: Vec<Arc<dyn CostOracle>> = costs
        .iter()
        .map(|c| Arc::new(c.clone()) as Arc<dyn CostOracle>)
        .collect();
    let mut central = CentralState::new(
        init[0].0.clone(),
        init.iter().map(|p| p.1.clone()).collect(),
    );
    let mut nodes: Vec<crate::optimizer::NodeState> = init
        .into_iter()
        .zip(&oracles)
        .map(|((z, l), c)| crate::optimizer::NodeState::new(c.clone(), z, l))
        .collect();
    let mut worst: f64 = 0.0;
    for k in 1..=iterations {
        crate::optimizer::qudrc_aladin_step(
            &mut nodes,
            graph,
            config.rho,
            &Coordinator::ExactAverage,
            crate::netsim::SimRng::new(config.seed).for_invocation(k as u64),
        )?;
        central = rc_aladin_step(&oracles, &central, config.rho)?;
        for (node, l) in nodes.iter().zip(&central.lambda) {
            worst = worst
                .max((&node.z_hat - &central.z).amax())
                .max((&node.lambda_hat - l).amax());
        }
    }
    Ok(worst)
}

/// Runs every sweep point (concurrently, one thread each) on a shared
/// graph, cost set and starting point.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let graph = build_graph(config)?;
    let costs = build_costs(config)?;
    let points = sweep_points(config);
    let runs = std::thread::scope(|scope| {
        let handles: Vec<_> = points
            .into_iter()
            .map(|point| {
                let graph = &graph;
                let costs = &costs;
                scope.spawn(move || execute(config, graph, costs, point))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep thread panicked"))
            .collect()
    });
    Ok(ExperimentReport {
        config: config.clone(),
        graph,
        runs,
    })
}

fn execute(
    config: &ExperimentConfig,
    graph: &DirectedGraph,
    costs: &[QuadraticCost],
    point: SweepPoint,
) -> RunResult {
    let coordinator = match &point.delta {
        Some(level) => Coordinator::Fqac {
            level: level.clone(),
            config: config.fqac_config(),
        },
        None => Coordinator::ExactAverage,
    };
    let solver = config.solver_config(coordinator);
    match solve(costs, graph, &solver, config.trace_fqac) {
        Ok(out) => {
            let deviation = if point.delta.is_none() && config.init == InitMode::Common {
                centralized_deviation(costs, &solver, out.record.rows.len(), graph).ok()
            } else {
                None
            };
            RunResult {
                point,
                outcome: Ok(out.record),
                trace: out.trace,
                centralized_deviation: deviation,
            }
        }
        Err(failure) => RunResult {
            point,
            outcome: Err(failure),
            trace: Vec::new(),
            centralized_deviation: None,
        },
    }
}

/// One line of `check` output.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Short run of the sweep with every runtime invariant evaluated.
pub fn check(config: &ExperimentConfig, iterations: usize) -> Result<Vec<CheckLine>, ExperimentError> {
    let mut short = config.clone();
    short.max_outer_iterations = iterations.min(config.max_outer_iterations).max(1);
    short.baseline = true;
    short.trace_fqac = false;
    let report = run_experiment(&short)?;
    let mut lines = Vec::new();
    for run in &report.runs {
        let name = &run.point.name;
        match &run.outcome {
            Ok(record) => {
                let bad = record.rows.iter().find(|r| !r.checks.all_ok());
                lines.push(CheckLine {
                    name: format!("{name}: bound checks"),
                    passed: bad.is_none(),
                    detail: bad.map_or(
                        format!("{} iterations", record.rows.len()),
                        |r| format!("first failure at iteration {}", r.iteration),
                    ),
                });
                if run.point.delta.is_some() {
                    let s = run.summary();
                    lines.push(CheckLine {
                        name: format!("{name}: quantized bits <= float bits"),
                        passed: s.total_bits_quantized <= s.total_bits_float_equivalent,
                        detail: format!(
                            "{} vs {}",
                            s.total_bits_quantized, s.total_bits_float_equivalent
                        ),
                    });
                }
            }
            Err(f) => lines.push(CheckLine {
                name: format!("{name}: run"),
                passed: false,
                detail: f.to_string(),
            }),
        }
        if let Some(dev) = run.centralized_deviation {
            lines.push(CheckLine {
                name: format!("{name}: matches centralized iterates"),
                passed: dev <= 1e-12,
                detail: format!("max deviation {dev:e}"),
            });
        }
    }
    Ok(lines)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = ExperimentConfig::default();
        assert_eq!((c.n_nodes, c.dimension, c.rho), (20, 20, 1.0));
        let labels: Vec<_> = c.deltas.iter().map(|d| d.label().to_string()).collect();
        assert_eq!(labels, ["1e-3", "1e-4", "1e-5"]);
        assert_eq!(sweep_points(&c).len(), 4);
        c.validate().unwrap();
    }

    #[test]
    fn config_text_round_trip() {
        let text = "# sweep\nn_nodes = 8\ndimension=4\ndelta = 1e-2\ndelta = 1e-3, 5e-4\n\
                    coordinator = fqac\nbit-width = adaptive\ngraph_file = none\nmax_fqac_rounds = 5000\n";
        let c = ExperimentConfig::from_text(text).unwrap();
        assert_eq!(c.n_nodes, 8);
        assert_eq!(c.deltas.len(), 3);
        assert_eq!(c.bit_width, WidthPolicy::Adaptive);
        assert_eq!(c.max_fqac_rounds, Some(5000));
        let again = ExperimentConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn config_errors() {
        assert!(matches!(
            ExperimentConfig::from_text("bogus = 1"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_text("rho 1"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(ExperimentConfig::from_text("rho = -1").is_err());
        assert!(ExperimentConfig::from_text("delta = 0").is_err());
        assert!(ExperimentConfig::from_text("n_nodes = 1").is_err());
        assert!(ExperimentConfig::from_text("extra_edge_probability = 2").is_err());
        assert!(ExperimentConfig::from_text("trace_fqac = maybe").is_err());
    }

    #[test]
    fn generated_costs_are_positive_definite() {
        let costs = generate_quadratics(6, 5, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for c in &costs {
            // regenerate the ridge floor independently of the cost object
            let a = random_symmetric(6, &mut rng);
            let _ = normal_vector(6, &mut rng);
            let gram = a.transpose() * &a;
            let floor = 1e-6 * gram.trace() / 6.0;
            let min_eig = SymmetricEigen::new(c.matrix().clone()).eigenvalues.min();
            assert!(min_eig > 0.0);
            assert!(c.mu() >= floor * (1.0 - 1e-9));
        }
        let again = generate_quadratics(6, 5, 3).unwrap();
        for (a, b) in costs.iter().zip(&again) {
            assert_eq!(a.matrix(), b.matrix());
            assert_eq!(a.linear(), b.linear());
        }
        assert!(generate_quadratics(0, 5, 1).is_err());
        assert!(generate_quadratics(3, 1, 1).is_err());
    }

    #[test]
    fn rank_deficient_costs() {
        let costs = generate_rank_deficient_quadratics(6, 4, 9).unwrap();
        for c in &costs {
            assert_eq!(c.mu(), 0.0);
            let eig = SymmetricEigen::new(c.matrix().clone()).eigenvalues;
            let zeros = eig.iter().filter(|v| v.abs() < 1e-9 * c.lipschitz()).count();
            assert_eq!(zeros, 2);
        }
        assert!(crate::optimizer::centralized_optimum(&costs).is_ok());
    }

    #[test]
    fn sub_seeds_differ_by_stream() {
        assert_ne!(sub_seed(1, 0), sub_seed(1, 1));
        assert_eq!(sub_seed(1, 0), sub_seed(1, 0));
    }

    #[test]
    fn small_sweep_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::from_text(
            "n_nodes = 5\ndimension = 3\ndelta = 1e-2, 1e-3\nmax_outer_iterations = 15\ntrace_fqac = true\n",
        )
        .unwrap();
        c.out = dir.path().to_path_buf();
        let report = run_experiment(&c).unwrap();
        assert!(!report.any_failed());
        let files = report.write(dir.path()).unwrap();
        let names: Vec<String> = files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        for expected in [
            "run_delta_1e-2.csv",
            "fqac_trace_delta_1e-2.csv",
            "run_delta_1e-3.csv",
            "run_exact_average.csv",
            "summary.csv",
            "meta.txt",
        ] {
            assert!(names.iter().any(|n| n == expected), "{expected} missing from {names:?}");
        }
        let dev = report.run(None).unwrap().centralized_deviation.unwrap();
        assert!(dev <= 1e-12);
        let meta = fs::read_to_string(dir.path().join("meta.txt")).unwrap();
        assert!(ExperimentConfig::from_text(&meta).is_ok());
    }

    #[test]
    fn check_passes_on_small_config() {
        let c = ExperimentConfig::from_text("n_nodes = 4\ndimension = 3\ndelta = 1e-2\n").unwrap();
        let lines = check(&c, 10).unwrap();
        assert!(lines.iter().all(|l| l.passed), "{lines:?}");
    }
}
