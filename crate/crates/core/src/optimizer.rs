//! Reduced-consensus ALADIN, centralized and decentralized.
//!
//! One outer iteration at node `i`:
//!
//! ```text
//! x+      = argmin f(x) + lambda^T x + rho/2 |x - z|^2
//! g       = rho (z - x+) - lambda
//! z+      = average over nodes of  y = x+ - g / rho
//! lambda+ = rho (x+ - z+) - g
//! ```
//!
//! The centralized baseline computes the average exactly at a coordinator.
//! The decentralized variant obtains it from [`crate::fqac`], so each node
//! ends up with its own estimate `z_i+` on the quantization lattice.

use std::fmt;
use std::sync::{Arc, Mutex};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fqac::{fqac_run, FqacConfig, FqacError, FqacTraceRow};
use crate::graph::{DirectedGraph, GraphError};
use crate::metrics::{
    lyapunov, BoundTracker, IterationRow, MetricsError, RunMeta, RunRecord,
};
use crate::netsim::{CommStats, SimRng};
use crate::quantizer::QuantizationLevel;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system: {0}")]
    SingularSystem(String),
    #[error("oracle returned a non-stationary point (residual {residual:e})")]
    OracleFailure { residual: f64 },
    #[error("invalid cost: {0}")]
    InvalidCost(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Fqac(#[from] FqacError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Local objective as seen by a node.
pub trait CostOracle: fmt::Debug + Send + Sync {
    fn dimension(&self) -> usize;

    /// Minimizer of `f(x) + lambda^T x + rho/2 |x - z|^2`.
    fn local_argmin(
        &self,
        lambda_hat: &DVector<f64>,
        z_hat: &DVector<f64>,
        rho: f64,
    ) -> Result<DVector<f64>, OptimError>;

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
}

/// `f(x) = 1/2 x^T P x + p^T x` with symmetric positive semidefinite `P`.
pub struct QuadraticCost {
    matrix: DMatrix<f64>,
    linear: DVector<f64>,
    mu: f64,
    lipschitz: f64,
    factor: Mutex<Option<(u64, Cholesky<f64, Dyn>)>>,
}

impl QuadraticCost {
    /// Validates symmetry (to `1e-12 * max|P|`) and positive
    /// semidefiniteness, and records the extreme eigenvalues. Eigenvalues
    /// within round-off of zero are reported as `mu = 0`.
    pub fn new(matrix: DMatrix<f64>, linear: DVector<f64>) -> Result<Self, OptimError> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n || linear.len() != n {
            return Err(OptimError::DimensionMismatch(format!(
                "P is {}x{}, p has length {}",
                matrix.nrows(),
                matrix.ncols(),
                linear.len()
            )));
        }
        if matrix.iter().chain(linear.iter()).any(|v| !v.is_finite()) {
            return Err(OptimError::InvalidCost("non-finite entry".to_string()));
        }
        let scale = matrix.amax();
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(OptimError::InvalidCost(format!(
                "P is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let eig = SymmetricEigen::new(matrix.clone()).eigenvalues;
        let lipschitz = eig.max();
        let min = eig.min();
        let floor = 1e-12 * lipschitz.abs().max(1.0) * n as f64;
        if min < -floor {
            return Err(OptimError::InvalidCost(format!(
                "P has negative eigenvalue {min:e}"
            )));
        }
        let mu = if min <= floor { 0.0 } else { min };
        Ok(Self {
            matrix,
            linear,
            mu,
            lipschitz,
            factor: Mutex::new(None),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn linear(&self) -> &DVector<f64> {
        &self.linear
    }

    /// Smallest eigenvalue of `P` (strong convexity modulus).
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Largest eigenvalue of `P` (gradient Lipschitz constant).
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.matrix * x)) + self.linear.dot(x)
    }

    fn solve_shifted(&self, rhs: &DVector<f64>, rho: f64) -> Result<DVector<f64>, OptimError> {
        let mut cache = self.factor.lock().unwrap_or_else(|e| e.into_inner());
        let stale = cache.as_ref().is_none_or(|(bits, _)| *bits != rho.to_bits());
        if stale {
            let n = self.matrix.nrows();
            let shifted = &self.matrix + DMatrix::<f64>::identity(n, n) * rho;
            let chol = Cholesky::new(shifted).ok_or_else(|| {
                OptimError::SingularSystem(format!("P + {rho} I is not positive definite"))
            })?;
            *cache = Some((rho.to_bits(), chol));
        }
        let (_, chol) = cache.as_ref().expect("factor cached above");
        Ok(chol.solve(rhs))
    }

    /// `dimension`, then `P` row by row, then `p`, whitespace separated.
    pub fn to_text(&self) -> String {
        let row = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
        };
        let mut out = format!("{}\n", self.matrix.nrows());
        for r in self.matrix.row_iter() {
            out.push_str(&row(&mut r.iter().copied()));
            out.push('\n');
        }
        out.push_str(&row(&mut self.linear.iter().copied()));
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self, OptimError> {
        let mut tokens = text.split_whitespace();
        let n: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| OptimError::InvalidCost("missing dimension header".to_string()))?;
        let values: Vec<f64> = tokens
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| OptimError::InvalidCost(format!("bad number: {e}")))?;
        if values.len() != n * n + n {
            return Err(OptimError::InvalidCost(format!(
                "expected {} numbers after the header, found {}",
                n * n + n,
                values.len()
            )));
        }
        let matrix = DMatrix::from_row_slice(n, n, &values[..n * n]);
        let linear = DVector::from_column_slice(&values[n * n..]);
        Self::new(matrix, linear)
    }
}

impl Clone for QuadraticCost {
    fn clone(&self) -> Self {
        Self {
            matrix: self.matrix.clone(),
            linear: self.linear.clone(),
            mu: self.mu,
            lipschitz: self.lipschitz,
            factor: Mutex::new(None),
        }
    }
}

impl fmt::Debug for QuadraticCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("QuadraticCost")
            .field("dimension", &self.matrix.nrows())
            .field("mu", &self.mu)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl CostOracle for QuadraticCost {
    fn dimension(&self) -> usize {
        self.matrix.nrows()
    }

    /// Solves `(P + rho I) x = rho z - lambda - p` with a cached Cholesky factor.
    fn local_argmin(
        &self,
        lambda_hat: &DVector<f64>,
        z_hat: &DVector<f64>,
        rho: f64,
    ) -> Result<DVector<f64>, OptimError> {
        let rhs = z_hat * rho - lambda_hat - &self.linear;
        self.solve_shifted(&rhs, rho)
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.linear
    }
}

const STATIONARITY_TOL: f64 = 1e-8;

/// Width charged per real component exchanged with a central coordinator.
pub const COORDINATOR_FLOAT_BITS: u64 = 64;

fn check_dims(n: usize, vs: &[(&str, &DVector<f64>)]) -> Result<(), OptimError> {
    for (name, v) in vs {
        if v.len() != n {
            return Err(OptimError::DimensionMismatch(format!(
                "{name} has length {}, expected {n}",
                v.len()
            )));
        }
    }
    Ok(())
}

/// Local primal step, with a first-order stationarity check on the
/// oracle's answer.
pub fn local_primal_update(
    cost: &dyn CostOracle,
    lambda_hat: &DVector<f64>,
    z_hat: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>, OptimError> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(OptimError::InvalidConfig(format!("rho must be positive, got {rho}")));
    }
    let n = cost.dimension();
    check_dims(n, &[("lambda_hat", lambda_hat), ("z_hat", z_hat)])?;
    let x = cost.local_argmin(lambda_hat, z_hat, rho)?;
    check_dims(n, &[("oracle minimizer", &x)])?;
    let grad = cost.gradient(&x);
    let shift = (&x - z_hat) * rho;
    let residual = (&grad + lambda_hat + &shift).amax();
    let scale = 1.0 + grad.amax() + lambda_hat.amax() + shift.amax();
    if residual.is_nan() || residual > STATIONARITY_TOL * scale {
        return Err(OptimError::OracleFailure { residual });
    }
    Ok(x)
}

/// `g = rho (z - x+) - lambda`.
pub fn gradient_eval(
    rho: f64,
    z_hat: &DVector<f64>,
    x_plus: &DVector<f64>,
    lambda_hat: &DVector<f64>,
) -> DVector<f64> {
    (z_hat - x_plus) * rho - lambda_hat
}

/// `lambda+ = rho (x+ - z+) - g`.
pub fn dual_update(
    rho: f64,
    x_plus: &DVector<f64>,
    z_hat_plus: &DVector<f64>,
    g: &DVector<f64>,
) -> DVector<f64> {
    (x_plus - z_hat_plus) * rho - g
}

/// Per-node optimization state.
#[derive(Debug, Clone)]
pub struct NodeState {
    pub x: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub lambda_hat: DVector<f64>,
    pub g: DVector<f64>,
    pub cost: Arc<dyn CostOracle>,
}

impl NodeState {
    pub fn new(cost: Arc<dyn CostOracle>, z_hat: DVector<f64>, lambda_hat: DVector<f64>) -> Self {
        let n = cost.dimension();
        Self {
            x: DVector::zeros(n),
            z_hat,
            lambda_hat,
            g: DVector::zeros(n),
            cost,
        }
    }
}

/// How the nodes obtain the average of `y_i = x_i+ - g_i / rho`.
#[derive(Debug, Clone)]
pub enum Coordinator {
    /// Finite-time quantized average consensus over the graph.
    Fqac {
        level: QuantizationLevel,
        config: FqacConfig,
    },
    /// Exact arithmetic mean, as computed by a central coordinator.
    ExactAverage,
}

impl Coordinator {
    pub fn delta(&self) -> Option<&QuantizationLevel> {
        match self {
            Coordinator::Fqac { level, .. } => Some(level),
            Coordinator::ExactAverage => None,
        }
    }
}

/// Everything needed to audit one outer iteration.
#[derive(Debug, Clone)]
pub struct IterationSnapshot {
    pub z_hat: Vec<DVector<f64>>,
    pub lambda_hat: Vec<DVector<f64>>,
    pub x_plus: Vec<DVector<f64>>,
    pub g: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub z_hat_plus: Vec<DVector<f64>>,
    pub lambda_hat_plus: Vec<DVector<f64>>,
    /// Exact mean of `y`.
    pub exact_mean: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub snapshot: IterationSnapshot,
    pub fqac_rounds: u64,
    pub stats: CommStats,
    pub trace: Vec<FqacTraceRow>,
}

fn mean(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut sum = DVector::zeros(vs[0].len());
    for v in vs {
        sum += v;
    }
    sum / vs.len() as f64
}

/// One decentralized outer iteration over all nodes.
pub fn qudrc_aladin_step(
    nodes: &mut [NodeState],
    graph: &DirectedGraph,
    rho: f64,
    coordinator: &Coordinator,
    rng: SimRng,
) -> Result<StepReport, OptimError> {
    if nodes.len() != graph.node_count() {
        return Err(OptimError::DimensionMismatch(format!(
            "{} nodes for a graph of {}",
            nodes.len(),
            graph.node_count()
        )));
    }
    let n = nodes[0].cost.dimension();
    for node in nodes.iter() {
        check_dims(
            n,
            &[
                ("z_hat", &node.z_hat),
                ("lambda_hat", &node.lambda_hat),
            ],
        )?;
        if node.cost.dimension() != n {
            return Err(OptimError::DimensionMismatch("mixed cost dimensions".to_string()));
        }
    }

    let mut x_plus = Vec::with_capacity(nodes.len());
    let mut g = Vec::with_capacity(nodes.len());
    let mut y = Vec::with_capacity(nodes.len());
    for node in nodes.iter() {
        let x = local_primal_update(node.cost.as_ref(), &node.lambda_hat, &node.z_hat, rho)?;
        let gi = gradient_eval(rho, &node.z_hat, &x, &node.lambda_hat);
        y.push(&x - &gi / rho);
        x_plus.push(x);
        g.push(gi);
    }
    let exact_mean = mean(&y);

    let (z_hat_plus, fqac_rounds, stats, trace) = match coordinator {
        Coordinator::ExactAverage => {
            let stats = CommStats {
                // every node uploads y_i and downloads the mean
                messages: 2 * nodes.len() as u64,
                integer_payload_bits: 0,
                rounds: 1,
                equivalent_float_bits: 2 * (nodes.len() * n) as u64 * COORDINATOR_FLOAT_BITS,
                self_deliveries: 0,
            };
            (vec![exact_mean.clone(); nodes.len()], 0, stats, Vec::new())
        }
        Coordinator::Fqac { level, config } => {
            let inputs: Vec<Vec<f64>> = y.iter().map(|v| v.as_slice().to_vec()).collect();
            let out = fqac_run(&inputs, graph, level, rng, config)?;
            let z: Vec<DVector<f64>> = out
                .estimates
                .iter()
                .map(|e| DVector::from_column_slice(e))
                .collect();
            (z, out.rounds, out.stats, out.trace)
        }
    };

    let lambda_hat_plus: Vec<DVector<f64>> = x_plus
        .iter()
        .zip(&z_hat_plus)
        .zip(&g)
        .map(|((x, z), gi)| dual_update(rho, x, z, gi))
        .collect();

    let snapshot = IterationSnapshot {
        z_hat: nodes.iter().map(|s| s.z_hat.clone()).collect(),
        lambda_hat: nodes.iter().map(|s| s.lambda_hat.clone()).collect(),
        x_plus: x_plus.clone(),
        g: g.clone(),
        y,
        z_hat_plus: z_hat_plus.clone(),
        lambda_hat_plus: lambda_hat_plus.clone(),
        exact_mean,
    };
    for (i, node) in nodes.iter_mut().enumerate() {
        node.x = x_plus[i].clone();
        node.g = g[i].clone();
        node.z_hat = z_hat_plus[i].clone();
        node.lambda_hat = lambda_hat_plus[i].clone();
    }
    Ok(StepReport {
        snapshot,
        fqac_rounds,
        stats,
        trace,
    })
}

/// State of the centralized method: one shared `z`, per-node duals.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralState {
    pub z: DVector<f64>,
    pub lambda: Vec<DVector<f64>>,
    pub x: Vec<DVector<f64>>,
}

impl CentralState {
    pub fn new(z: DVector<f64>, lambda: Vec<DVector<f64>>) -> Self {
        let x = vec![DVector::zeros(z.len()); lambda.len()];
        Self { z, lambda, x }
    }
}

/// One iteration of centralized RC-ALADIN. The coordination step is the
/// closed-form solution of the reduced consensus QP.
pub fn rc_aladin_step(
    costs: &[Arc<dyn CostOracle>],
    state: &CentralState,
    rho: f64,
) -> Result<CentralState, OptimError> {
    if costs.is_empty() || costs.len() != state.lambda.len() {
        return Err(OptimError::DimensionMismatch(format!(
            "{} costs, {} duals",
            costs.len(),
            state.lambda.len()
        )));
    }
    let mut x = Vec::with_capacity(costs.len());
    let mut g = Vec::with_capacity(costs.len());
    let mut z_next = DVector::zeros(state.z.len());
    for (cost, lambda) in costs.iter().zip(&state.lambda) {
        let xi = local_primal_update(cost.as_ref(), lambda, &state.z, rho)?;
        let gi = (&state.z - &xi) * rho - lambda;
        z_next += &xi - &gi / rho;
        x.push(xi);
        g.push(gi);
    }
    z_next /= costs.len() as f64;
    let lambda = x
        .iter()
        .zip(&g)
        .map(|(xi, gi)| (xi - &z_next) * rho - gi)
        .collect();
    Ok(CentralState {
        z: z_next,
        lambda,
        x,
    })
}

/// Exact solution of the consensus problem for quadratic costs.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub z_star: DVector<f64>,
    /// `lambda_i* = -grad f_i(z*)`; sums to zero.
    pub lambda_star: Vec<DVector<f64>>,
}

/// `z* = -(sum P_i)^{-1} sum p_i`.
pub fn centralized_optimum(costs: &[QuadraticCost]) -> Result<Optimum, OptimError> {
    let first = costs
        .first()
        .ok_or_else(|| OptimError::DimensionMismatch("no costs".to_string()))?;
    let n = first.dimension();
    let mut p_sum = DMatrix::<f64>::zeros(n, n);
    let mut q_sum = DVector::<f64>::zeros(n);
    for c in costs {
        if c.dimension() != n {
            return Err(OptimError::DimensionMismatch("mixed cost dimensions".to_string()));
        }
        p_sum += c.matrix();
        q_sum += c.linear();
    }
    let rhs = -q_sum;
    let z_star = match Cholesky::new(p_sum.clone()) {
        Some(chol) => chol.solve(&rhs),
        None => p_sum
            .lu()
            .solve(&rhs)
            .ok_or_else(|| OptimError::SingularSystem("sum of P_i is singular".to_string()))?,
    };
    let lambda_star = costs.iter().map(|c| -c.gradient(&z_star)).collect();
    Ok(Optimum {
        z_star,
        lambda_star,
    })
}

/// Whether the strong-convexity rate argument applies (every `mu_i > 0`) or
/// only the smooth-convex one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    StronglyConvex,
    SmoothConvex,
}

impl Regime {
    pub fn of(costs: &[QuadraticCost]) -> Self {
        if costs.iter().all(|c| c.mu() > 0.0) {
            Regime::StronglyConvex
        } else {
            Regime::SmoothConvex
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Regime::StronglyConvex => "strongly-convex",
            Regime::SmoothConvex => "smooth-convex",
        }
    }
}

/// Starting point for the outer loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    /// One `z` drawn uniformly on `[-1, 1]^n` and shared by every node;
    /// duals drawn independently per node.
    #[default]
    Common,
    /// `z_i` and `lambda_i` drawn independently per node.
    Independent,
}

impl InitMode {
    pub fn label(self) -> &'static str {
        match self {
            InitMode::Common => "common",
            InitMode::Independent => "independent",
        }
    }
}

impl std::str::FromStr for InitMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "common" => Ok(InitMode::Common),
            "independent" => Ok(InitMode::Independent),
            other => Err(format!("unknown init mode {other:?}")),
        }
    }
}

/// Draws `(z_hat_i, lambda_hat_i)` for every node.
pub fn initial_point(
    node_count: usize,
    dimension: usize,
    seed: u64,
    mode: InitMode,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(INIT_STREAM);
    let draw = |rng: &mut ChaCha8Rng| {
        DVector::from_fn(dimension, |_, _| rng.random_range(-1.0..=1.0))
    };
    let common = draw(&mut rng);
    (0..node_count)
        .map(|_| {
            let z = match mode {
                InitMode::Common => common.clone(),
                InitMode::Independent => draw(&mut rng),
            };
            (z, draw(&mut rng))
        })
        .collect()
}

const INIT_STREAM: u64 = 2;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub rho: f64,
    pub max_iterations: usize,
    /// Early stop once `max_i |z_i+ - z_i|_inf < stop_tol` for `patience`
    /// consecutive iterations.
    pub stop_tol: f64,
    pub patience: usize,
    pub coordinator: Coordinator,
    pub seed: u64,
    pub init: InitMode,
}

impl SolverConfig {
    pub fn new(coordinator: Coordinator) -> Self {
        Self {
            rho: 1.0,
            max_iterations: 200,
            stop_tol: 1e-12,
            patience: 10,
            coordinator,
            seed: 0,
            init: InitMode::Common,
        }
    }
}

/// A run that stopped on an error, with the rows recorded before it.
#[derive(Debug, Clone)]
pub struct SolveFailure {
    pub error: OptimError,
    pub partial: RunRecord,
}

impl fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (after {} recorded iterations)",
            self.error,
            self.partial.rows.len()
        )
    }
}

impl std::error::Error for SolveFailure {}

impl From<OptimError> for SolveFailure {
    fn from(error: OptimError) -> Self {
        Self {
            error,
            partial: RunRecord::default(),
        }
    }
}

/// Output of [`solve`]: the metric record plus final node states.
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub record: RunRecord,
    pub nodes: Vec<NodeState>,
    pub optimum: Optimum,
    pub trace: Vec<(usize, FqacTraceRow)>,
}

/// Runs the outer loop on quadratic costs and records per-iteration metrics
/// against the exact optimum.
pub fn solve(
    costs: &[QuadraticCost],
    graph: &DirectedGraph,
    config: &SolverConfig,
    collect_trace: bool,
) -> Result<SolveOutcome, SolveFailure> {
    if !(config.rho > 0.0 && config.rho.is_finite()) {
        return Err(OptimError::InvalidConfig(format!("rho = {}", config.rho)).into());
    }
    if costs.len() != graph.node_count() {
        return Err(OptimError::DimensionMismatch(format!(
            "{} costs for {} nodes",
            costs.len(),
            graph.node_count()
        ))
        .into());
    }
    let diameter = graph.diameter().map_err(OptimError::from)?;
    let optimum = centralized_optimum(costs)?;
    let dimension = optimum.z_star.len();
    let rho = config.rho;
    let mut record = RunRecord::new(RunMeta {
        seed: config.seed,
        delta: config.coordinator.delta().map(|d| d.label().to_string()),
        rho,
        node_count: costs.len(),
        dimension,
        graph_hash: graph.fingerprint(),
        diameter,
        regime: Regime::of(costs).label().to_string(),
        coordinator: match config.coordinator {
            Coordinator::Fqac { .. } => "fqac".to_string(),
            Coordinator::ExactAverage => "exact_average".to_string(),
        },
        init: config.init.label().to_string(),
        mu_min: costs.iter().map(QuadraticCost::mu).fold(f64::INFINITY, f64::min),
        lipschitz_max: costs.iter().map(QuadraticCost::lipschitz).fold(0.0, f64::max),
        extra: Vec::new(),
    });

    let mut nodes: Vec<NodeState> = initial_point(costs.len(), dimension, config.seed, config.init)
        .into_iter()
        .zip(costs)
        .map(|((z, l), c)| NodeState::new(Arc::new(c.clone()), z, l))
        .collect();
    let mut tracker = BoundTracker::new(rho, config.coordinator.delta().map(|d| d.as_f64()));
    tracker.observe_start(&nodes, &optimum.z_star);
    let fqac_seed = SimRng::new(config.seed);
    let mut calm = 0;
    let mut trace = Vec::new();

    for k in 1..=config.max_iterations {
        let report = match qudrc_aladin_step(
            &mut nodes,
            graph,
            rho,
            &config.coordinator,
            fqac_seed.for_invocation(k as u64),
        ) {
            Ok(r) => r,
            Err(error) => {
                return Err(SolveFailure {
                    error,
                    partial: record,
                })
            }
        };
        let snap = &report.snapshot;
        let checks = tracker.check(snap, &optimum.z_star);
        let z_rep = mean(&snap.z_hat_plus);
        let lyap = match lyapunov(&z_rep, &snap.lambda_hat_plus, &optimum.z_star, &optimum.lambda_star, rho) {
            Ok(v) => v,
            Err(e) => {
                return Err(SolveFailure {
                    error: e.into(),
                    partial: record,
                })
            }
        };
        let solution_error: f64 = snap.x_plus.iter().map(|x| (x - &optimum.z_star).norm()).sum();
        let consensus_spread = snap
            .z_hat_plus
            .iter()
            .map(|z| (z - &z_rep).amax())
            .fold(0.0, f64::max);
        let row = IterationRow {
            iteration: k,
            solution_error,
            lyapunov: lyap,
            fqac_rounds: report.fqac_rounds,
            messages: report.stats.messages,
            bits_quantized: report.stats.integer_payload_bits,
            bits_float_equivalent: report.stats.equivalent_float_bits,
            consensus_spread,
            checks,
        };
        if let Err(e) = record.push(row) {
            return Err(SolveFailure {
                error: e.into(),
                partial: record,
            });
        }
        if collect_trace {
            trace.extend(report.trace.into_iter().map(|r| (k, r)));
        }

        let movement = snap
            .z_hat
            .iter()
            .zip(&snap.z_hat_plus)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        calm = if movement < config.stop_tol { calm + 1 } else { 0 };
        if config.patience > 0 && calm >= config.patience {
            break;
        }
    }
    Ok(SolveOutcome {
        record,
        nodes,
        optimum,
        trace,
    })
}
