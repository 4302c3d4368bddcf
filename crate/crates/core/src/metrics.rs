//! Per-iteration metrics, bound checks and run records.

use std::fmt::Write as _;

use nalgebra::DVector;
use thiserror::Error;

use crate::optimizer::{IterationSnapshot, NodeState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("row for iteration {got} appended after iteration {last}")]
    OutOfOrder { last: usize, got: usize },
}

/// `(1/rho) sum_i |lambda_i - lambda_i*|^2 + rho N |z - z*|^2`.
pub fn lyapunov(
    z_hat: &DVector<f64>,
    lambda_hat: &[DVector<f64>],
    z_star: &DVector<f64>,
    lambda_star: &[DVector<f64>],
    rho: f64,
) -> Result<f64, MetricsError> {
    if lambda_hat.len() != lambda_star.len() {
        return Err(MetricsError::DimensionMismatch(format!(
            "{} duals against {} optimal duals",
            lambda_hat.len(),
            lambda_star.len()
        )));
    }
    let n = z_star.len();
    if z_hat.len() != n || lambda_hat.iter().chain(lambda_star).any(|l| l.len() != n) {
        return Err(MetricsError::DimensionMismatch(format!(
            "vectors must all have length {n}"
        )));
    }
    let dual: f64 = lambda_hat
        .iter()
        .zip(lambda_star)
        .map(|(l, s)| (l - s).norm_squared())
        .sum();
    let primal = (z_hat - z_star).norm_squared();
    Ok(dual / rho + rho * lambda_hat.len() as f64 * primal)
}

/// Results of auditing one iteration against the coordination error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoundChecks {
    /// `max_i |z_i+ - mean(y)|_inf`.
    pub z_gap_max: f64,
    /// `max_i |lambda_i+ - (rho (x_i+ - mean(y)) - g_i)|_inf`.
    pub lambda_gap_max: f64,
    /// `|sum_i lambda_i+|_inf`.
    pub dual_sum_inf: f64,
    /// `max_i |x+ - (lambda+ - lambda)/(2 rho) - (z+ + z)/2|_inf / (1 + |x+|_inf)`.
    pub identity_residual: f64,
    pub coordination_ok: bool,
    pub dual_sum_ok: bool,
    pub identity_ok: bool,
    /// Running max of `|z_i - z*|` over everything observed so far.
    pub m_z: f64,
}

impl BoundChecks {
    pub fn all_ok(&self) -> bool {
        self.coordination_ok && self.dual_sum_ok && self.identity_ok
    }
}

pub const IDENTITY_TOL: f64 = 1e-9;

/// Stateful checker: remembers the running `M_z`.
#[derive(Debug, Clone)]
pub struct BoundTracker {
    rho: f64,
    delta: f64,
    m_z: f64,
}

impl BoundTracker {
    /// `delta = None` for exact averaging (all bounds collapse to round-off).
    pub fn new(rho: f64, delta: Option<f64>) -> Self {
        Self {
            rho,
            delta: delta.unwrap_or(0.0),
            m_z: 0.0,
        }
    }

    pub fn m_z(&self) -> f64 {
        self.m_z
    }

    pub fn observe_start(&mut self, nodes: &[NodeState], z_star: &DVector<f64>) {
        for node in nodes {
            self.m_z = self.m_z.max((&node.z_hat - z_star).norm());
        }
    }

    /// Evaluates every bound for one iteration and folds the new estimates
    /// into `M_z`.
    pub fn check(&mut self, snap: &IterationSnapshot, z_star: &DVector<f64>) -> BoundChecks {
        let rho = self.rho;
        let count = snap.x_plus.len() as f64;
        let mut magnitude: f64 = 1.0 + snap.exact_mean.amax() * rho;
        let mut z_gap_max: f64 = 0.0;
        let mut lambda_gap_max: f64 = 0.0;
        let mut identity_residual: f64 = 0.0;
        let mut dual_sum = DVector::zeros(z_star.len());
        for i in 0..snap.x_plus.len() {
            let x = &snap.x_plus[i];
            let g = &snap.g[i];
            let zp = &snap.z_hat_plus[i];
            let lp = &snap.lambda_hat_plus[i];
            magnitude = magnitude
                .max(rho * x.amax())
                .max(g.amax())
                .max(rho * zp.amax())
                .max(rho * snap.y[i].amax())
                .max(lp.amax())
                .max(snap.lambda_hat[i].amax());

            z_gap_max = z_gap_max.max((zp - &snap.exact_mean).amax());
            let exact_dual = (x - &snap.exact_mean) * rho - g;
            lambda_gap_max = lambda_gap_max.max((lp - exact_dual).amax());
            dual_sum += lp;

            let predicted = (lp - &snap.lambda_hat[i]) / (2.0 * rho) + (zp + &snap.z_hat[i]) / 2.0;
            identity_residual = identity_residual.max((x - predicted).amax() / (1.0 + x.amax()));

            self.m_z = self.m_z.max((zp - z_star).norm());
        }
        // slack for floating-point evaluation of the same identities
        let roundoff = 64.0 * f64::EPSILON * magnitude * count;
        let delta = self.delta;
        let dual_sum_inf = dual_sum.amax();
        BoundChecks {
            z_gap_max,
            lambda_gap_max,
            dual_sum_inf,
            identity_residual,
            coordination_ok: z_gap_max <= 2.0 * delta + roundoff / rho
                && lambda_gap_max <= 2.0 * rho * delta + roundoff,
            dual_sum_ok: dual_sum_inf <= 2.0 * rho * count * delta + roundoff,
            identity_ok: identity_residual <= IDENTITY_TOL,
            m_z: self.m_z,
        }
    }
}

/// Neighborhood radius term `6 rho M_z N delta`.
pub fn neighborhood_term(rho: f64, m_z: f64, node_count: usize, delta: f64) -> f64 {
    6.0 * rho * m_z * node_count as f64 * delta
}

/// Median of the last 10% of the series (at least one value).
pub fn plateau_floor(series: &[f64]) -> f64 {
    if series.is_empty() {
        return 0.0;
    }
    let tail = series.len().div_ceil(10).max(1);
    let mut last: Vec<f64> = series[series.len() - tail..].to_vec();
    last.sort_by(f64::total_cmp);
    let mid = last.len() / 2;
    if last.len() % 2 == 1 {
        last[mid]
    } else {
        0.5 * (last[mid - 1] + last[mid])
    }
}

/// Fitted geometric decay rate over the leading segment above the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionEstimate {
    /// Per-iteration factor `exp(slope)`.
    pub factor: f64,
    /// Index range `[start, end)` of the samples used.
    pub start: usize,
    pub end: usize,
}

/// Least-squares slope of `ln(L_k - floor)` over the leading run of samples
/// with `L_k > 10 floor`.
pub fn contraction_estimate(
    series: &[f64],
    floor: f64,
) -> Result<ContractionEstimate, MetricsError> {
    if series.len() < 10 {
        return Err(MetricsError::InsufficientData(format!(
            "need at least 10 samples, got {}",
            series.len()
        )));
    }
    let end = series
        .iter()
        .position(|&v| !(v > 10.0 * floor && v - floor > 0.0 && v.is_finite()))
        .unwrap_or(series.len());
    if end < 2 {
        return Err(MetricsError::InsufficientData(
            "no pre-plateau segment".to_string(),
        ));
    }
    let points: Vec<(f64, f64)> = series[..end]
        .iter()
        .enumerate()
        .map(|(k, &v)| (k as f64, (v - floor).ln()))
        .collect();
    let m = points.len() as f64;
    let mean_k = points.iter().map(|p| p.0).sum::<f64>() / m;
    let mean_v = points.iter().map(|p| p.1).sum::<f64>() / m;
    let cov: f64 = points.iter().map(|(k, v)| (k - mean_k) * (v - mean_v)).sum();
    let var: f64 = points.iter().map(|(k, _)| (k - mean_k).powi(2)).sum();
    Ok(ContractionEstimate {
        factor: (cov / var).exp(),
        start: 0,
        end,
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunMeta {
    pub seed: u64,
    /// Quantization level label, `None` for exact averaging.
    pub delta: Option<String>,
    pub rho: f64,
    pub node_count: usize,
    pub dimension: usize,
    pub graph_hash: String,
    pub diameter: usize,
    pub regime: String,
    pub coordinator: String,
    pub init: String,
    pub mu_min: f64,
    pub lipschitz_max: f64,
    pub extra: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    /// `sum_i |x_i - z*|`.
    pub solution_error: f64,
    pub lyapunov: f64,
    pub fqac_rounds: u64,
    pub messages: u64,
    pub bits_quantized: u64,
    pub bits_float_equivalent: u64,
    /// `max_i |z_i - mean_j z_j|_inf`.
    pub consensus_spread: f64,
    pub checks: BoundChecks,
}

pub const CSV_HEADER: &str = "iteration,solution_error,lyapunov,fqac_rounds,messages,\
bits_quantized,bits_float_equivalent,coordination_ok,dual_sum_ok,identity_ok,identity_residual,\
z_gap_max,lambda_gap_max,dual_sum_inf,consensus_spread,m_z";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<IterationRow>,
}

impl RunRecord {
    pub fn new(meta: RunMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
        }
    }

    /// Appends a row; iterations must strictly increase.
    pub fn push(&mut self, row: IterationRow) -> Result<(), MetricsError> {
        if let Some(last) = self.rows.last() {
            if row.iteration <= last.iteration {
                return Err(MetricsError::OutOfOrder {
                    last: last.iteration,
                    got: row.iteration,
                });
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn solution_errors(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.solution_error).collect()
    }

    pub fn lyapunov_values(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.lyapunov).collect()
    }

    pub fn all_checks_ok(&self) -> bool {
        self.rows.iter().all(|r| r.checks.all_ok())
    }

    pub fn final_m_z(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.checks.m_z)
    }

    /// Metadata as `#` comment lines, then the header, then one row per
    /// iteration. Floats use a fixed 17-significant-digit exponent format.
    pub fn to_csv(&self) -> String {
        let m = &self.meta;
        let mut out = String::new();
        let _ = writeln!(out, "# seed = {}", m.seed);
        let _ = writeln!(out, "# delta = {}", m.delta.as_deref().unwrap_or("none"));
        let _ = writeln!(out, "# rho = {}", m.rho);
        let _ = writeln!(out, "# nodes = {}", m.node_count);
        let _ = writeln!(out, "# dimension = {}", m.dimension);
        let _ = writeln!(out, "# graph_hash = {}", m.graph_hash);
        let _ = writeln!(out, "# diameter = {}", m.diameter);
        let _ = writeln!(out, "# regime = {}", m.regime);
        let _ = writeln!(out, "# coordinator = {}", m.coordinator);
        let _ = writeln!(out, "# init = {}", m.init);
        let _ = writeln!(out, "# mu_min = {:.16e}", m.mu_min);
        let _ = writeln!(out, "# lipschitz_max = {:.16e}", m.lipschitz_max);
        for (k, v) in &m.extra {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let c = &r.checks;
            let _ = writeln!(
                out,
                "{},{:.16e},{:.16e},{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.iteration,
                r.solution_error,
                r.lyapunov,
                r.fqac_rounds,
                r.messages,
                r.bits_quantized,
                r.bits_float_equivalent,
                c.coordination_ok,
                c.dual_sum_ok,
                c.identity_ok,
                c.identity_residual,
                c.z_gap_max,
                c.lambda_gap_max,
                c.dual_sum_inf,
                r.consensus_spread,
                c.m_z,
            );
        }
        out
    }
}

/// Headline numbers for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub plateau_error: f64,
    /// First iteration whose error is within 10x of the plateau.
    pub iterations_to_plateau: usize,
    pub plateau_lyapunov: f64,
    pub m_z: f64,
    /// `6 rho M_z N delta`; zero for exact averaging.
    pub neighborhood: f64,
    pub error_contraction: Option<f64>,
    pub lyapunov_contraction: Option<f64>,
    pub total_bits_quantized: u64,
    pub total_bits_float_equivalent: u64,
    pub total_messages: u64,
    pub total_fqac_rounds: u64,
    pub all_checks_ok: bool,
}

impl RunSummary {
    pub fn of(record: &RunRecord, delta: Option<f64>) -> Self {
        let errors = record.solution_errors();
        let lyap = record.lyapunov_values();
        let plateau_error = plateau_floor(&errors);
        let plateau_lyapunov = plateau_floor(&lyap);
        let m_z = record.final_m_z();
        let iterations_to_plateau = record
            .rows
            .iter()
            .find(|r| r.solution_error <= 10.0 * plateau_error)
            .map_or(record.rows.len(), |r| r.iteration);
        let sum = |f: fn(&IterationRow) -> u64| record.rows.iter().map(f).sum::<u64>();
        Self {
            plateau_error,
            iterations_to_plateau,
            plateau_lyapunov,
            m_z,
            neighborhood: neighborhood_term(
                record.meta.rho,
                m_z,
                record.meta.node_count,
                delta.unwrap_or(0.0),
            ),
            error_contraction: contraction_estimate(&errors, plateau_error)
                .ok()
                .map(|c| c.factor),
            lyapunov_contraction: contraction_estimate(&lyap, plateau_lyapunov)
                .ok()
                .map(|c| c.factor),
            total_bits_quantized: sum(|r| r.bits_quantized),
            total_bits_float_equivalent: sum(|r| r.bits_float_equivalent),
            total_messages: sum(|r| r.messages),
            total_fqac_rounds: sum(|r| r.fqac_rounds),
            all_checks_ok: record.all_checks_ok(),
        }
    }
}
