//! Finite-time quantized average consensus.
//!
//! Each node starts with integer mass `chi = 2 * floor(y / delta)` split over
//! `xi = 2` pieces. Every round a node keeps one piece and forwards each
//! remaining piece, as a whole vector, to a uniformly drawn member of its
//! out-neighborhood (itself included). Received pieces are merged before the
//! next round. In parallel, max/min consensus on the per-node ratios
//! `ceil(chi / xi)` and `floor(chi / xi)` runs in epochs of `D` rounds; when
//! the spread at the end of an epoch is at most one lattice step in every
//! coordinate, the node halts with `m * delta`.
//!
//! Since the integer average `sum(chi) / sum(xi)` is a weighted mean of the
//! per-node ratios, it always lies between the global min and max, so a halted
//! node is within one lattice step of the exact quantized mean.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{DirectedGraph, GraphError};
use crate::netsim::{CommStats, Message, NetError, Network, Payload, SimRng, WidthPolicy};
use crate::quantizer::{ceil_div, floor_div, QuantizationLevel, QuantizeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FqacError {
    #[error(transparent)]
    Quantize(#[from] QuantizeError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("expected {expected} inputs of dimension {dimension}, got {got}")]
    DimensionMismatch {
        expected: usize,
        dimension: usize,
        got: String,
    },
    #[error("no agreement after {rounds} rounds")]
    NoConvergence { rounds: u64 },
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),
}

/// Per-node protocol state. Vectors are in units of the quantization level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FqacState {
    pub chi: Vec<i64>,
    pub xi: i64,
    pub big_m: Vec<i64>,
    pub small_m: Vec<i64>,
    /// Out-neighbors followed by the node itself; each is drawn with
    /// probability `1 / len`.
    pub recipients: Vec<usize>,
    pub halted: bool,
    pub result: Option<Vec<i64>>,
}

impl FqacState {
    pub fn forwarding_probabilities(&self) -> Vec<(usize, f64)> {
        let p = 1.0 / self.recipients.len() as f64;
        self.recipients.iter().map(|&l| (l, p)).collect()
    }

    fn ratio_bounds(&self) -> (Vec<i64>, Vec<i64>) {
        let ceil = self.chi.iter().map(|&c| ceil_div(c, self.xi)).collect();
        let floor = self.chi.iter().map(|&c| floor_div(c, self.xi)).collect();
        (ceil, floor)
    }

    /// `max_k (M_k - m_k)`.
    pub fn spread(&self) -> i64 {
        self.big_m
            .iter()
            .zip(&self.small_m)
            .map(|(a, b)| a - b)
            .max()
            .unwrap_or(0)
    }
}

fn check_inputs(y: &[Vec<f64>], graph: &DirectedGraph) -> Result<usize, FqacError> {
    let dimension = y.first().map_or(0, Vec::len);
    if y.len() != graph.node_count() || y.iter().any(|v| v.len() != dimension) {
        return Err(FqacError::DimensionMismatch {
            expected: graph.node_count(),
            dimension,
            got: format!(
                "{} vectors of lengths {:?}",
                y.len(),
                y.iter().map(Vec::len).collect::<Vec<_>>()
            ),
        });
    }
    Ok(dimension)
}

/// Quantizes every node's input and sets `xi = 2`, `chi = 2 * q(y)`.
pub fn fqac_init(
    y: &[Vec<f64>],
    level: &QuantizationLevel,
    graph: &DirectedGraph,
) -> Result<Vec<FqacState>, FqacError> {
    check_inputs(y, graph)?;
    y.iter()
        .enumerate()
        .map(|(i, yi)| {
            let q = level.quantize(yi)?;
            let chi = q
                .iter()
                .map(|v| v.checked_mul(2))
                .collect::<Option<Vec<_>>>()
                .ok_or(QuantizeError::Overflow { index: i })?;
            Ok(FqacState {
                big_m: vec![0; chi.len()],
                small_m: vec![0; chi.len()],
                chi,
                xi: 2,
                recipients: graph.out_closure(i),
                halted: false,
                result: None,
            })
        })
        .collect()
}

/// One row of the optional per-round trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FqacTraceRow {
    pub round: u64,
    pub node: usize,
    pub chi: Vec<i64>,
    pub xi: i64,
    pub gap: i64,
}

/// Executes round `t` (1-based) for all nodes.
///
/// Epochs are `epoch_len` rounds long: the max/min registers are reset from
/// the local ratio at the first round of an epoch and the halting test runs
/// at the last. Pieces are sent, then all received pieces are folded in.
pub fn fqac_round(
    states: &mut [FqacState],
    net: &mut Network<'_>,
    rngs: &mut [ChaCha8Rng],
    t: u64,
    epoch_len: u64,
) -> Result<(), FqacError> {
    if t == 0 || epoch_len == 0 {
        return Err(FqacError::ProtocolViolation(format!(
            "round {t} with epoch length {epoch_len}"
        )));
    }
    if states.iter().any(|s| s.halted) {
        return Err(FqacError::ProtocolViolation(format!(
            "round {t} started with halted nodes"
        )));
    }
    if (t - 1).is_multiple_of(epoch_len) {
        for s in states.iter_mut() {
            let (ceil, floor) = s.ratio_bounds();
            s.big_m = ceil;
            s.small_m = floor;
        }
    }

    let graph = net.graph();
    let mut outbox = Vec::new();
    for (i, s) in states.iter().enumerate() {
        for &l in graph.out_neighbors(i) {
            outbox.push(Message {
                from: i,
                to: l,
                round: t,
                payload: Payload::MaxMin {
                    max: s.big_m.clone(),
                    min: s.small_m.clone(),
                },
            });
        }
    }
    for (i, (s, rng)) in states.iter_mut().zip(rngs.iter_mut()).enumerate() {
        let mut tau = s.xi;
        while tau > 1 {
            let piece: Vec<i64> = s.chi.iter().map(|&c| floor_div(c, s.xi)).collect();
            for (c, p) in s.chi.iter_mut().zip(&piece) {
                *c -= p;
            }
            s.xi -= 1;
            tau -= 1;
            let to = s.recipients[rng.random_range(0..s.recipients.len())];
            outbox.push(Message {
                from: i,
                to,
                round: t,
                payload: Payload::MassPiece(piece),
            });
        }
    }

    let inboxes = net.deliver_round(outbox)?;
    for (s, inbox) in states.iter_mut().zip(inboxes) {
        for m in inbox {
            match m.payload {
                Payload::MaxMin { max, min } => {
                    for (a, b) in s.big_m.iter_mut().zip(max) {
                        *a = (*a).max(b);
                    }
                    for (a, b) in s.small_m.iter_mut().zip(min) {
                        *a = (*a).min(b);
                    }
                }
                Payload::MassPiece(piece) => {
                    for (c, p) in s.chi.iter_mut().zip(piece) {
                        *c += p;
                    }
                    s.xi += 1;
                }
            }
        }
        if s.xi < 1 {
            return Err(FqacError::ProtocolViolation(format!(
                "piece count dropped to {} in round {t}",
                s.xi
            )));
        }
    }

    if t.is_multiple_of(epoch_len) {
        for s in states.iter_mut() {
            if s.spread() <= 1 {
                s.halted = true;
                s.result = Some(s.small_m.clone());
            }
        }
        let halted = states.iter().filter(|s| s.halted).count();
        if halted != 0 && halted != states.len() {
            return Err(FqacError::ProtocolViolation(format!(
                "only {halted} of {} nodes halted in round {t}",
                states.len()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct FqacConfig {
    /// Round cap; `None` means `100 * D * N` epochs.
    pub max_rounds: Option<u64>,
    pub width_policy: WidthPolicy,
    pub float_width: u32,
    pub trace: bool,
}

impl Default for FqacConfig {
    fn default() -> Self {
        Self {
            max_rounds: None,
            width_policy: WidthPolicy::default(),
            float_width: 64,
            trace: false,
        }
    }
}

pub fn default_max_rounds(diameter: usize, node_count: usize) -> u64 {
    let epoch = diameter.max(1) as u64;
    100 * epoch * node_count as u64 * epoch
}

#[derive(Debug, Clone)]
pub struct FqacOutcome {
    /// `m_i * delta` per node.
    pub estimates: Vec<Vec<f64>>,
    /// `m_i` per node, in lattice units.
    pub lattice: Vec<Vec<i64>>,
    /// `floor(y_i / delta)` per node.
    pub quantized_inputs: Vec<Vec<i64>>,
    pub rounds: u64,
    pub stats: CommStats,
    pub trace: Vec<FqacTraceRow>,
}

/// Runs the protocol to completion.
///
/// Mass conservation and the one-step agreement bound against the exact
/// integer mean are checked on every call; a failure is reported as
/// [`FqacError::ProtocolViolation`].
pub fn fqac_run(
    y: &[Vec<f64>],
    graph: &DirectedGraph,
    level: &QuantizationLevel,
    rng: SimRng,
    config: &FqacConfig,
) -> Result<FqacOutcome, FqacError> {
    let dimension = check_inputs(y, graph)?;
    let n = graph.node_count();
    let diameter = graph.diameter()?;
    let epoch_len = diameter.max(1) as u64;
    let max_rounds = config
        .max_rounds
        .unwrap_or_else(|| default_max_rounds(diameter, n));

    let mut states = fqac_init(y, level, graph)?;
    let quantized_inputs: Vec<Vec<i64>> = states
        .iter()
        .map(|s| s.chi.iter().map(|c| c / 2).collect())
        .collect();
    let total_chi = mass(&states, dimension);
    let total_xi = 2 * n as i64;

    let mut net = Network::new(graph, config.width_policy, config.float_width);
    let mut rngs = rng.node_streams(n);
    let mut trace = Vec::new();
    let mut t = 0;
    while !states[0].halted {
        if t >= max_rounds {
            return Err(FqacError::NoConvergence { rounds: t });
        }
        t += 1;
        fqac_round(&mut states, &mut net, &mut rngs, t, epoch_len)?;
        if mass(&states, dimension) != total_chi {
            return Err(FqacError::ProtocolViolation(format!(
                "integer mass changed in round {t}"
            )));
        }
        let xi_sum: i64 = states.iter().map(|s| s.xi).sum();
        if xi_sum != total_xi {
            return Err(FqacError::ProtocolViolation(format!(
                "piece count sum {xi_sum} != {total_xi} in round {t}"
            )));
        }
        if config.trace {
            trace.extend(states.iter().enumerate().map(|(node, s)| FqacTraceRow {
                round: t,
                node,
                chi: s.chi.clone(),
                xi: s.xi,
                gap: s.spread(),
            }));
        }
    }

    let lattice: Vec<Vec<i64>> = states
        .into_iter()
        .map(|s| s.result.unwrap_or_default())
        .collect();
    check_agreement(&lattice, &quantized_inputs)?;
    Ok(FqacOutcome {
        estimates: lattice.iter().map(|m| level.dequantize(m)).collect(),
        lattice,
        quantized_inputs,
        rounds: t,
        stats: net.stats(),
        trace,
    })
}

fn mass(states: &[FqacState], dimension: usize) -> Vec<i128> {
    let mut total = vec![0i128; dimension];
    for s in states {
        for (t, &c) in total.iter_mut().zip(&s.chi) {
            *t += i128::from(c);
        }
    }
    total
}

/// Each output within one lattice step of `sum(q) / N`, and all outputs
/// within one step of each other.
fn check_agreement(lattice: &[Vec<i64>], quantized: &[Vec<i64>]) -> Result<(), FqacError> {
    let n = lattice.len() as i128;
    let dimension = quantized.first().map_or(0, Vec::len);
    for k in 0..dimension {
        let sum: i128 = quantized.iter().map(|q| i128::from(q[k])).sum();
        let lo = lattice.iter().map(|m| m[k]).min().unwrap_or(0);
        let hi = lattice.iter().map(|m| m[k]).max().unwrap_or(0);
        if hi - lo > 1 {
            return Err(FqacError::ProtocolViolation(format!(
                "outputs disagree by {} steps in coordinate {k}",
                hi - lo
            )));
        }
        for m in lattice {
            if (i128::from(m[k]) * n - sum).abs() > n {
                return Err(FqacError::ProtocolViolation(format!(
                    "output {} is more than one step from the quantized mean {sum}/{n} in coordinate {k}",
                    m[k]
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{random_strongly_connected_digraph, Edge};

    fn two_cycle() -> DirectedGraph {
        DirectedGraph::new(2, [Edge::new(0, 1), Edge::new(1, 0)], true).unwrap()
    }

    fn level(s: &str) -> QuantizationLevel {
        s.parse().unwrap()
    }

    #[test]
    fn init_doubles_quantized_input() {
        let g = two_cycle();
        let states = fqac_init(&[vec![1.0], vec![1.0]], &level("0.25"), &g).unwrap();
        for s in &states {
            assert_eq!(s.chi, vec![8]);
            assert_eq!(s.xi, 2);
            let total: f64 = s.forwarding_probabilities().iter().map(|(_, p)| p).sum();
            assert_eq!(total, 1.0);
        }
        assert_eq!(states[0].recipients, vec![1, 0]);
    }

    #[test]
    fn init_rejects_bad_shapes() {
        let g = two_cycle();
        assert!(matches!(
            fqac_init(&[vec![1.0]], &level("0.25"), &g),
            Err(FqacError::DimensionMismatch { .. })
        ));
        assert!(fqac_init(&[vec![1.0], vec![1.0, 2.0]], &level("0.25"), &g).is_err());
        assert!(matches!(
            fqac_init(&[vec![1.0], vec![f64::NAN]], &level("0.25"), &g),
            Err(FqacError::Quantize(QuantizeError::NonFiniteInput { .. }))
        ));
    }

    #[test]
    fn equal_inputs_halt_after_one_epoch() {
        let g = two_cycle();
        let out = fqac_run(
            &[vec![1.0], vec![1.0]],
            &g,
            &level("0.25"),
            SimRng::new(0),
            &FqacConfig::default(),
        )
        .unwrap();
        assert_eq!(out.rounds, 1);
        assert_eq!(out.estimates, vec![vec![1.0], vec![1.0]]);
        assert_eq!(out.lattice, vec![vec![4], vec![4]]);
    }

    #[test]
    fn zero_mass_gives_zero() {
        let g = random_strongly_connected_digraph(6, 0.3, 1).unwrap();
        let y = vec![vec![0.0; 3]; 6];
        let out = fqac_run(&y, &g, &level("1e-3"), SimRng::new(9), &FqacConfig::default()).unwrap();
        assert!(out.estimates.iter().all(|e| e == &vec![0.0; 3]));
    }

    #[test]
    fn halted_state_rejects_further_rounds() {
        let g = two_cycle();
        let mut states = fqac_init(&[vec![1.0], vec![1.0]], &level("0.25"), &g).unwrap();
        states[0].halted = true;
        let mut net = Network::new(&g, WidthPolicy::Fixed(32), 64);
        let mut rngs = SimRng::new(0).node_streams(2);
        assert!(matches!(
            fqac_round(&mut states, &mut net, &mut rngs, 1, 1),
            Err(FqacError::ProtocolViolation(_))
        ));
    }

    #[test]
    fn round_conserves_mass_and_pieces() {
        let g = random_strongly_connected_digraph(7, 0.2, 4).unwrap();
        let y: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.37 - 1.0, 2.5]).collect();
        let mut states = fqac_init(&y, &level("1e-2"), &g).unwrap();
        let before = mass(&states, 2);
        let mut net = Network::new(&g, WidthPolicy::Fixed(32), 64);
        let mut rngs = SimRng::new(5).node_streams(7);
        let epoch = g.diameter().unwrap() as u64;
        for t in 1..=epoch.saturating_sub(1).max(1) {
            fqac_round(&mut states, &mut net, &mut rngs, t, epoch + 1).unwrap();
            assert_eq!(mass(&states, 2), before);
            assert_eq!(states.iter().map(|s| s.xi).sum::<i64>(), 14);
            assert!(states.iter().all(|s| s.xi >= 1));
        }
    }

    #[test]
    fn round_cap_is_reported() {
        let g = random_strongly_connected_digraph(5, 0.0, 2).unwrap();
        let y: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 * 10.0]).collect();
        let cfg = FqacConfig {
            max_rounds: Some(1),
            ..FqacConfig::default()
        };
        assert_eq!(
            fqac_run(&y, &g, &level("1e-3"), SimRng::new(0), &cfg).unwrap_err(),
            FqacError::NoConvergence { rounds: 1 }
        );
    }

    #[test]
    fn trace_has_one_row_per_node_per_round() {
        let g = random_strongly_connected_digraph(4, 0.3, 2).unwrap();
        let y: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64]).collect();
        let cfg = FqacConfig {
            trace: true,
            ..FqacConfig::default()
        };
        let out = fqac_run(&y, &g, &level("0.1"), SimRng::new(1), &cfg).unwrap();
        assert_eq!(out.trace.len() as u64, out.rounds * 4);
        assert_eq!(out.stats.rounds, out.rounds);
    }
}
