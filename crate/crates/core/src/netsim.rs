//! Synchronous, lossless message passing over a [`DirectedGraph`].
//!
//! Every message handed to [`Network::deliver_round`] arrives in exactly one
//! inbox in the same round. Traffic is metered twice: once at the integer
//! width policy actually in use, and once at a fixed float width, so the two
//! ledgers can be compared side by side.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::DirectedGraph;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("round {round}: node {from} cannot send to node {to} (no such edge)")]
    IllegalEdge { from: usize, to: usize, round: u64 },
    #[error("message stamped for round {got}, network is delivering round {expected}")]
    WrongRound { expected: u64, got: u64 },
    #[error("node id {0} out of range")]
    UnknownNode(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    MassPiece,
    MaxMinBroadcast,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    MassPiece(Vec<i64>),
    MaxMin { max: Vec<i64>, min: Vec<i64> },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::MassPiece(_) => MessageKind::MassPiece,
            Payload::MaxMin { .. } => MessageKind::MaxMinBroadcast,
        }
    }

    fn components(&self) -> impl Iterator<Item = i64> + '_ {
        let (a, b): (&[i64], &[i64]) = match self {
            Payload::MassPiece(v) => (v, &[]),
            Payload::MaxMin { max, min } => (max, min),
        };
        a.iter().chain(b.iter()).copied()
    }

    pub fn component_count(&self) -> usize {
        match self {
            Payload::MassPiece(v) => v.len(),
            Payload::MaxMin { max, min } => max.len() + min.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub round: u64,
    pub payload: Payload,
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        self.payload.kind()
    }
}

/// How many bits each transmitted integer component costs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WidthPolicy {
    Fixed(u32),
    /// `ceil(log2(|v| + 1)) + 1` bits per component (magnitude plus sign).
    Adaptive,
}

impl Default for WidthPolicy {
    fn default() -> Self {
        WidthPolicy::Fixed(32)
    }
}

impl std::fmt::Display for WidthPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WidthPolicy::Fixed(w) => write!(f, "fixed({w})"),
            WidthPolicy::Adaptive => f.write_str("adaptive"),
        }
    }
}

impl std::str::FromStr for WidthPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s == "adaptive" {
            return Ok(WidthPolicy::Adaptive);
        }
        let inner = s
            .strip_prefix("fixed(")
            .and_then(|r| r.strip_suffix(')'))
            .or_else(|| s.strip_prefix("fixed:"))
            .unwrap_or(s);
        match inner.parse::<u32>() {
            Ok(w) if w > 0 => Ok(WidthPolicy::Fixed(w)),
            _ => Err(format!("invalid width policy {s:?}")),
        }
    }
}

fn component_bits(v: i64, policy: WidthPolicy) -> u64 {
    match policy {
        WidthPolicy::Fixed(w) => u64::from(w),
        // bit length of |v| equals ceil(log2(|v| + 1))
        WidthPolicy::Adaptive => u64::from(64 - v.unsigned_abs().leading_zeros()) + 1,
    }
}

/// Payload size of `message` under `policy`.
pub fn bit_cost(message: &Message, policy: WidthPolicy) -> u64 {
    message
        .payload
        .components()
        .map(|v| component_bits(v, policy))
        .sum()
}

/// Communication counters for one simulation. Self-deliveries never cross a
/// link and are tallied separately from `messages` and the bit counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CommStats {
    pub messages: u64,
    pub integer_payload_bits: u64,
    pub rounds: u64,
    pub equivalent_float_bits: u64,
    pub self_deliveries: u64,
}

impl CommStats {
    pub fn merge(&mut self, other: &CommStats) {
        self.messages += other.messages;
        self.integer_payload_bits += other.integer_payload_bits;
        self.rounds += other.rounds;
        self.equivalent_float_bits += other.equivalent_float_bits;
        self.self_deliveries += other.self_deliveries;
    }
}

/// Round-based network bound to one graph.
#[derive(Debug, Clone)]
pub struct Network<'g> {
    graph: &'g DirectedGraph,
    policy: WidthPolicy,
    float_width: u32,
    stats: CommStats,
}

impl<'g> Network<'g> {
    pub fn new(graph: &'g DirectedGraph, policy: WidthPolicy, float_width: u32) -> Self {
        Self {
            graph,
            policy,
            float_width,
            stats: CommStats::default(),
        }
    }

    pub fn graph(&self) -> &'g DirectedGraph {
        self.graph
    }

    pub fn stats(&self) -> CommStats {
        self.stats
    }

    /// Round number the next call to [`Network::deliver_round`] delivers (1-based).
    pub fn next_round(&self) -> u64 {
        self.stats.rounds + 1
    }

    /// Delivers one synchronous round. On error nothing is delivered and the
    /// counters are left untouched.
    pub fn deliver_round(&mut self, outbox: Vec<Message>) -> Result<Vec<Vec<Message>>, NetError> {
        let n = self.graph.node_count();
        let round = self.next_round();
        for m in &outbox {
            if m.from >= n {
                return Err(NetError::UnknownNode(m.from));
            }
            if m.to >= n {
                return Err(NetError::UnknownNode(m.to));
            }
            if m.round != round {
                return Err(NetError::WrongRound {
                    expected: round,
                    got: m.round,
                });
            }
            if m.from != m.to && !self.graph.has_edge(m.to, m.from) {
                return Err(NetError::IllegalEdge {
                    from: m.from,
                    to: m.to,
                    round,
                });
            }
        }
        let mut inboxes = vec![Vec::new(); n];
        for m in outbox {
            if m.from == m.to {
                self.stats.self_deliveries += 1;
            } else {
                self.stats.messages += 1;
                self.stats.integer_payload_bits += bit_cost(&m, self.policy);
                self.stats.equivalent_float_bits +=
                    m.payload.component_count() as u64 * u64::from(self.float_width);
            }
            inboxes[m.to].push(m);
        }
        self.stats.rounds += 1;
        Ok(inboxes)
    }
}

/// Deterministic randomness for one protocol invocation: one independent
/// ChaCha stream per node, keyed by `(seed, invocation)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimRng {
    seed: u64,
    invocation: u64,
}

impl SimRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            invocation: 0,
        }
    }

    pub fn for_invocation(self, invocation: u64) -> Self {
        Self { invocation, ..self }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn invocation(&self) -> u64 {
        self.invocation
    }

    pub fn node_stream(&self, node: usize) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.invocation.to_le_bytes());
        key[16..20].copy_from_slice(b"fqac");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(node as u64);
        rng
    }

    pub fn node_streams(&self, count: usize) -> Vec<ChaCha8Rng> {
        (0..count).map(|i| self.node_stream(i)).collect()
    }
}
