//! Decentralized consensus optimization over directed graphs with quantized
//! communication.
//!
//! Nodes run a reduced-consensus augmented Lagrangian method in which the
//! global averaging step is replaced by a finite-time quantized average
//! consensus protocol over a directed graph. The crate also ships the
//! centralized baseline, runtime checks for the method's error bounds and
//! Lyapunov contraction, and an experiment harness.

pub mod experiment;
pub mod fqac;
pub mod graph;
pub mod netsim;
pub mod quantizer;
pub mod metrics;
pub mod optimizer;
