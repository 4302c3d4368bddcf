use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qudrc::experiment::{check, run_experiment, ConfigError, ExperimentConfig};
use qudrc::graph::random_strongly_connected_digraph;

#[derive(Parser)]
#[command(name = "qudrc", version, about = "Quantized decentralized RC-ALADIN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep over quantization levels plus the exact-averaging baseline.
    Solve(Overrides),
    /// Generate a strongly connected random digraph.
    GenGraph {
        #[arg(long)]
        nodes: usize,
        #[arg(long, default_value_t = 0.2)]
        extra_edge_prob: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Short run with every runtime invariant reported.
    Check {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
    },
}

#[derive(Args, Default)]
struct Overrides {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    dimension: Option<usize>,
    #[arg(long)]
    rho: Option<String>,
    /// Quantization level; repeat for a sweep.
    #[arg(long)]
    delta: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_outer_iterations: Option<usize>,
    #[arg(long)]
    stop_tol: Option<String>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    extra_edge_probability: Option<String>,
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// `fqac` or `exact_average`.
    #[arg(long)]
    coordinator: Option<String>,
    /// `fixed(B)` or `adaptive`.
    #[arg(long)]
    bit_width: Option<String>,
    #[arg(long)]
    float_width: Option<u32>,
    /// `strongly_convex` or `rank_deficient`.
    #[arg(long)]
    cost_family: Option<String>,
    /// `common` or `independent`.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    max_fqac_rounds: Option<String>,
    #[arg(long)]
    trace_fqac: bool,
    #[arg(long)]
    no_baseline: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        let mut pairs: Vec<(&str, String)> = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                pairs.push((k, v));
            }
        };
        push("n_nodes", self.n_nodes.map(|v| v.to_string()));
        push("dimension", self.dimension.map(|v| v.to_string()));
        push("rho", self.rho.clone());
        push("seed", self.seed.map(|v| v.to_string()));
        push("max_outer_iterations", self.max_outer_iterations.map(|v| v.to_string()));
        push("stop_tol", self.stop_tol.clone());
        push("patience", self.patience.map(|v| v.to_string()));
        push("extra_edge_probability", self.extra_edge_probability.clone());
        push("graph_file", self.graph_file.as_ref().map(|p| p.display().to_string()));
        push("coordinator", self.coordinator.clone());
        push("bit_width", self.bit_width.clone());
        push("float_width", self.float_width.map(|v| v.to_string()));
        push("cost_family", self.cost_family.clone());
        push("init", self.init.clone());
        push("max_fqac_rounds", self.max_fqac_rounds.clone());
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        if self.trace_fqac {
            push("trace_fqac", Some("true".into()));
        }
        if self.no_baseline {
            push("baseline", Some("false".into()));
        }
        let mut deltas_seen = false;
        for (k, v) in pairs {
            cfg.set(k, &v, &mut deltas_seen)?;
        }
        for d in &self.delta {
            cfg.set("delta", d, &mut deltas_seen)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve(o) => {
            let cfg = match o.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let report = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(qudrc::experiment::ExperimentError::Config(e)) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = report.write(&cfg.out) {
                eprintln!("error writing {}: {e}", cfg.out.display());
                return ExitCode::from(1);
            }
            print!("{}", report.summary_csv());
            for run in &report.runs {
                if let Err(f) = &run.outcome {
                    eprintln!("run {} failed: {f}", run.point.name);
                }
            }
            if report.any_failed() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::GenGraph {
            nodes,
            extra_edge_prob,
            seed,
            out,
        } => match random_strongly_connected_digraph(nodes, extra_edge_prob, seed) {
            Ok(g) => {
                let text = g.to_text();
                match out {
                    Some(path) => {
                        if let Err(e) = std::fs::write(&path, text) {
                            eprintln!("error writing {}: {e}", path.display());
                            return ExitCode::from(1);
                        }
                    }
                    None => print!("{text}"),
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Check {
            overrides,
            iterations,
        } => {
            let cfg = match overrides.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            match check(&cfg, iterations) {
                Ok(lines) => {
                    for l in &lines {
                        println!("{} {}: {}", if l.passed { "PASS" } else { "FAIL" }, l.name, l.detail);
                    }
                    if lines.iter().all(|l| l.passed) {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(qudrc::experiment::ExperimentError::Config(e)) => {
                    eprintln!("config error: {e}");
                    ExitCode::from(2)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
