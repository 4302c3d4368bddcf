use qudrc::experiment::{run_experiment, ExperimentConfig};

fn plateaus(seed: u64) -> Vec<f64> {
    let cfg = ExperimentConfig {
        seed,
        ..ExperimentConfig::default()
    };
    let report = run_experiment(&cfg).unwrap();
    assert!(!report.any_failed());
    let mut out: Vec<f64> = ["1e-3", "1e-4", "1e-5"]
        .iter()
        .map(|d| report.run(Some(d)).unwrap().summary().plateau_error)
        .collect();
    out.push(report.run(None).unwrap().summary().plateau_error);
    out
}

fn monotone(p: &[f64]) -> bool {
    p.windows(2).all(|w| w[0] >= w[1])
}

#[test]
fn plateaus_shrink_with_delta_for_most_seeds() {
    let default = plateaus(ExperimentConfig::default().seed);
    assert!(monotone(&default), "default seed: {default:?}");
    assert!(default[2] > default[3], "baseline not lowest: {default:?}");
    let good = (100..110u64).filter(|&s| monotone(&plateaus(s))).count();
    assert!(good >= 8, "only {good} of 10 seeds monotone");
}
