use num_rational::BigRational;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qudrc::fqac::{fqac_run, FqacConfig};
use qudrc::graph::random_strongly_connected_digraph;
use qudrc::netsim::SimRng;
use qudrc::quantizer::QuantizationLevel;

/// floor and ceil of sum(floor(y_j / delta)) / N, from exact rationals.
fn oracle_bounds(y: &[Vec<f64>], delta: &QuantizationLevel, k: usize) -> (i64, i64) {
    let n = BigRational::from_integer((y.len() as i64).into());
    let sum = y
        .iter()
        .map(|v| (BigRational::from_float(v[k]).unwrap() / delta.as_rational()).floor())
        .fold(BigRational::zero(), |a, b| a + b);
    let mean = sum / n;
    let lo = mean.floor().to_integer().try_into().unwrap();
    let hi = mean.ceil().to_integer().try_into().unwrap();
    (lo, hi)
}

#[test]
fn small_networks_match_exact_oracle() {
    let levels: Vec<QuantizationLevel> = ["0.5", "1e-2", "1e-4", "0.3"].iter().map(|s| s.parse().unwrap()).collect();
    for trial in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let n = rng.random_range(2..=5);
        let dim = rng.random_range(1..=4);
        let delta = &levels[trial as usize % levels.len()];
        let g = random_strongly_connected_digraph(n, rng.random_range(0.0..0.6), trial).unwrap();
        let y: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let out = fqac_run(&y, &g, delta, SimRng::new(trial), &FqacConfig::default()).unwrap();
        for k in 0..dim {
            let (lo, hi) = oracle_bounds(&y, delta, k);
            let values: Vec<i64> = out.lattice.iter().map(|m| m[k]).collect();
            let min = *values.iter().min().unwrap();
            let max = *values.iter().max().unwrap();
            assert!(max - min <= 1, "trial {trial}: outputs {values:?}");
            for &m in &values {
                // within one lattice step of the exact quantized mean
                assert!(m >= lo - 1 && m <= hi + 1, "trial {trial}: {m} vs [{lo}, {hi}]");
            }
            let true_mean = y.iter().map(|v| BigRational::from_float(v[k]).unwrap()).fold(BigRational::zero(), |a, b| a + b)
                / BigRational::from_integer((n as i64).into());
            for &m in &values {
                let est = delta.as_rational() * BigRational::from_integer(m.into());
                assert!((est - &true_mean).abs() <= delta.as_rational() * BigRational::from_integer(2.into()));
            }
        }
    }
}

#[test]
fn identical_inputs_give_exact_average() {
    let g = random_strongly_connected_digraph(5, 0.2, 3).unwrap();
    let delta: QuantizationLevel = "0.25".parse().unwrap();
    let y = vec![vec![1.0, -0.5]; 5];
    let out = fqac_run(&y, &g, &delta, SimRng::new(1), &FqacConfig::default()).unwrap();
    for e in &out.estimates {
        assert_eq!(e, &vec![1.0, -0.5]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reruns_are_deterministic(seed in any::<u64>(), n in 2usize..8) {
        let g = random_strongly_connected_digraph(n, 0.3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0); 3]).collect();
        let delta: QuantizationLevel = "1e-3".parse().unwrap();
        let a = fqac_run(&y, &g, &delta, SimRng::new(seed), &FqacConfig::default()).unwrap();
        let b = fqac_run(&y, &g, &delta, SimRng::new(seed), &FqacConfig::default()).unwrap();
        prop_assert_eq!(a.lattice, b.lattice);
        prop_assert_eq!(a.rounds, b.rounds);
        prop_assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn output_is_invariant_to_lattice_shift(seed in any::<u64>(), shift in -1000i64..1000) {
        // adding shift * delta to every input moves every output by shift
        let n = 4;
        let g = random_strongly_connected_digraph(n, 0.3, seed).unwrap();
        let delta: QuantizationLevel = "0.5".parse().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-10_240i32..10_240) as f64 / 1024.0]).collect();
        let shifted: Vec<Vec<f64>> = y.iter().map(|v| vec![v[0] + shift as f64 * 0.5]).collect();
        let a = fqac_run(&y, &g, &delta, SimRng::new(seed), &FqacConfig::default()).unwrap();
        let b = fqac_run(&shifted, &g, &delta, SimRng::new(seed), &FqacConfig::default()).unwrap();
        for (x, z) in a.lattice.iter().zip(&b.lattice) {
            prop_assert_eq!(x[0] + shift, z[0]);
        }
    }
}
