#![allow(dead_code)]

use std::io::Write;

use adbo::problems::{
    corrupt_labels, make_hypercleaning, make_quadratic_toy, make_regcoef, partition_dataset, synthetic_classification,
    HyperCleaning, QuadraticToy, RegCoef,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central-difference gradient of `f` at `x`.
pub fn fd_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            let h = 1e-6 * (1.0 + x[k].abs());
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, with an absolute floor so that two
/// vanishing gradients compare equal.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-6)
}

/// Heterogeneous toy: N workers, n = 2, m = 3, random targets and couplings.
pub fn random_toy(workers: usize, seed: u64) -> QuadraticToy {
    let mut r = rng(seed);
    let a: Vec<Vec<f64>> = (0..workers).map(|_| uniform(&mut r, 2, 2.0)).collect();
    let b: Vec<Vec<f64>> = (0..workers).map(|_| uniform(&mut r, 3, 2.0)).collect();
    let c: Vec<f64> = (0..workers).map(|_| r.random_range(0.2..2.0)).collect();
    make_quadratic_toy(2, 3, &a, &b, &c).unwrap()
}

/// Toy whose consensus optimum `x_i = v = 1` is feasible for `h ≤ ε`: all
/// `a_i = 1`, and `b_i` equal to the one-round cold-start estimate at
/// `v = 1` (`2 η c_i`).
pub fn feasible_toy(workers: usize, eta_lower: f64) -> QuadraticToy {
    let c: Vec<f64> = (0..workers).map(|i| 0.5 + 0.5 * i as f64).collect();
    let a = vec![vec![1.0]; workers];
    let b: Vec<Vec<f64>> = c.iter().map(|ci| vec![2.0 * eta_lower * ci]).collect();
    make_quadratic_toy(1, 1, &a, &b, &c).unwrap()
}

pub fn small_hypercleaning(seed: u64) -> HyperCleaning {
    let ds = synthetic_classification(60, 4, 0.25, seed).unwrap();
    let (ds, _) = corrupt_labels(&ds, 0.3, seed).unwrap();
    make_hypercleaning(&partition_dataset(&ds, 3, seed).unwrap(), 0.01).unwrap()
}

pub fn small_regcoef(seed: u64) -> RegCoef {
    let ds = synthetic_classification(60, 4, 0.25, seed).unwrap();
    make_regcoef(&partition_dataset(&ds, 2, seed).unwrap()).unwrap()
}

/// Prints one summary line past the test harness's output capture.
pub fn report(id: u32, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "acceptance {id} [{status}] {name}: {detail}");
}
