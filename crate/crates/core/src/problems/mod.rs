//! Bilevel problem interface and the built-in benchmark problems.
//!
//! A problem is held in consensus form: worker `i` owns an upper objective
//! `G_i(x_i, y_i)` and a lower objective `g_i(v, y')`, where `v` is the
//! shared upper variable and `y'` the worker's copy of the lower variable.

mod data;
mod logistic;
mod toy;

pub use data::{
    corrupt_labels, load_dataset, partition_dataset, synthetic_classification, CorruptionRecord,
    Dataset, DatasetFormat, LoadOptions, Split,
};
pub use logistic::{logistic_loss, make_hypercleaning, make_regcoef, sigmoid, HyperCleaning, RegCoef};
pub use toy::{make_quadratic_toy, QuadraticToy};

use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, norm};

/// Worker count and variable dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProblemDims {
    /// Number of workers.
    pub workers: usize,
    /// Dimension of each `x_i` and of `v`.
    pub upper: usize,
    /// Dimension of each `y_i` and of `z`.
    pub lower: usize,
}

impl ProblemDims {
    pub fn new(workers: usize, upper: usize, lower: usize) -> Result<Self> {
        if workers == 0 || upper == 0 || lower == 0 {
            return Err(Error::Config(format!(
                "problem dimensions must be positive (N={workers}, n={upper}, m={lower})"
            )));
        }
        Ok(Self { workers, upper, lower })
    }
}

/// Per-worker upper and lower objectives with the derivatives the solvers need.
///
/// Implementations must be pure: every method is a function of its arguments
/// only, so a problem can be shared across threads.
pub trait BilevelProblem: Send + Sync {
    fn dims(&self) -> ProblemDims;

    /// `G_i(x_i, y_i)`.
    fn upper_value(&self, i: usize, x: &[f64], y: &[f64]) -> f64;
    fn upper_grad_x(&self, i: usize, x: &[f64], y: &[f64]) -> Vec<f64>;
    fn upper_grad_y(&self, i: usize, x: &[f64], y: &[f64]) -> Vec<f64>;

    /// `g_i(v, y')`.
    fn lower_value(&self, i: usize, v: &[f64], y: &[f64]) -> f64;
    fn lower_grad_v(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64>;
    fn lower_grad_y(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64>;

    /// `∇²_{y'v} g_i(v, y') · dv`, an m-vector.
    ///
    /// The default takes central differences of `lower_grad_y` along `dv`.
    fn mixed_jvp(&self, i: usize, v: &[f64], y: &[f64], dv: &[f64]) -> Vec<f64> {
        let m = self.dims().lower;
        let dn = norm(dv);
        if dn == 0.0 {
            return vec![0.0; m];
        }
        let h = 1e-6 * (1.0 + norm(v)) / dn;
        let vp: Vec<f64> = v.iter().zip(dv).map(|(a, d)| a + h * d).collect();
        let vm: Vec<f64> = v.iter().zip(dv).map(|(a, d)| a - h * d).collect();
        let gp = self.lower_grad_y(i, &vp, y);
        let gm = self.lower_grad_y(i, &vm, y);
        gp.iter().zip(&gm).map(|(p, q)| (p - q) / (2.0 * h)).collect()
    }

    /// `(∇²_{y'v} g_i(v, y'))ᵀ · r`, an n-vector.
    ///
    /// The default materializes the mixed block one column at a time.
    fn mixed_vjp(&self, i: usize, v: &[f64], y: &[f64], r: &[f64]) -> Vec<f64> {
        let n = self.dims().upper;
        let mut e = vec![0.0; n];
        (0..n)
            .map(|k| {
                e[k] = 1.0;
                let col = self.mixed_jvp(i, v, y, &e);
                e[k] = 0.0;
                dot(&col, r)
            })
            .collect()
    }
}

/// `F = Σ_i G_i(x_i, y_i)`.
pub fn upper_sum(problem: &dyn BilevelProblem, x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    let d = problem.dims();
    check_len("x worker count", x.len(), d.workers)?;
    check_len("y worker count", y.len(), d.workers)?;
    let mut total = 0.0;
    for (i, (xi, yi)) in x.iter().zip(y).enumerate() {
        check_len("x_i", xi.len(), d.upper)?;
        check_len("y_i", yi.len(), d.lower)?;
        total += problem.upper_value(i, xi, yi);
    }
    Ok(total)
}
