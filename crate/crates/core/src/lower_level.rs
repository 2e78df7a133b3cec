//! Estimate of the lower-level solution map `φ(v)` and the constraint
//! function `h(v, {y_i}, z) = ‖[{y_i}; z] − φ(v)‖²`.
//!
//! `φ(v)` is the iterate after K rounds of primal-dual updates on the
//! augmented Lagrangian of the consensus lower level, with each `g_i`
//! replaced by its first-order Taylor expansion in `v` around the anchor
//! `v̄ = v`.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, axpy, norm, sq_dist, sub};
use crate::problems::{BilevelProblem, ProblemDims};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerConfig {
    /// Communication rounds K.
    pub rounds: usize,
    /// Augmented-Lagrangian penalty μ.
    pub mu: f64,
    pub eta_y: f64,
    pub eta_z: f64,
    pub eta_phi: f64,
    /// Start each estimate from the previous one instead of zeros.
    pub warm_start: bool,
}

impl Default for LowerConfig {
    fn default() -> Self {
        Self { rounds: 1, mu: 1.0, eta_y: 0.1, eta_z: 0.1, eta_phi: 0.1, warm_start: false }
    }
}

impl LowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Config("K (lower rounds) must be >= 1".into()));
        }
        for (name, v) in [("mu", self.mu), ("eta_y_lower", self.eta_y), ("eta_z_lower", self.eta_z), ("eta_phi", self.eta_phi)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Starting point `(y'_{i,0}, z'_0, φ_{i,0})` of the K-round scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiInit {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<f64>,
    pub duals: Vec<Vec<f64>>,
}

impl PhiInit {
    pub fn zeros(dims: ProblemDims) -> Self {
        Self {
            y: vec![vec![0.0; dims.lower]; dims.workers],
            z: vec![0.0; dims.lower],
            duals: vec![vec![0.0; dims.lower]; dims.workers],
        }
    }

    fn check(&self, dims: ProblemDims) -> Result<()> {
        check_len("init y worker count", self.y.len(), dims.workers)?;
        check_len("init dual worker count", self.duals.len(), dims.workers)?;
        check_len("init z", self.z.len(), dims.lower)?;
        for (y, d) in self.y.iter().zip(&self.duals) {
            check_len("init y_i", y.len(), dims.lower)?;
            check_len("init dual_i", d.len(), dims.lower)?;
        }
        Ok(())
    }
}

/// Derivative of `φ` with respect to `v`, as a linear map `n → N·m + m`.
#[derive(Debug, Clone, PartialEq)]
pub enum PhiJacobian {
    /// K = 1: `∂y'_{i,1}/∂v = −η_y ∇²_{y'v} g_i(v̄, y'_{i,0})` and `∂z'_1/∂v = 0`.
    OneRound { anchor: Vec<f64>, y_init: Vec<Vec<f64>>, eta_y: f64 },
    /// Central-difference columns, one per coordinate of `v`, each laid out
    /// as `[y_1; …; y_N; z]`.
    Dense { columns: Vec<Vec<f64>> },
}

impl PhiJacobian {
    /// `J · dv`, split into worker blocks and the z block.
    pub fn jvp(&self, problem: &dyn BilevelProblem, dv: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let d = problem.dims();
        match self {
            Self::OneRound { anchor, y_init, eta_y } => {
                let y = (0..d.workers)
                    .map(|i| problem.mixed_jvp(i, anchor, &y_init[i], dv).into_iter().map(|g| -eta_y * g).collect())
                    .collect();
                (y, vec![0.0; d.lower])
            }
            Self::Dense { columns } => {
                let mut flat = vec![0.0; (d.workers + 1) * d.lower];
                for (col, s) in columns.iter().zip(dv) {
                    axpy(*s, col, &mut flat);
                }
                unflatten(&flat, d)
            }
        }
    }

    /// `Jᵀ · [r_y; r_z]`, an n-vector.
    pub fn vjp(&self, problem: &dyn BilevelProblem, ry: &[Vec<f64>], rz: &[f64]) -> Vec<f64> {
        match self {
            Self::OneRound { anchor, y_init, eta_y } => {
                let mut out = vec![0.0; anchor.len()];
                for (i, r) in ry.iter().enumerate() {
                    axpy(-eta_y, &problem.mixed_vjp(i, anchor, &y_init[i], r), &mut out);
                }
                out
            }
            Self::Dense { columns } => {
                let flat = flatten(ry, rz);
                columns.iter().map(|c| crate::linalg::dot(c, &flat)).collect()
            }
        }
    }
}

fn flatten(y: &[Vec<f64>], z: &[f64]) -> Vec<f64> {
    y.iter().flatten().chain(z).copied().collect()
}

fn unflatten(flat: &[f64], d: ProblemDims) -> (Vec<Vec<f64>>, Vec<f64>) {
    let y = flat[..d.workers * d.lower].chunks(d.lower).map(<[f64]>::to_vec).collect();
    (y, flat[d.workers * d.lower..].to_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiResult {
    /// `{y'_{i,K}}`.
    pub y: Vec<Vec<f64>>,
    /// `z'_K`.
    pub z: Vec<f64>,
    /// `{φ_{i,K}}`, kept so a later estimate can warm start.
    pub duals: Vec<Vec<f64>>,
    pub jac: PhiJacobian,
}

impl PhiResult {
    /// The final iterate as a warm-start point.
    pub fn as_init(&self) -> PhiInit {
        PhiInit { y: self.y.clone(), z: self.z.clone(), duals: self.duals.clone() }
    }
}

/// `∇_{y'} g̃_i(v, y') = ∇_{y'} g_i(v̄, y') + ∇²_{y'v} g_i(v̄, y')·(v − v̄)`.
pub fn taylor_lower_grad_y(
    problem: &dyn BilevelProblem,
    i: usize,
    anchor: &[f64],
    v: &[f64],
    y: &[f64],
) -> Result<Vec<f64>> {
    let d = problem.dims();
    if i >= d.workers {
        return Err(Error::Shape(format!("worker index {i} out of range (N = {})", d.workers)));
    }
    check_len("anchor", anchor.len(), d.upper)?;
    check_len("v", v.len(), d.upper)?;
    check_len("y'", y.len(), d.lower)?;
    let mut g = problem.lower_grad_y(i, anchor, y);
    let dv = sub(v, anchor);
    if dv.iter().any(|x| *x != 0.0) {
        axpy(1.0, &problem.mixed_jvp(i, anchor, y, &dv), &mut g);
    }
    Ok(g)
}

/// `(y, z, duals)` after the K rounds.
type Rounds = (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>);

/// Runs the K rounds from `init`.
fn run_rounds(
    problem: &dyn BilevelProblem,
    v: &[f64],
    cfg: &LowerConfig,
    init: &PhiInit,
) -> Result<Rounds> {
    let d = problem.dims();
    let anchor = v;
    let mut y = init.y.clone();
    let mut z = init.z.clone();
    let mut duals = init.duals.clone();
    for k in 0..cfg.rounds {
        // Workers: y'_{i,k+1} from round-k values.
        let mut y_next = Vec::with_capacity(d.workers);
        for i in 0..d.workers {
            let g = taylor_lower_grad_y(problem, i, anchor, v, &y[i])?;
            let yi: Vec<f64> = (0..d.lower)
                .map(|c| y[i][c] - cfg.eta_y * (g[c] + duals[i][c] + cfg.mu * (y[i][c] - z[c])))
                .collect();
            y_next.push(yi);
        }
        // Master: z'_{k+1} uses the round-k worker values.
        let mut grad_z = vec![0.0; d.lower];
        for i in 0..d.workers {
            for c in 0..d.lower {
                grad_z[c] += -duals[i][c] - cfg.mu * (y[i][c] - z[c]);
            }
        }
        let z_next: Vec<f64> = z.iter().zip(&grad_z).map(|(zc, g)| zc - cfg.eta_z * g).collect();
        // Duals ascend on the fresh k+1 values.
        for i in 0..d.workers {
            for c in 0..d.lower {
                duals[i][c] += cfg.eta_phi * (y_next[i][c] - z_next[c]);
            }
        }
        y = y_next;
        z = z_next;
        let finite = all_finite(&z) && y.iter().all(|yi| all_finite(yi)) && duals.iter().all(|di| all_finite(di));
        if !finite {
            return Err(Error::Divergence(format!("lower-level estimate became non-finite in round {k}")));
        }
    }
    Ok((y, z, duals))
}

/// K-round estimate of `φ(v)` with its Jacobian in `v`.
///
/// `init` defaults to all zeros. For K = 1 the Jacobian is exact; for
/// K > 1 it is assembled from central differences, one column per
/// coordinate of `v`.
pub fn phi_estimate(
    problem: &dyn BilevelProblem,
    v: &[f64],
    cfg: &LowerConfig,
    init: Option<&PhiInit>,
) -> Result<PhiResult> {
    cfg.validate()?;
    let d = problem.dims();
    check_len("v", v.len(), d.upper)?;
    let zeros;
    let init = match init {
        Some(init) => {
            init.check(d)?;
            init
        }
        None => {
            zeros = PhiInit::zeros(d);
            &zeros
        }
    };
    let (y, z, duals) = run_rounds(problem, v, cfg, init)?;
    let jac = if cfg.rounds == 1 {
        PhiJacobian::OneRound { anchor: v.to_vec(), y_init: init.y.clone(), eta_y: cfg.eta_y }
    } else {
        warn!("phi Jacobian for K = {} uses finite differences over {} coordinates", cfg.rounds, d.upper);
        let step = 1e-6 * (1.0 + norm(v));
        let mut columns = Vec::with_capacity(d.upper);
        let mut probe = v.to_vec();
        for k in 0..d.upper {
            probe[k] = v[k] + step;
            let (yp, zp, _) = run_rounds(problem, &probe, cfg, init)?;
            probe[k] = v[k] - step;
            let (ym, zm, _) = run_rounds(problem, &probe, cfg, init)?;
            probe[k] = v[k];
            let plus = flatten(&yp, &zp);
            let minus = flatten(&ym, &zm);
            columns.push(plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * step)).collect());
        }
        PhiJacobian::Dense { columns }
    };
    Ok(PhiResult { y, z, duals, jac })
}

/// Value and gradient of `h` at one point, with the `φ` estimate behind them.
#[derive(Debug, Clone)]
pub struct HEval {
    pub value: f64,
    pub grad_v: Vec<f64>,
    pub grad_y: Vec<Vec<f64>>,
    pub grad_z: Vec<f64>,
    pub phi: PhiResult,
}

fn check_point(d: ProblemDims, v: &[f64], y: &[Vec<f64>], z: &[f64]) -> Result<()> {
    check_len("v", v.len(), d.upper)?;
    check_len("y worker count", y.len(), d.workers)?;
    for yi in y {
        check_len("y_i", yi.len(), d.lower)?;
    }
    check_len("z", z.len(), d.lower)
}

/// `h` and all of its partial derivatives.
pub fn h_eval(
    problem: &dyn BilevelProblem,
    v: &[f64],
    y: &[Vec<f64>],
    z: &[f64],
    cfg: &LowerConfig,
    init: Option<&PhiInit>,
) -> Result<HEval> {
    check_point(problem.dims(), v, y, z)?;
    let phi = phi_estimate(problem, v, cfg, init)?;
    let ry: Vec<Vec<f64>> = y.iter().zip(&phi.y).map(|(a, b)| sub(a, b)).collect();
    let rz = sub(z, &phi.z);
    let value = y.iter().zip(&phi.y).map(|(a, b)| sq_dist(a, b)).sum::<f64>() + sq_dist(z, &phi.z);
    let grad_v = phi.jac.vjp(problem, &ry, &rz).into_iter().map(|g| -2.0 * g).collect();
    let grad_y = ry.iter().map(|r| r.iter().map(|c| 2.0 * c).collect()).collect();
    let grad_z = rz.iter().map(|c| 2.0 * c).collect();
    Ok(HEval { value, grad_v, grad_y, grad_z, phi })
}

/// `h(v, {y_i}, z) = ‖[{y_i}; z] − φ(v)‖²` with a cold-start estimate.
pub fn h_value(problem: &dyn BilevelProblem, v: &[f64], y: &[Vec<f64>], z: &[f64], cfg: &LowerConfig) -> Result<f64> {
    check_point(problem.dims(), v, y, z)?;
    let phi = phi_estimate(problem, v, cfg, None)?;
    Ok(y.iter().zip(&phi.y).map(|(a, b)| sq_dist(a, b)).sum::<f64>() + sq_dist(z, &phi.z))
}

/// Partial derivatives of `h` as `(∂v, {∂y_i}, ∂z)`.
#[allow(clippy::type_complexity)]
pub fn h_gradient(
    problem: &dyn BilevelProblem,
    v: &[f64],
    y: &[Vec<f64>],
    z: &[f64],
    cfg: &LowerConfig,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<f64>)> {
    let e = h_eval(problem, v, y, z, cfg, None)?;
    Ok((e.grad_v, e.grad_y, e.grad_z))
}
