//! Lagrangian of the polytope-approximated problem, its regularized form,
//! per-block gradients, dual projection and the stationarity gap.

use serde::{Deserialize, Serialize};

use crate::cutplane::{Point, Polytope};
use crate::error::{check_len, Error, Result};
use crate::linalg::{axpy, dot, norm, norm_sq, sub};
use crate::problems::{upper_sum, BilevelProblem, ProblemDims};

/// All primal and dual iterates plus the master iteration counter.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    /// One multiplier per cutting plane.
    pub lambda: Vec<f64>,
    /// Consensus multipliers for `x_i = v`.
    pub theta: Vec<Vec<f64>>,
    pub t: usize,
}

impl PrimalDualState {
    pub fn zeros(dims: ProblemDims) -> Self {
        Self {
            x: vec![vec![0.0; dims.upper]; dims.workers],
            y: vec![vec![0.0; dims.lower]; dims.workers],
            v: vec![0.0; dims.upper],
            z: vec![0.0; dims.lower],
            lambda: Vec::new(),
            theta: vec![vec![0.0; dims.upper]; dims.workers],
            t: 0,
        }
    }

    pub fn point(&self) -> Point<'_> {
        Point { v: &self.v, y: &self.y, z: &self.z }
    }

    pub fn check(&self, dims: ProblemDims, polytope: &Polytope) -> Result<()> {
        check_len("x worker count", self.x.len(), dims.workers)?;
        check_len("y worker count", self.y.len(), dims.workers)?;
        check_len("theta worker count", self.theta.len(), dims.workers)?;
        for i in 0..dims.workers {
            check_len("x_i", self.x[i].len(), dims.upper)?;
            check_len("y_i", self.y[i].len(), dims.lower)?;
            check_len("theta_i", self.theta[i].len(), dims.upper)?;
        }
        check_len("v", self.v.len(), dims.upper)?;
        check_len("z", self.z.len(), dims.lower)?;
        check_len("lambda vs plane count", self.lambda.len(), polytope.len())?;
        for plane in polytope.planes() {
            check_len("plane a", plane.a.len(), dims.upper)?;
            check_len("plane b", plane.b.len(), dims.workers)?;
            check_len("plane c", plane.c.len(), dims.lower)?;
            for b in &plane.b {
                check_len("plane b_i", b.len(), dims.lower)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_v: f64,
    pub eta_z: f64,
    pub eta_lambda: f64,
    pub eta_theta: f64,
}

impl Default for StepSizes {
    /// The hyper-cleaning row of the reference step-size table.
    fn default() -> Self {
        Self { eta_x: 0.001, eta_y: 0.02, eta_v: 0.001, eta_z: 0.02, eta_lambda: 0.1, eta_theta: 0.001 }
    }
}

impl StepSizes {
    pub fn uniform(eta: f64) -> Self {
        Self { eta_x: eta, eta_y: eta, eta_v: eta, eta_z: eta, eta_lambda: eta, eta_theta: eta }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("eta_x", self.eta_x),
            ("eta_y", self.eta_y),
            ("eta_v", self.eta_v),
            ("eta_z", self.eta_z),
            ("eta_lambda", self.eta_lambda),
            ("eta_theta", self.eta_theta),
        ];
        for (name, v) in all {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Decaying dual regularization `c₁ᵗ = 1/(η_λ (t+1)^{1/4})`,
/// `c₂ᵗ = 1/(η_θ (t+1)^{1/4})`, each clamped below by its floor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegSchedule {
    pub eta_lambda: f64,
    pub eta_theta: f64,
    pub floor_c1: f64,
    pub floor_c2: f64,
}

impl RegSchedule {
    pub fn new(steps: &StepSizes) -> Self {
        Self { eta_lambda: steps.eta_lambda, eta_theta: steps.eta_theta, floor_c1: 1e-6, floor_c2: 1e-6 }
    }

    pub fn c1(&self, t: usize) -> f64 {
        reg_c1(self, t)
    }

    pub fn c2(&self, t: usize) -> f64 {
        reg_c2(self, t)
    }
}

fn decay(eta: f64, t: usize) -> f64 {
    1.0 / (eta * ((t + 1) as f64).powf(0.25))
}

pub fn reg_c1(schedule: &RegSchedule, t: usize) -> f64 {
    decay(schedule.eta_lambda, t).max(schedule.floor_c1)
}

pub fn reg_c2(schedule: &RegSchedule, t: usize) -> f64 {
    decay(schedule.eta_theta, t).max(schedule.floor_c2)
}

/// `L_p = Σ G_i + Σ_l λ_l·slack_l + Σ_i θ_iᵀ(x_i − v)`.
pub fn lagrangian_value(state: &PrimalDualState, polytope: &Polytope, problem: &dyn BilevelProblem) -> Result<f64> {
    state.check(problem.dims(), polytope)?;
    let f = upper_sum(problem, &state.x, &state.y)?;
    let planes: f64 = state.lambda.iter().zip(polytope.slacks(state.point())).map(|(l, s)| l * s).sum();
    let consensus: f64 = state.theta.iter().zip(&state.x).map(|(th, x)| dot(th, &sub(x, &state.v))).sum();
    Ok(f + planes + consensus)
}

/// `L̃_p = L_p − Σ_l (c₁ᵗ/2)λ_l² − Σ_i (c₂ᵗ/2)‖θ_i‖²` at `t = state.t`.
pub fn reg_lagrangian_value(
    state: &PrimalDualState,
    polytope: &Polytope,
    problem: &dyn BilevelProblem,
    schedule: &RegSchedule,
) -> Result<f64> {
    let lp = lagrangian_value(state, polytope, problem)?;
    let c1 = schedule.c1(state.t);
    let c2 = schedule.c2(state.t);
    let lam: f64 = state.lambda.iter().map(|l| l * l).sum();
    let th: f64 = state.theta.iter().map(|t| norm_sq(t)).sum();
    Ok(lp - 0.5 * c1 * lam - 0.5 * c2 * th)
}

/// One variable group of the saddle problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    X(usize),
    Y(usize),
    V,
    Z,
    Lambda(usize),
    Theta(usize),
}

/// Regularization weights used by [`block_gradient`]; zero gives `∇L_p`.
#[derive(Debug, Clone, Copy)]
struct Reg {
    c1: f64,
    c2: f64,
}

fn block_gradient(
    block: Block,
    state: &PrimalDualState,
    polytope: &Polytope,
    problem: &dyn BilevelProblem,
    reg: Reg,
) -> Result<Vec<f64>> {
    let d = problem.dims();
    let worker = |i: usize| {
        if i < d.workers {
            Ok(i)
        } else {
            Err(Error::Shape(format!("worker index {i} out of range (N = {})", d.workers)))
        }
    };
    Ok(match block {
        Block::X(i) => {
            let i = worker(i)?;
            let mut g = problem.upper_grad_x(i, &state.x[i], &state.y[i]);
            axpy(1.0, &state.theta[i], &mut g);
            g
        }
        Block::Y(i) => {
            let i = worker(i)?;
            let mut g = problem.upper_grad_y(i, &state.x[i], &state.y[i]);
            for (l, plane) in state.lambda.iter().zip(polytope.planes()) {
                axpy(*l, &plane.b[i], &mut g);
            }
            g
        }
        Block::V => {
            let mut g = vec![0.0; d.upper];
            for (l, plane) in state.lambda.iter().zip(polytope.planes()) {
                axpy(*l, &plane.a, &mut g);
            }
            for th in &state.theta {
                axpy(-1.0, th, &mut g);
            }
            g
        }
        Block::Z => {
            let mut g = vec![0.0; d.lower];
            for (l, plane) in state.lambda.iter().zip(polytope.planes()) {
                axpy(*l, &plane.c, &mut g);
            }
            g
        }
        Block::Lambda(l) => {
            let plane = polytope
                .planes()
                .get(l)
                .ok_or_else(|| Error::Shape(format!("plane index {l} out of range ({} planes)", polytope.len())))?;
            vec![plane.slack_unchecked(state.point()) - reg.c1 * state.lambda[l]]
        }
        Block::Theta(i) => {
            let i = worker(i)?;
            let mut g = sub(&state.x[i], &state.v);
            axpy(-reg.c2, &state.theta[i], &mut g);
            g
        }
    })
}

/// Closed-form gradient of `L̃_p` with respect to one block.
pub fn grad_block(
    block: Block,
    state: &PrimalDualState,
    polytope: &Polytope,
    problem: &dyn BilevelProblem,
    schedule: &RegSchedule,
) -> Result<Vec<f64>> {
    state.check(problem.dims(), polytope)?;
    let reg = Reg { c1: schedule.c1(state.t), c2: schedule.c2(state.t) };
    block_gradient(block, state, polytope, problem, reg)
}

/// Gradient of the unregularized `L_p` with respect to one block.
pub fn lagrangian_grad_block(
    block: Block,
    state: &PrimalDualState,
    polytope: &Polytope,
    problem: &dyn BilevelProblem,
) -> Result<Vec<f64>> {
    state.check(problem.dims(), polytope)?;
    block_gradient(block, state, polytope, problem, Reg { c1: 0.0, c2: 0.0 })
}

/// Every block of the saddle problem, in a fixed order.
pub fn all_blocks(dims: ProblemDims, planes: usize) -> Vec<Block> {
    let n = dims.workers;
    (0..n)
        .map(Block::X)
        .chain((0..n).map(Block::Y))
        .chain([Block::V, Block::Z])
        .chain((0..planes).map(Block::Lambda))
        .chain((0..n).map(Block::Theta))
        .collect()
}

/// Norm caps on the multipliers; `f64::INFINITY` disables a cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualBounds {
    pub lambda_max: f64,
    pub theta_max: f64,
}

impl Default for DualBounds {
    fn default() -> Self {
        Self { lambda_max: 1e3, theta_max: 1e3 }
    }
}

/// Clamps each `λ_l` into `[0, λ_max]` and radially shrinks each `θ_i` to
/// norm at most `θ_max`.
pub fn project_duals(state: &mut PrimalDualState, bounds: &DualBounds) {
    for l in &mut state.lambda {
        *l = l.clamp(0.0, bounds.lambda_max);
    }
    for th in &mut state.theta {
        let nrm = norm(th);
        // The tolerance keeps a second projection from rescaling by rounding error.
        if nrm > bounds.theta_max * (1.0 + 4.0 * f64::EPSILON) {
            let s = bounds.theta_max / nrm;
            th.iter_mut().for_each(|x| *x *= s);
        }
    }
}

/// Squared norm of the stacked `∇L_p` over all six blocks.
pub fn stationarity_gap_sq(state: &PrimalDualState, polytope: &Polytope, problem: &dyn BilevelProblem) -> Result<f64> {
    state.check(problem.dims(), polytope)?;
    let zero = Reg { c1: 0.0, c2: 0.0 };
    let mut total = 0.0;
    for block in all_blocks(problem.dims(), polytope.len()) {
        total += norm_sq(&block_gradient(block, state, polytope, problem, zero)?);
    }
    Ok(total)
}
