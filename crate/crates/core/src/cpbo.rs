//! Centralized cutting-plane bilevel solver (CPBO).
//!
//! Single machine, upper objective `F(x, y)` and lower objective `f(x, y)`,
//! read from worker 0 of a one-worker [`BilevelProblem`]. Phase 1 runs
//! Gauss–Seidel primal-dual iterations on `L_p = F + Σ λ_l (a_lᵀx + b_lᵀy + κ_l)`
//! while maintaining the polytope against `h(x, y) = ‖y − φ(x)‖²`. From
//! iteration T₁ on, the polytope and multipliers are frozen and plain
//! gradient descent runs on the squared-hinge penalty
//! `L̂_p = F + Σ λ_l max(0, slack_l)²`.

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::cutplane::{add_if_violated, drop_inactive, AddOutcome, HGrad, Point, Polytope};
use crate::engine::{RunError, TraceRow};
use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, axpy, norm, norm_sq, sq_dist, sub};
use crate::problems::BilevelProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpboSteps {
    pub eta_x: f64,
    pub eta_y: f64,
    pub eta_lambda: f64,
}

impl Default for CpboSteps {
    fn default() -> Self {
        Self { eta_x: 0.01, eta_y: 0.01, eta_lambda: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpboConfig {
    /// Gradient steps K behind `φ(x)`.
    pub rounds: usize,
    /// Step size of those K steps.
    pub eta_lower: f64,
    pub steps: CpboSteps,
    pub t1: usize,
    pub k_pre: usize,
    pub max_planes: usize,
    pub epsilon: f64,
    pub lambda_max: f64,
    pub max_iters: usize,
    /// Stop once `‖∇L̂_p‖²` falls to this value during phase 2.
    pub gap_threshold: f64,
}

impl Default for CpboConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            eta_lower: 0.1,
            steps: CpboSteps::default(),
            t1: 500,
            k_pre: 10,
            max_planes: 50,
            epsilon: 0.1,
            lambda_max: 1e3,
            max_iters: 100_000,
            gap_threshold: 1e-8,
        }
    }
}

impl CpboConfig {
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.rounds == 0 {
            return cfg("K must be >= 1".into());
        }
        if self.k_pre == 0 {
            return cfg("k_pre must be >= 1".into());
        }
        if self.max_planes == 0 {
            return cfg("M must be >= 1".into());
        }
        for (name, v) in [
            ("eta_lower", self.eta_lower),
            ("eta_x", self.steps.eta_x),
            ("eta_y", self.steps.eta_y),
            ("eta_lambda", self.steps.eta_lambda),
            ("epsilon", self.epsilon),
            ("lambda_max", self.lambda_max),
        ] {
            if !(v > 0.0) {
                return cfg(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.gap_threshold >= 0.0) {
            return cfg(format!("gap_threshold must be non-negative, got {}", self.gap_threshold));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpboState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
    pub polytope: Polytope,
    pub t: usize,
}

impl CpboState {
    pub fn zeros(problem: &dyn BilevelProblem, max_planes: usize) -> Result<Self> {
        let d = problem.dims();
        Ok(Self { x: vec![0.0; d.upper], y: vec![0.0; d.lower], lambda: vec![], polytope: Polytope::new(max_planes)?, t: 0 })
    }

    fn check(&self, problem: &dyn BilevelProblem) -> Result<()> {
        let d = problem.dims();
        if d.workers != 1 {
            return Err(Error::Config(format!("CPBO needs a single-worker problem, got N = {}", d.workers)));
        }
        check_len("x", self.x.len(), d.upper)?;
        check_len("y", self.y.len(), d.lower)?;
        check_len("lambda vs plane count", self.lambda.len(), self.polytope.len())
    }
}

fn slack(plane: &crate::cutplane::CuttingPlane, x: &[f64], y: &[f64]) -> f64 {
    let y = [y.to_vec()];
    plane.slack_unchecked(Point { v: x, y: &y, z: &[] })
}

fn gd_steps(problem: &dyn BilevelProblem, x: &[f64], k: usize, eta: f64) -> Result<Vec<f64>> {
    let mut y = vec![0.0; problem.dims().lower];
    for step in 0..k {
        let g = problem.lower_grad_y(0, x, &y);
        axpy(-eta, &g, &mut y);
        if !all_finite(&y) {
            return Err(Error::Divergence(format!("phi estimate became non-finite at step {step}")));
        }
    }
    Ok(y)
}

/// `φ(x)`: K gradient steps on `f(x, ·)` from `y₀ = 0`, with `f` linearized
/// in `x` around `x̄ = x`.
pub fn phi_estimate_centralized(problem: &dyn BilevelProblem, x: &[f64], k: usize, eta: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Config("K must be >= 1".into()));
    }
    check_len("x", x.len(), problem.dims().upper)?;
    gd_steps(problem, x, k, eta)
}

/// `(h, ∂h/∂x, ∂h/∂y)` for `h(x, y) = ‖y − φ(x)‖²`.
pub fn cpbo_h_eval(problem: &dyn BilevelProblem, x: &[f64], y: &[f64], k: usize, eta: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len("y", y.len(), problem.dims().lower)?;
    let phi = phi_estimate_centralized(problem, x, k, eta)?;
    let r = sub(y, &phi);
    // ∂h/∂x = −2 Jᵀ r with J = ∂φ/∂x.
    let jt_r = if k == 1 {
        let y0 = vec![0.0; y.len()];
        problem.mixed_vjp(0, x, &y0, &r).into_iter().map(|g| -eta * g).collect()
    } else {
        warn!("CPBO phi Jacobian for K = {k} uses finite differences");
        let step = 1e-6 * (1.0 + norm(x));
        let mut probe = x.to_vec();
        let mut out = vec![0.0; x.len()];
        for c in 0..x.len() {
            probe[c] = x[c] + step;
            let plus = gd_steps(problem, &probe, k, eta)?;
            probe[c] = x[c] - step;
            let minus = gd_steps(problem, &probe, k, eta)?;
            probe[c] = x[c];
            out[c] = plus.iter().zip(&minus).zip(&r).map(|((p, m), ri)| (p - m) / (2.0 * step) * ri).sum();
        }
        out
    };
    let gx = jt_r.iter().map(|g: &f64| -2.0 * g).collect();
    let gy = r.iter().map(|c| 2.0 * c).collect();
    Ok((norm_sq(&r), gx, gy))
}

fn lagrangian_grads(state: &CpboState, problem: &dyn BilevelProblem, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut gx = problem.upper_grad_x(0, x, y);
    let mut gy = problem.upper_grad_y(0, x, y);
    for (l, plane) in state.lambda.iter().zip(state.polytope.planes()) {
        axpy(*l, &plane.a, &mut gx);
        axpy(*l, &plane.b[0], &mut gy);
    }
    (gx, gy)
}

/// One phase-1 iteration in Gauss–Seidel order: x, then y, then each λ_l
/// (clamped to `[0, λ_max]`). Plane maintenance is separate.
pub fn cpbo_phase1_step(state: &mut CpboState, problem: &dyn BilevelProblem, steps: &CpboSteps, lambda_max: f64) -> Result<()> {
    state.check(problem)?;
    let (gx, _) = lagrangian_grads(state, problem, &state.x, &state.y);
    axpy(-steps.eta_x, &gx, &mut state.x);
    let (_, gy) = lagrangian_grads(state, problem, &state.x, &state.y);
    axpy(-steps.eta_y, &gy, &mut state.y);
    for (l, plane) in state.lambda.iter_mut().zip(state.polytope.planes()) {
        *l = (*l + steps.eta_lambda * slack(plane, &state.x, &state.y)).clamp(0.0, lambda_max);
    }
    state.t += 1;
    if !(all_finite(&state.x) && all_finite(&state.y) && all_finite(&state.lambda)) {
        return Err(Error::Divergence(format!("CPBO phase 1 became non-finite at t = {}", state.t)));
    }
    Ok(())
}

/// `L̂_p = F(x, y) + Σ λ_l max(0, slack_l)²`.
pub fn cpbo_penalty_value(state: &CpboState, problem: &dyn BilevelProblem) -> f64 {
    let f = problem.upper_value(0, &state.x, &state.y);
    let pen: f64 = state
        .lambda
        .iter()
        .zip(state.polytope.planes())
        .map(|(l, p)| l * slack(p, &state.x, &state.y).max(0.0).powi(2))
        .sum();
    f + pen
}

/// `(∇_x L̂_p, ∇_y L̂_p)`.
pub fn cpbo_penalty_grad(state: &CpboState, problem: &dyn BilevelProblem) -> (Vec<f64>, Vec<f64>) {
    let mut gx = problem.upper_grad_x(0, &state.x, &state.y);
    let mut gy = problem.upper_grad_y(0, &state.x, &state.y);
    for (l, p) in state.lambda.iter().zip(state.polytope.planes()) {
        let w = 2.0 * l * slack(p, &state.x, &state.y).max(0.0);
        if w != 0.0 {
            axpy(w, &p.a, &mut gx);
            axpy(w, &p.b[0], &mut gy);
        }
    }
    (gx, gy)
}

/// One phase-2 gradient step on `L̂_p`; polytope and λ stay fixed.
pub fn cpbo_phase2_step(state: &mut CpboState, problem: &dyn BilevelProblem, steps: &CpboSteps) -> Result<()> {
    state.check(problem)?;
    let (gx, gy) = cpbo_penalty_grad(state, problem);
    axpy(-steps.eta_x, &gx, &mut state.x);
    axpy(-steps.eta_y, &gy, &mut state.y);
    state.t += 1;
    if !(all_finite(&state.x) && all_finite(&state.y)) {
        return Err(Error::Divergence(format!("CPBO phase 2 became non-finite at t = {}", state.t)));
    }
    Ok(())
}

/// Drops planes whose λ is zero before and after the last step, then cuts
/// off the current point if `h > ε`.
pub fn cpbo_maintenance(state: &mut CpboState, lambda_prev: &[f64], problem: &dyn BilevelProblem, cfg: &CpboConfig) -> Result<AddOutcome> {
    let mut duals = drop_inactive(&mut state.polytope, lambda_prev, &state.lambda)?;
    let (h, gx, gy) = cpbo_h_eval(problem, &state.x, &state.y, cfg.rounds, cfg.eta_lower)?;
    let (x, y) = (state.x.clone(), [state.y.clone()]);
    let gy = [gy];
    let outcome = add_if_violated(
        &mut state.polytope,
        &mut duals,
        Point { v: &x, y: &y, z: &[] },
        h,
        HGrad { v: &gx, y: &gy, z: &[] },
        cfg.epsilon,
    )?;
    state.lambda = duals;
    Ok(outcome)
}

fn phase1_gap_sq(state: &CpboState, problem: &dyn BilevelProblem) -> f64 {
    let (gx, gy) = lagrangian_grads(state, problem, &state.x, &state.y);
    let slacks: f64 = state.polytope.planes().iter().map(|p| slack(p, &state.x, &state.y).powi(2)).sum();
    norm_sq(&gx) + norm_sq(&gy) + slacks
}

#[derive(Debug, Clone)]
pub struct CpboOutput {
    pub trace: Vec<TraceRow>,
    pub state: CpboState,
}

/// Runs both phases from `init` (zeros by default). Virtual time is the
/// iteration count.
pub fn run_cpbo(problem: &dyn BilevelProblem, cfg: &CpboConfig, init: Option<CpboState>) -> Result<CpboOutput, RunError> {
    let mut trace = Vec::new();
    match run_inner(problem, cfg, init, &mut trace) {
        Ok(state) => Ok(CpboOutput { trace, state }),
        Err(error) => Err(RunError { error, partial: trace }),
    }
}

fn run_inner(problem: &dyn BilevelProblem, cfg: &CpboConfig, init: Option<CpboState>, trace: &mut Vec<TraceRow>) -> Result<CpboState> {
    cfg.validate()?;
    let mut state = match init {
        Some(s) => s,
        None => CpboState::zeros(problem, cfg.max_planes)?,
    };
    state.check(problem)?;
    for _ in 0..cfg.max_iters {
        let t = state.t;
        let gap_sq = if t < cfg.t1 {
            let prev = state.lambda.clone();
            cpbo_phase1_step(&mut state, problem, &cfg.steps, cfg.lambda_max)?;
            if (t + 1) % cfg.k_pre == 0 {
                let outcome = cpbo_maintenance(&mut state, &prev, problem, cfg)?;
                debug!("CPBO t = {}: {:?}, {} planes", t + 1, outcome, state.polytope.len());
            }
            phase1_gap_sq(&state, problem)
        } else {
            cpbo_phase2_step(&mut state, problem, &cfg.steps)?;
            let (gx, gy) = cpbo_penalty_grad(&state, problem);
            norm_sq(&gx) + norm_sq(&gy)
        };
        let phi = phi_estimate_centralized(problem, &state.x, cfg.rounds, cfg.eta_lower)?;
        let row = TraceRow {
            t: state.t,
            vtime: state.t as f64,
            upper: problem.upper_value(0, &state.x, &state.y),
            h: sq_dist(&state.y, &phi),
            gap_sq,
            planes: state.polytope.len(),
            c1: 0.0,
            active: vec![0],
        };
        if !(row.upper.is_finite() && row.gap_sq.is_finite()) {
            return Err(Error::Divergence(format!("non-finite CPBO observables at t = {}", state.t)));
        }
        trace.push(row);
        if t >= cfg.t1 && gap_sq <= cfg.gap_threshold {
            break;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutplane::CuttingPlane;
    use crate::problems::{make_quadratic_toy, QuadraticToy};

    /// F = x² + y², f = (y − x)².
    fn toy() -> QuadraticToy {
        make_quadratic_toy(1, 1, &[vec![0.0]], &[vec![0.0]], &[1.0]).unwrap()
    }

    fn with_plane(a: f64, b: f64, kappa: f64, lambda: f64, x: f64, y: f64) -> CpboState {
        let mut polytope = Polytope::new(4).unwrap();
        polytope.push(CuttingPlane { a: vec![a], b: vec![vec![b]], c: vec![], kappa }).unwrap();
        CpboState { x: vec![x], y: vec![y], lambda: vec![lambda], polytope, t: 0 }
    }

    #[test]
    fn one_step_phi_hand_value() {
        assert_eq!(phi_estimate_centralized(&toy(), &[2.0], 1, 0.25).unwrap(), vec![1.0]);
        assert_eq!(phi_estimate_centralized(&toy(), &[0.0], 1, 0.25).unwrap(), vec![0.0]);
    }

    #[test]
    fn many_steps_approach_argmin() {
        let y = phi_estimate_centralized(&toy(), &[0.7], 2000, 0.01).unwrap();
        assert!((y[0] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn phi_rejects_zero_rounds_and_diverges_loudly() {
        assert!(matches!(phi_estimate_centralized(&toy(), &[1.0], 0, 0.1), Err(Error::Config(_))));
        assert!(matches!(phi_estimate_centralized(&toy(), &[1.0], 5000, 2.0), Err(Error::Divergence(_))));
    }

    #[test]
    fn empty_polytope_is_gradient_descent() {
        let p = toy();
        let mut s = CpboState { x: vec![1.0], y: vec![2.0], ..CpboState::zeros(&p, 4).unwrap() };
        cpbo_phase1_step(&mut s, &p, &CpboSteps { eta_x: 0.1, eta_y: 0.1, eta_lambda: 0.1 }, 1e3).unwrap();
        assert!((s.x[0] - 0.8).abs() < 1e-15);
        assert!((s.y[0] - 1.6).abs() < 1e-15);
    }

    #[test]
    fn negative_slack_keeps_lambda_at_zero() {
        let p = toy();
        let mut s = with_plane(1.0, 0.0, -1.0, 0.0, 0.0, 0.0);
        cpbo_phase1_step(&mut s, &p, &CpboSteps::default(), 1e3).unwrap();
        assert_eq!(s.lambda, vec![0.0]);
    }

    #[test]
    fn penalty_hand_value() {
        // slack = x + κ = 3 − 1 = 2, λ = 0.5 → 0.5·4 = 2 on top of F = 9.
        let p = toy();
        let s = with_plane(1.0, 0.0, -1.0, 0.5, 3.0, 0.0);
        assert!((cpbo_penalty_value(&s, &p) - 11.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_hinge_is_plain_objective() {
        let p = toy();
        let s = with_plane(1.0, 1.0, -10.0, 3.0, 1.0, 2.0);
        assert_eq!(cpbo_penalty_value(&s, &p), 5.0);
        assert_eq!(cpbo_penalty_grad(&s, &p), (vec![2.0], vec![4.0]));
    }

    #[test]
    fn hinge_gradient_vanishes_at_kink() {
        let p = toy();
        let s = with_plane(1.0, 0.0, -1.0, 3.0, 1.0, 0.0);
        assert_eq!(cpbo_penalty_grad(&s, &p).0, vec![2.0]);
    }

    #[test]
    fn h_gradient_one_step() {
        // φ(x) = 2ηx, h = (y − 2ηx)²; η = 0.25, x = 2, y = 3 → r = 2.
        let (h, gx, gy) = cpbo_h_eval(&toy(), &[2.0], &[3.0], 1, 0.25).unwrap();
        assert_eq!(h, 4.0);
        assert_eq!(gy, vec![4.0]);
        assert!((gx[0] + 2.0).abs() < 1e-9);
    }

    #[test]
    fn multi_step_h_gradient_matches_closed_form() {
        // φ(x) = (1 − (1 − 2η)^K) x for f = (y − x)².
        let (eta, k) = (0.1, 4);
        let s = 1.0 - (1.0f64 - 2.0 * eta).powi(k as i32);
        let (x, y) = (0.8, -0.3);
        let (_, gx, _) = cpbo_h_eval(&toy(), &[x], &[y], k, eta).unwrap();
        assert!((gx[0] - (-2.0 * s * (y - s * x))).abs() < 1e-7);
    }

    #[test]
    fn t1_zero_is_pure_descent() {
        let p = toy();
        let cfg = CpboConfig { t1: 0, max_iters: 3, gap_threshold: 0.0, ..CpboConfig::default() };
        let init = CpboState { x: vec![1.0], y: vec![1.0], ..CpboState::zeros(&p, 4).unwrap() };
        let out = run_cpbo(&p, &cfg, Some(init)).unwrap();
        assert!(out.state.polytope.is_empty());
        assert!((out.state.x[0] - 0.98f64.powi(3)).abs() < 1e-15);
    }

    #[test]
    fn toy_converges_to_origin() {
        let p = toy();
        let cfg = CpboConfig { steps: CpboSteps { eta_x: 0.05, eta_y: 0.05, eta_lambda: 0.1 }, ..CpboConfig::default() };
        let init = CpboState { x: vec![2.0], y: vec![-1.0], ..CpboState::zeros(&p, cfg.max_planes).unwrap() };
        let out = run_cpbo(&p, &cfg, Some(init)).unwrap();
        assert!(norm(&[out.state.x[0], out.state.y[0]]) <= 1e-2);
    }

    #[test]
    fn multi_worker_problem_is_rejected() {
        let p = make_quadratic_toy(1, 1, &vec![vec![0.0]; 2], &vec![vec![0.0]; 2], &[1.0, 1.0]).unwrap();
        let err = run_cpbo(&p, &CpboConfig::default(), None).unwrap_err();
        assert!(matches!(err.error, Error::Config(_)));
    }
}
