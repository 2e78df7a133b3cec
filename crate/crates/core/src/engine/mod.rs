//! Deterministic discrete-event simulation of the parameter-server system.
//!
//! Every worker is always busy computing its next update against the last
//! snapshot the master sent it. A worker finishes at `dispatch time +
//! sampled delay`; the master iterates as soon as S workers have finished
//! (waiting longer for any worker about to exceed the staleness bound τ),
//! consumes those updates, takes one Gauss–Seidel step on `v`, `z`, `λ`,
//! `θ`, and redispatches the consumed workers with fresh snapshots. The
//! master's own compute time is zero.

mod delay;
mod trace;

pub use delay::{sample_delay, DelayModel, DelayStreams};
pub use trace::{read_trace_csv, trace_to_string, write_trace_csv, TraceRow, TRACE_HEADER};

use log::debug;
use serde::{Deserialize, Serialize};

use crate::cutplane::{add_if_violated, drop_inactive, AddOutcome, HGrad, Polytope};
use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, axpy};
use crate::lower_level::{h_eval, LowerConfig, PhiInit};
use crate::problems::{upper_sum, BilevelProblem};
use crate::saddle::{project_duals, stationarity_gap_sq, DualBounds, PrimalDualState, RegSchedule, StepSizes};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// S: updates the master waits for per iteration.
    pub active_workers: usize,
    /// τ: every worker must be consumed at least once per τ iterations.
    pub tau: usize,
    pub lower: LowerConfig,
    /// Plane maintenance period.
    pub k_pre: usize,
    /// Planes are frozen from iteration T₁ on.
    pub t1: usize,
    /// M: plane cap.
    pub max_planes: usize,
    /// ε of the relaxed constraint `h ≤ ε`.
    pub epsilon: f64,
    pub steps: StepSizes,
    pub schedule: RegSchedule,
    pub bounds: DualBounds,
    pub delay: DelayModel,
    pub max_iters: usize,
    pub gap_threshold: f64,
    pub seed: u64,
    /// Gradient steps a worker takes per dispatch.
    pub local_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let steps = StepSizes::default();
        Self {
            active_workers: 9,
            tau: 15,
            lower: LowerConfig::default(),
            k_pre: 10,
            t1: 500,
            max_planes: 50,
            epsilon: 0.1,
            steps,
            schedule: RegSchedule::new(&steps),
            bounds: DualBounds::default(),
            delay: DelayModel::default(),
            max_iters: 100_000,
            gap_threshold: 1e-3,
            seed: 0,
            local_steps: 1,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, n_workers: usize) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.active_workers == 0 || self.active_workers > n_workers {
            return cfg(format!("S must satisfy 1 <= S <= N = {n_workers}, got {}", self.active_workers));
        }
        if self.tau == 0 {
            return cfg("tau must be >= 1".into());
        }
        if self.k_pre == 0 {
            return cfg("k_pre must be >= 1".into());
        }
        if self.max_planes == 0 {
            return cfg("M must be >= 1".into());
        }
        if !(self.epsilon > 0.0) {
            return cfg(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.local_steps == 0 {
            return cfg("local_steps must be >= 1".into());
        }
        if !(self.gap_threshold >= 0.0) {
            return cfg(format!("gap_threshold must be non-negative, got {}", self.gap_threshold));
        }
        if !(self.schedule.floor_c1 >= 0.0 && self.schedule.floor_c2 >= 0.0) {
            return cfg("schedule floors must be non-negative".into());
        }
        if !(self.bounds.lambda_max > 0.0 && self.bounds.theta_max > 0.0) {
            return cfg("dual bounds must be positive".into());
        }
        self.steps.validate()?;
        self.lower.validate()?;
        self.delay.validate(n_workers)
    }
}

/// What worker `i` last received from the master.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerSnapshot {
    /// Iteration at which the worker was last consumed (t̂_i).
    pub t_hat: usize,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    /// Virtual time at which the in-flight update completes.
    pub completion: f64,
}

impl WorkerSnapshot {
    fn capture(state: &PrimalDualState, i: usize, completion: f64) -> Self {
        Self {
            t_hat: state.t,
            v: state.v.clone(),
            z: state.z.clone(),
            lambda: state.lambda.clone(),
            theta: state.theta[i].clone(),
            completion,
        }
    }
}

/// The active set for the next master iteration and the virtual time at
/// which the master acts.
///
/// The decision time is the S-th earliest completion, pushed later if a
/// worker that would otherwise reach staleness τ has not finished yet. Every
/// worker finished by the decision time is consumed, so |𝓠| ≥ S.
pub fn select_active(completion: &[f64], s: usize, tau: usize, t_hat: &[usize], next_t: usize) -> (Vec<usize>, f64) {
    debug_assert!(s >= 1 && s <= completion.len());
    let mut order: Vec<usize> = (0..completion.len()).collect();
    order.sort_by(|&a, &b| completion[a].total_cmp(&completion[b]).then(a.cmp(&b)));
    let mut decision = completion[order[s - 1]];
    for (i, &th) in t_hat.iter().enumerate() {
        if next_t - th >= tau {
            decision = decision.max(completion[i]);
        }
    }
    let active = (0..completion.len()).filter(|&i| completion[i] <= decision).collect();
    (active, decision)
}

/// Local descent on `L̃_p` in `(x_i, y_i)` against the worker's snapshot.
///
/// The dual regularizers do not involve `x_i` or `y_i`, so the schedule
/// does not enter.
#[allow(clippy::too_many_arguments)]
pub fn worker_step(
    problem: &dyn BilevelProblem,
    i: usize,
    snapshot: &WorkerSnapshot,
    x: &[f64],
    y: &[f64],
    steps: &StepSizes,
    polytope: &Polytope,
    local_steps: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("snapshot lambda vs plane count", snapshot.lambda.len(), polytope.len())?;
    let mut x = x.to_vec();
    let mut y = y.to_vec();
    for _ in 0..local_steps {
        let mut gx = problem.upper_grad_x(i, &x, &y);
        axpy(1.0, &snapshot.theta, &mut gx);
        let mut gy = problem.upper_grad_y(i, &x, &y);
        for (l, plane) in snapshot.lambda.iter().zip(polytope.planes()) {
            axpy(*l, &plane.b[i], &mut gy);
        }
        axpy(-steps.eta_x, &gx, &mut x);
        axpy(-steps.eta_y, &gy, &mut y);
    }
    if !all_finite(&x) || !all_finite(&y) {
        return Err(Error::Divergence(format!("worker {i} produced a non-finite update (snapshot t = {})", snapshot.t_hat)));
    }
    Ok((x, y))
}

/// A consumed worker update.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerUpdate {
    pub worker: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Applies the active workers' updates and one Gauss–Seidel master step
/// (`v`, then `z`, then each `λ_l`, then `θ_i` for active `i`), projects the
/// multipliers and advances `state.t`.
pub fn master_step(
    state: &mut PrimalDualState,
    updates: &[WorkerUpdate],
    polytope: &Polytope,
    problem: &dyn BilevelProblem,
    steps: &StepSizes,
    schedule: &RegSchedule,
    bounds: &DualBounds,
) -> Result<()> {
    if updates.is_empty() {
        return Err(Error::Logic("master step needs at least one active worker".into()));
    }
    state.check(problem.dims(), polytope)?;
    for u in updates {
        state.x[u.worker].clone_from(&u.x);
        state.y[u.worker].clone_from(&u.y);
    }
    let c1 = schedule.c1(state.t);
    let c2 = schedule.c2(state.t);

    // v with (λᵗ, θᵗ)
    let mut gv = vec![0.0; state.v.len()];
    for (l, plane) in state.lambda.iter().zip(polytope.planes()) {
        axpy(*l, &plane.a, &mut gv);
    }
    for th in &state.theta {
        axpy(-1.0, th, &mut gv);
    }
    axpy(-steps.eta_v, &gv, &mut state.v);

    // z with v^{t+1}
    let mut gz = vec![0.0; state.z.len()];
    for (l, plane) in state.lambda.iter().zip(polytope.planes()) {
        axpy(*l, &plane.c, &mut gz);
    }
    axpy(-steps.eta_z, &gz, &mut state.z);

    // λ with (v^{t+1}, y^{t+1}, z^{t+1}, λᵗ)
    let slacks = polytope.slacks(state.point());
    for (l, s) in state.lambda.iter_mut().zip(slacks) {
        *l += steps.eta_lambda * (s - c1 * *l);
    }

    // θ_i for active workers only
    for u in updates {
        let i = u.worker;
        for (th, (x, v)) in state.theta[i].iter_mut().zip(state.x[i].iter().zip(&state.v)) {
            *th += steps.eta_theta * ((x - v) - c2 * *th);
        }
    }
    project_duals(state, bounds);
    state.t += 1;

    let finite = all_finite(&state.v)
        && all_finite(&state.z)
        && all_finite(&state.lambda)
        && state.theta.iter().all(|t| all_finite(t));
    if !finite {
        return Err(Error::Divergence(format!("master variables became non-finite at t = {}", state.t)));
    }
    Ok(())
}

/// Result of one plane-maintenance pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Maintenance {
    pub dropped: usize,
    pub outcome: AddOutcome,
    pub h: f64,
}

/// Whether maintenance runs after iteration `t` (0-based, before increment).
pub fn maintenance_due(t: usize, k_pre: usize, t1: usize) -> bool {
    (t + 1).is_multiple_of(k_pre) && t < t1
}

/// Drops planes whose multiplier is zero at both `lambda_prev` (start of the
/// iteration) and the current state, then cuts off the current point if
/// `h > ε`. Updates `state.lambda` to match the new polytope.
pub fn plane_maintenance(
    state: &mut PrimalDualState,
    lambda_prev: &[f64],
    polytope: &mut Polytope,
    problem: &dyn BilevelProblem,
    lower: &LowerConfig,
    epsilon: f64,
    phi_init: Option<&PhiInit>,
) -> Result<(Maintenance, PhiInit)> {
    let before = polytope.len();
    let mut duals = drop_inactive(polytope, lambda_prev, &state.lambda)?;
    let dropped = before - polytope.len();
    let e = h_eval(problem, &state.v, &state.y, &state.z, lower, phi_init)?;
    let grad = HGrad { v: &e.grad_v, y: &e.grad_y, z: &e.grad_z };
    let outcome = add_if_violated(polytope, &mut duals, state.point(), e.value, grad, epsilon)?;
    state.lambda = duals;
    Ok((Maintenance { dropped, outcome, h: e.value }, e.phi.as_init()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Async,
    Sync,
}

/// Counters gathered over a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    /// Largest `t − t̂_i` seen after any master iteration.
    pub max_staleness: usize,
    pub planes_added: usize,
    pub planes_dropped: usize,
    pub maintenance_events: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRow>,
    pub state: PrimalDualState,
    pub polytope: Polytope,
    pub stats: RunStats,
}

/// A failed run together with every row logged before the failure.
#[derive(Debug)]
pub struct RunError {
    pub error: Error,
    pub partial: Vec<TraceRow>,
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.partial.last() {
            Some(r) => write!(f, "{} (last finite row: t = {}, F = {}, gap_sq = {})", self.error, r.t, r.upper, r.gap_sq),
            None => write!(f, "{}", self.error),
        }
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Asynchronous run: the master consumes the S earliest updates (plus any
/// forced by τ) each iteration.
pub fn run_adbo(problem: &dyn BilevelProblem, cfg: &RunConfig, init: Option<PrimalDualState>) -> Result<RunOutput, RunError> {
    simulate(problem, cfg, init, Mode::Async)
}

/// Synchronous baseline: every worker is consumed every iteration, so each
/// iteration lasts as long as the slowest worker.
pub fn run_sdbo(problem: &dyn BilevelProblem, cfg: &RunConfig, init: Option<PrimalDualState>) -> Result<RunOutput, RunError> {
    simulate(problem, cfg, init, Mode::Sync)
}

fn simulate(
    problem: &dyn BilevelProblem,
    cfg: &RunConfig,
    init: Option<PrimalDualState>,
    mode: Mode,
) -> Result<RunOutput, RunError> {
    let mut trace = Vec::new();
    match simulate_inner(problem, cfg, init, mode, &mut trace) {
        Ok((state, polytope, stats)) => Ok(RunOutput { trace, state, polytope, stats }),
        Err(error) => Err(RunError { error, partial: trace }),
    }
}

fn simulate_inner(
    problem: &dyn BilevelProblem,
    cfg: &RunConfig,
    init: Option<PrimalDualState>,
    mode: Mode,
    trace: &mut Vec<TraceRow>,
) -> Result<(PrimalDualState, Polytope, RunStats)> {
    let dims = problem.dims();
    let n = dims.workers;
    cfg.validate(n)?;
    let mut polytope = Polytope::new(cfg.max_planes)?;
    let mut state = init.unwrap_or_else(|| PrimalDualState::zeros(dims));
    state.check(dims, &polytope)?;
    let mut delays = DelayStreams::new(cfg.delay.clone(), n, cfg.seed);
    let mut snapshots: Vec<WorkerSnapshot> =
        (0..n).map(|i| WorkerSnapshot::capture(&state, i, delays.next(i))).collect();
    let mut phi_init: Option<PhiInit> = None;
    let mut stats = RunStats::default();

    for _ in 0..cfg.max_iters {
        let t = state.t;
        let next_t = t + 1;
        let completion: Vec<f64> = snapshots.iter().map(|s| s.completion).collect();
        let (active, now) = match mode {
            Mode::Async => {
                let t_hat: Vec<usize> = snapshots.iter().map(|s| s.t_hat).collect();
                select_active(&completion, cfg.active_workers, cfg.tau, &t_hat, next_t)
            }
            Mode::Sync => ((0..n).collect(), completion.iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        };

        let mut updates = Vec::with_capacity(active.len());
        for &i in &active {
            let (x, y) =
                worker_step(problem, i, &snapshots[i], &state.x[i], &state.y[i], &cfg.steps, &polytope, cfg.local_steps)
                    .map_err(|e| match e {
                        Error::Divergence(m) => Error::Divergence(format!("{m} at t = {next_t}")),
                        other => other,
                    })?;
            updates.push(WorkerUpdate { worker: i, x, y });
        }
        let lambda_prev = state.lambda.clone();
        master_step(&mut state, &updates, &polytope, problem, &cfg.steps, &cfg.schedule, &cfg.bounds)?;
        for &i in &active {
            snapshots[i] = WorkerSnapshot::capture(&state, i, now + delays.next(i));
        }

        if maintenance_due(t, cfg.k_pre, cfg.t1) {
            let warm = if cfg.lower.warm_start { phi_init.as_ref() } else { None };
            let (m, next_init) =
                plane_maintenance(&mut state, &lambda_prev, &mut polytope, problem, &cfg.lower, cfg.epsilon, warm)?;
            phi_init = Some(next_init);
            stats.maintenance_events += 1;
            stats.planes_dropped += m.dropped;
            if m.outcome.added() {
                stats.planes_added += 1;
            }
            debug!("t = {next_t}: maintenance h = {:.3e}, dropped {}, {:?}", m.h, m.dropped, m.outcome);
            for snap in &mut snapshots {
                snap.lambda.clone_from(&state.lambda);
            }
        }

        for (i, snap) in snapshots.iter().enumerate() {
            let staleness = next_t - snap.t_hat;
            stats.max_staleness = stats.max_staleness.max(staleness);
            if mode == Mode::Async && staleness > cfg.tau {
                return Err(Error::Staleness { worker: i, staleness, tau: cfg.tau, t: next_t });
            }
        }

        let warm = if cfg.lower.warm_start { phi_init.as_ref() } else { None };
        let h = h_eval(problem, &state.v, &state.y, &state.z, &cfg.lower, warm)?.value;
        let gap_sq = stationarity_gap_sq(&state, &polytope, problem)?;
        let row = TraceRow {
            t: next_t,
            vtime: now,
            upper: upper_sum(problem, &state.x, &state.y)?,
            h,
            gap_sq,
            planes: polytope.len(),
            c1: cfg.schedule.c1(t),
            active,
        };
        if !(row.upper.is_finite() && row.h.is_finite() && row.gap_sq.is_finite()) {
            return Err(Error::Divergence(format!("non-finite observables at t = {next_t}")));
        }
        trace.push(row);
        if gap_sq <= cfg.gap_threshold {
            stats.converged = true;
            break;
        }
    }
    Ok((state, polytope, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutplane::CuttingPlane;
    use crate::problems::{make_quadratic_toy, QuadraticToy};

    #[test]
    fn active_set_is_order_statistics() {
        let (q, now) = select_active(&[3.0, 1.0, 2.0, 5.0], 2, 15, &[0; 4], 1);
        assert_eq!(q, vec![1, 2]);
        assert_eq!(now, 2.0);
    }

    #[test]
    fn near_stale_worker_is_forced_in() {
        // τ = 5, worker 3 last consumed at t̂ = 1, next iteration is 6.
        let (q, now) = select_active(&[3.0, 1.0, 2.0, 50.0], 2, 5, &[5, 5, 5, 1], 6);
        assert!(q.contains(&3));
        assert_eq!(now, 50.0);
        assert_eq!(q, vec![0, 1, 2, 3]);
    }

    #[test]
    fn all_workers_when_s_equals_n() {
        let (q, _) = select_active(&[3.0, 1.0, 2.0, 5.0], 4, 15, &[0; 4], 1);
        assert_eq!(q, vec![0, 1, 2, 3]);
    }

    fn toy() -> QuadraticToy {
        make_quadratic_toy(1, 1, &[vec![1.0], vec![2.0]], &[vec![0.0], vec![0.0]], &[1.0, 2.0]).unwrap()
    }

    fn snap(theta: f64, lambda: Vec<f64>) -> WorkerSnapshot {
        WorkerSnapshot { t_hat: 0, v: vec![0.0], z: vec![0.0], lambda, theta: vec![theta], completion: 0.0 }
    }

    #[test]
    fn worker_at_minimizer_stays_put() {
        let p = toy();
        let poly = Polytope::new(2).unwrap();
        let (x, y) = worker_step(&p, 1, &snap(0.0, vec![]), &[2.0], &[0.0], &StepSizes::uniform(0.1), &poly, 1).unwrap();
        assert_eq!((x, y), (vec![2.0], vec![0.0]));
    }

    #[test]
    fn worker_step_hand_value() {
        // ∇_x G = 2(0 − (−1)) = 2, θ̂ = 1, η_x = 0.1 → x' = −0.3
        let p = make_quadratic_toy(1, 1, &[vec![-1.0]], &[vec![0.0]], &[1.0]).unwrap();
        let poly = Polytope::new(2).unwrap();
        let (x, _) = worker_step(&p, 0, &snap(1.0, vec![]), &[0.0], &[0.0], &StepSizes::uniform(0.1), &poly, 1).unwrap();
        assert!((x[0] + 0.3).abs() < 1e-15);
    }

    #[test]
    fn fresh_snapshot_matches_synchronous_gradient() {
        let p = toy();
        let mut poly = Polytope::new(2).unwrap();
        poly.push(CuttingPlane { a: vec![1.0], b: vec![vec![0.5], vec![-1.5]], c: vec![0.2], kappa: -1.0 }).unwrap();
        let mut state = PrimalDualState::zeros(p.dims());
        state.x = vec![vec![0.3], vec![-0.2]];
        state.y = vec![vec![1.0], vec![0.4]];
        state.lambda = vec![0.7];
        state.theta = vec![vec![0.1], vec![-0.6]];
        let steps = StepSizes::uniform(0.05);
        let s = WorkerSnapshot::capture(&state, 1, 0.0);
        let (x, y) = worker_step(&p, 1, &s, &state.x[1], &state.y[1], &steps, &poly, 1).unwrap();
        let sched = RegSchedule::new(&steps);
        let gx = crate::saddle::grad_block(crate::saddle::Block::X(1), &state, &poly, &p, &sched).unwrap();
        let gy = crate::saddle::grad_block(crate::saddle::Block::Y(1), &state, &poly, &p, &sched).unwrap();
        assert_eq!(x, vec![state.x[1][0] - 0.05 * gx[0]]);
        assert_eq!(y, vec![state.y[1][0] - 0.05 * gy[0]]);
    }

    #[test]
    fn master_step_is_still_at_consensus() {
        let p = toy();
        let poly = Polytope::new(2).unwrap();
        let mut state = PrimalDualState::zeros(p.dims());
        state.x = vec![vec![0.5], vec![0.5]];
        state.v = vec![0.5];
        let before = state.clone();
        let upd: Vec<WorkerUpdate> =
            (0..2).map(|i| WorkerUpdate { worker: i, x: state.x[i].clone(), y: state.y[i].clone() }).collect();
        let steps = StepSizes::uniform(0.1);
        master_step(&mut state, &upd, &poly, &p, &steps, &RegSchedule::new(&steps), &DualBounds::default()).unwrap();
        assert_eq!(state.v, before.v);
        assert_eq!(state.z, before.z);
        assert_eq!(state.theta, before.theta);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn master_dual_ascent_hand_value() {
        let p = make_quadratic_toy(1, 1, &[vec![0.0]], &[vec![0.0]], &[1.0]).unwrap();
        let mut poly = Polytope::new(2).unwrap();
        poly.push(CuttingPlane { a: vec![1.0], b: vec![vec![0.0]], c: vec![0.0], kappa: -1.0 }).unwrap();
        let mut state = PrimalDualState::zeros(p.dims());
        state.v = vec![2.0];
        state.x = vec![vec![2.0]];
        state.lambda = vec![0.0];
        let steps = StepSizes { eta_lambda: 0.1, ..StepSizes::uniform(0.1) };
        let sched = RegSchedule { eta_lambda: 0.1, eta_theta: 0.1, floor_c1: 0.0, floor_c2: 0.0 };
        assert_eq!(sched.c1(0), 10.0);
        let upd = vec![WorkerUpdate { worker: 0, x: vec![2.0], y: vec![0.0] }];
        master_step(&mut state, &upd, &poly, &p, &steps, &sched, &DualBounds::default()).unwrap();
        assert!((state.lambda[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn inactive_theta_is_untouched() {
        let p = toy();
        let poly = Polytope::new(2).unwrap();
        let mut state = PrimalDualState::zeros(p.dims());
        state.x = vec![vec![3.0], vec![-2.0]];
        state.theta = vec![vec![0.25], vec![0.5]];
        let steps = StepSizes::uniform(0.1);
        let upd = vec![WorkerUpdate { worker: 0, x: vec![3.0], y: vec![0.0] }];
        master_step(&mut state, &upd, &poly, &p, &steps, &RegSchedule::new(&steps), &DualBounds::default()).unwrap();
        assert_eq!(state.theta[1], vec![0.5]);
        assert_ne!(state.theta[0], vec![0.25]);
    }

    #[test]
    fn maintenance_guard() {
        assert!(maintenance_due(9, 10, 500));
        assert!(!maintenance_due(8, 10, 500));
        assert!(!maintenance_due(509, 10, 500));
    }

    #[test]
    fn maintenance_adds_a_cut_at_violated_point() {
        let p = toy();
        let mut state = PrimalDualState::zeros(p.dims());
        state.v = vec![1.0];
        let lower = LowerConfig { eta_y: 0.5, ..LowerConfig::default() };
        let mut poly = Polytope::new(4).unwrap();
        let (m, _) = plane_maintenance(&mut state, &[], &mut poly, &p, &lower, 0.1, None).unwrap();
        assert_eq!(m.h, 5.0);
        assert_eq!(m.outcome, AddOutcome::Added);
        assert_eq!(state.lambda, vec![0.0]);
        assert_eq!(poly.planes()[0].kappa, -5.1);
    }

    #[test]
    fn maintenance_is_noop_when_feasible_and_active() {
        let p = toy();
        let lower = LowerConfig { eta_y: 0.5, ..LowerConfig::default() };
        let mut state = PrimalDualState::zeros(p.dims());
        state.v = vec![1.0];
        state.y = vec![vec![1.0], vec![2.0]];
        let mut poly = Polytope::new(4).unwrap();
        poly.push(CuttingPlane { a: vec![1.0], b: vec![vec![0.0], vec![0.0]], c: vec![0.0], kappa: -3.0 }).unwrap();
        state.lambda = vec![0.4];
        let before = poly.clone();
        let (m, _) = plane_maintenance(&mut state, &[0.3], &mut poly, &p, &lower, 0.1, None).unwrap();
        assert_eq!(m.outcome, AddOutcome::Feasible);
        assert_eq!(m.dropped, 0);
        assert_eq!(poly, before);
        assert_eq!(state.lambda, vec![0.4]);
    }

    fn quick_cfg(n: usize) -> RunConfig {
        let steps = StepSizes::uniform(0.1);
        RunConfig {
            active_workers: n,
            tau: 5,
            steps,
            schedule: RegSchedule::new(&steps),
            delay: DelayModel::constant(1.0),
            max_iters: 50,
            ..RunConfig::default()
        }
    }

    #[test]
    fn sdbo_iteration_time_is_slowest_worker() {
        let p = toy();
        let mut cfg = quick_cfg(2);
        cfg.delay = DelayModel::constant(1.0).with_stragglers(2, &[1], 4.0);
        cfg.max_iters = 3;
        cfg.gap_threshold = 0.0;
        let out = run_sdbo(&p, &cfg, None).unwrap();
        let times: Vec<f64> = out.trace.iter().map(|r| r.vtime).collect();
        assert_eq!(times, vec![4.0, 8.0, 12.0]);
    }

    #[test]
    fn sync_equals_async_with_all_workers() {
        let p = toy();
        let cfg = quick_cfg(2);
        let a = run_adbo(&p, &cfg, None).unwrap();
        let s = run_sdbo(&p, &cfg, None).unwrap();
        assert_eq!(trace_to_string(&a.trace), trace_to_string(&s.trace));
    }

    #[test]
    fn invalid_config_reports_config_error() {
        let p = toy();
        let mut cfg = quick_cfg(2);
        cfg.active_workers = 0;
        let err = run_adbo(&p, &cfg, None).unwrap_err();
        assert!(matches!(err.error, Error::Config(_)));
        assert!(err.partial.is_empty());
    }

    #[test]
    fn divergence_keeps_partial_trace() {
        let p = toy();
        let mut cfg = quick_cfg(2);
        cfg.steps = StepSizes { eta_x: 1.5, eta_y: 1.5, ..StepSizes::uniform(0.1) };
        cfg.max_iters = 5000;
        cfg.gap_threshold = 0.0;
        let err = run_adbo(&p, &cfg, None).unwrap_err();
        assert!(matches!(err.error, Error::Divergence(_)), "{err}");
        assert!(!err.partial.is_empty());
        assert!(err.to_string().contains("last finite row"));
    }
}
