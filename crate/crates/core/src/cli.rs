//! Experiment front end: JSON configuration, problem construction, runs
//! with trace output, and time-to-target comparison of two traces.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use crate::cpbo::{run_cpbo, CpboConfig, CpboSteps};
use crate::engine::{read_trace_csv, run_adbo, run_sdbo, write_trace_csv, DelayModel, RunConfig, TraceRow};
use crate::error::{Error, Result};
use crate::lower_level::{phi_estimate, LowerConfig};
use crate::problems::{
    corrupt_labels, load_dataset, make_hypercleaning, make_quadratic_toy, make_regcoef, partition_dataset,
    synthetic_classification, BilevelProblem, Dataset, DatasetFormat, LoadOptions, Split,
};
use crate::saddle::{DualBounds, RegSchedule, StepSizes};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Adbo,
    Sdbo,
    Cpbo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    ToyQuadratic,
    Hypercleaning,
    Regcoef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Libsvm,
}

macro_rules! default_fn {
    ($($name:ident: $ty:ty = $val:expr;)*) => {
        $(fn $name() -> $ty { $val })*
    };
}

default_fn! {
    def_s: usize = 9;
    def_tau: usize = 15;
    def_k: usize = 1;
    def_one: f64 = 1.0;
    def_lower_eta: f64 = 0.1;
    def_k_pre: usize = 10;
    def_t1: usize = 500;
    def_m: usize = 50;
    def_eps: f64 = 0.1;
    def_eta_x: f64 = 0.001;
    def_eta_y: f64 = 0.02;
    def_eta_v: f64 = 0.001;
    def_eta_z: f64 = 0.02;
    def_eta_lambda: f64 = 0.1;
    def_eta_theta: f64 = 0.001;
    def_floor: f64 = 1e-6;
    def_dual_max: f64 = 1e3;
    def_delay_mu: f64 = 3.5;
    def_straggler_mult: f64 = 4.0;
    def_max_iters: usize = 100_000;
    def_gap: f64 = 1e-3;
    def_val_fraction: f64 = 0.2;
    def_reg: f64 = 1e-3;
    def_out: PathBuf = PathBuf::from("trace.csv");
}

/// One experiment. Keys are flat and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub problem: ProblemKind,

    /// Worker count; 18 by default, 1 for CPBO.
    #[serde(rename = "N", default)]
    pub workers: Option<usize>,
    #[serde(rename = "S", default = "def_s")]
    pub active_workers: usize,
    #[serde(default = "def_tau")]
    pub tau: usize,
    #[serde(default)]
    pub seed: u64,

    #[serde(rename = "K", default = "def_k")]
    pub lower_rounds: usize,
    #[serde(default = "def_one")]
    pub mu: f64,
    #[serde(default = "def_lower_eta")]
    pub eta_y_lower: f64,
    #[serde(default = "def_lower_eta")]
    pub eta_z_lower: f64,
    #[serde(default = "def_lower_eta")]
    pub eta_phi: f64,
    #[serde(default)]
    pub warm_start: bool,

    #[serde(default = "def_k_pre")]
    pub k_pre: usize,
    #[serde(rename = "T1", default = "def_t1")]
    pub t1: usize,
    #[serde(rename = "M", default = "def_m")]
    pub max_planes: usize,
    #[serde(default = "def_eps")]
    pub epsilon: f64,

    #[serde(default = "def_eta_x")]
    pub eta_x: f64,
    #[serde(default = "def_eta_y")]
    pub eta_y: f64,
    #[serde(default = "def_eta_v")]
    pub eta_v: f64,
    #[serde(default = "def_eta_z")]
    pub eta_z: f64,
    #[serde(default = "def_eta_lambda")]
    pub eta_lambda: f64,
    #[serde(default = "def_eta_theta")]
    pub eta_theta: f64,
    #[serde(default = "def_floor")]
    pub floor_c1: f64,
    #[serde(default = "def_floor")]
    pub floor_c2: f64,
    #[serde(default = "def_dual_max")]
    pub lambda_max: f64,
    #[serde(default = "def_dual_max")]
    pub theta_max: f64,

    #[serde(default = "def_delay_mu")]
    pub delay_mu_log: f64,
    #[serde(default = "def_one")]
    pub delay_sigma_log: f64,
    #[serde(default)]
    pub stragglers: Vec<usize>,
    #[serde(default = "def_straggler_mult")]
    pub straggler_multiplier: f64,

    #[serde(default = "def_max_iters")]
    pub max_iters: usize,
    #[serde(default = "def_gap")]
    pub gap_threshold: f64,
    #[serde(default = "def_k")]
    pub local_steps: usize,

    /// Toy dimensions and coefficients; `a` defaults to ones, `c` to ones,
    /// and `b` to the lower-level estimate at `v = a` so that the upper
    /// optimum is feasible.
    #[serde(default = "def_k")]
    pub toy_upper_dim: usize,
    #[serde(default = "def_k")]
    pub toy_lower_dim: usize,
    #[serde(default)]
    pub toy_a: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub toy_b: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub toy_c: Option<Vec<f64>>,

    #[serde(default)]
    pub dataset_path: Option<PathBuf>,
    #[serde(default)]
    pub dataset_format: Option<DataFormat>,
    #[serde(default)]
    pub csv_header: bool,
    #[serde(default)]
    pub synthetic_samples: Option<usize>,
    #[serde(default)]
    pub synthetic_features: Option<usize>,
    #[serde(default = "def_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub corruption_rate: f64,
    /// `C_r` of the hyper-cleaning lower objective.
    #[serde(default = "def_reg")]
    pub reg: f64,

    #[serde(default = "def_out")]
    pub out: PathBuf,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn workers(&self) -> usize {
        self.workers.unwrap_or(if self.algorithm == Algorithm::Cpbo { 1 } else { 18 })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = self.workers();
        if n == 0 {
            return bad("N must be >= 1".into());
        }
        if self.algorithm == Algorithm::Cpbo && n != 1 {
            return bad(format!("cpbo runs on one machine; N must be 1, got {n}"));
        }
        if self.algorithm == Algorithm::Adbo && !(1..=n).contains(&self.active_workers) {
            return bad(format!("S must satisfy 1 <= S <= N = {n}, got {}", self.active_workers));
        }
        if let Some(&w) = self.stragglers.iter().find(|&&w| w >= n) {
            return bad(format!("straggler index {w} out of range for N = {n}"));
        }
        if !(self.straggler_multiplier > 0.0) {
            return bad(format!("straggler_multiplier must be positive, got {}", self.straggler_multiplier));
        }
        let has_path = self.dataset_path.is_some();
        let has_synth = self.synthetic_samples.is_some();
        match self.problem {
            ProblemKind::ToyQuadratic => {
                if has_path || has_synth {
                    return bad("toy_quadratic takes no dataset_path or synthetic_samples".into());
                }
            }
            ProblemKind::Hypercleaning | ProblemKind::Regcoef => {
                if has_path == has_synth {
                    return bad("exactly one of dataset_path and synthetic_samples is required".into());
                }
                if has_path && self.dataset_format.is_none() {
                    return bad("dataset_format is required with dataset_path".into());
                }
                if has_synth && self.synthetic_features.is_none() {
                    return bad("synthetic_features is required with synthetic_samples".into());
                }
                if !(0.0..=1.0).contains(&self.corruption_rate) {
                    return bad(format!("corruption_rate must lie in [0, 1], got {}", self.corruption_rate));
                }
            }
        }
        match self.algorithm {
            Algorithm::Cpbo => self.cpbo_config().validate(),
            _ => self.run_config().validate(n),
        }
    }

    pub fn lower_config(&self) -> LowerConfig {
        LowerConfig {
            rounds: self.lower_rounds,
            mu: self.mu,
            eta_y: self.eta_y_lower,
            eta_z: self.eta_z_lower,
            eta_phi: self.eta_phi,
            warm_start: self.warm_start,
        }
    }

    pub fn run_config(&self) -> RunConfig {
        let n = self.workers();
        let steps = StepSizes {
            eta_x: self.eta_x,
            eta_y: self.eta_y,
            eta_v: self.eta_v,
            eta_z: self.eta_z,
            eta_lambda: self.eta_lambda,
            eta_theta: self.eta_theta,
        };
        let delay = DelayModel { mu_log: self.delay_mu_log, sigma_log: self.delay_sigma_log, multipliers: vec![] };
        let delay =
            if self.stragglers.is_empty() { delay } else { delay.with_stragglers(n, &self.stragglers, self.straggler_multiplier) };
        RunConfig {
            active_workers: if self.algorithm == Algorithm::Sdbo { n } else { self.active_workers },
            tau: self.tau,
            lower: self.lower_config(),
            k_pre: self.k_pre,
            t1: self.t1,
            max_planes: self.max_planes,
            epsilon: self.epsilon,
            steps,
            schedule: RegSchedule { floor_c1: self.floor_c1, floor_c2: self.floor_c2, ..RegSchedule::new(&steps) },
            bounds: DualBounds { lambda_max: self.lambda_max, theta_max: self.theta_max },
            delay,
            max_iters: self.max_iters,
            gap_threshold: self.gap_threshold,
            seed: self.seed,
            local_steps: self.local_steps,
        }
    }

    pub fn cpbo_config(&self) -> CpboConfig {
        CpboConfig {
            rounds: self.lower_rounds,
            eta_lower: self.eta_y_lower,
            steps: CpboSteps { eta_x: self.eta_x, eta_y: self.eta_y, eta_lambda: self.eta_lambda },
            t1: self.t1,
            k_pre: self.k_pre,
            max_planes: self.max_planes,
            epsilon: self.epsilon,
            lambda_max: self.lambda_max,
            max_iters: self.max_iters,
            gap_threshold: self.gap_threshold,
        }
    }
}

/// Reads and validates a config file, then applies command-line overrides.
pub fn parse_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out.clone_from(out);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = match (&cfg.dataset_path, cfg.synthetic_samples) {
        (Some(path), _) => {
            let format = match cfg.dataset_format {
                Some(DataFormat::Libsvm) => DatasetFormat::Libsvm,
                _ => DatasetFormat::Csv,
            };
            let mut ds = load_dataset(path, format, LoadOptions { csv_header: cfg.csv_header })?;
            ds.assign_validation(cfg.val_fraction, cfg.seed)?;
            ds
        }
        (None, Some(samples)) => {
            synthetic_classification(samples, cfg.synthetic_features.unwrap_or(1), cfg.val_fraction, cfg.seed)?
        }
        (None, None) => return Err(Error::Config("no dataset source".into())),
    };
    if ds.indices_of(Split::Train).is_empty() {
        return Err(Error::Config("dataset has no training samples".into()));
    }
    if cfg.corruption_rate > 0.0 {
        let (ds, record) = corrupt_labels(&ds, cfg.corruption_rate, cfg.seed)?;
        info!("corrupted {} training labels", record.corrupted.len());
        return Ok(ds);
    }
    Ok(ds)
}

/// Builds the configured problem.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Box<dyn BilevelProblem>> {
    let n = cfg.workers();
    match cfg.problem {
        ProblemKind::ToyQuadratic => {
            let (nu, m) = (cfg.toy_upper_dim, cfg.toy_lower_dim);
            let a = cfg.toy_a.clone().unwrap_or_else(|| vec![vec![1.0; nu]; n]);
            let c = cfg.toy_c.clone().unwrap_or_else(|| vec![1.0; n]);
            let b = match &cfg.toy_b {
                Some(b) => b.clone(),
                None => {
                    let probe = make_quadratic_toy(nu, m, &a, &vec![vec![0.0; m]; a.len()], &c)?;
                    let mut anchor = vec![0.0; nu];
                    for ai in &a {
                        crate::linalg::axpy(1.0 / a.len() as f64, ai, &mut anchor);
                    }
                    phi_estimate(&probe, &anchor, &cfg.lower_config(), None)?.y
                }
            };
            if a.len() != n {
                return Err(Error::Config(format!("toy_a lists {} workers, N = {n}", a.len())));
            }
            Ok(Box::new(make_quadratic_toy(nu, m, &a, &b, &c)?))
        }
        ProblemKind::Hypercleaning => {
            let shards = partition_dataset(&load_data(cfg)?, n, cfg.seed)?;
            Ok(Box::new(make_hypercleaning(&shards, cfg.reg)?))
        }
        ProblemKind::Regcoef => {
            let shards = partition_dataset(&load_data(cfg)?, n, cfg.seed)?;
            Ok(Box::new(make_regcoef(&shards)?))
        }
    }
}

/// What a finished run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub iterations: usize,
    pub final_upper: f64,
    pub final_gap_sq: f64,
    pub vtime: f64,
    pub wall_secs: f64,
}

impl std::fmt::Display for RunSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "iterations={} F={:.6e} gap_sq={:.6e} vtime={:.3} wall={:.3}s",
            self.iterations, self.final_upper, self.final_gap_sq, self.vtime, self.wall_secs
        )
    }
}

/// A failed experiment and the process exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    /// Bad configuration, unreadable input or unwritable output (exit 2).
    #[error("{0}")]
    Setup(Error),
    /// The solver failed; the partial trace was written (exit 1).
    #[error("{error} ({rows} trace rows written)")]
    Solver { error: Error, rows: usize },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Setup(_) => 2,
            Self::Solver { .. } => 1,
        }
    }
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_trace_csv(rows, &mut out)?;
    std::io::Write::flush(&mut out)?;
    Ok(())
}

/// Runs the experiment and writes its trace to `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, ExperimentError> {
    cfg.validate().map_err(ExperimentError::Setup)?;
    let problem = build_problem(cfg).map_err(ExperimentError::Setup)?;
    let start = Instant::now();
    let result = match cfg.algorithm {
        Algorithm::Adbo => run_adbo(problem.as_ref(), &cfg.run_config(), None).map(|o| o.trace),
        Algorithm::Sdbo => run_sdbo(problem.as_ref(), &cfg.run_config(), None).map(|o| o.trace),
        Algorithm::Cpbo => run_cpbo(problem.as_ref(), &cfg.cpbo_config(), None).map(|o| o.trace),
    };
    let wall_secs = start.elapsed().as_secs_f64();
    match result {
        Ok(trace) => {
            write_trace(&cfg.out, &trace).map_err(ExperimentError::Setup)?;
            let last = trace.last();
            Ok(RunSummary {
                iterations: trace.len(),
                final_upper: last.map_or(f64::NAN, |r| r.upper),
                final_gap_sq: last.map_or(f64::NAN, |r| r.gap_sq),
                vtime: last.map_or(0.0, |r| r.vtime),
                wall_secs,
            })
        }
        Err(e) => {
            write_trace(&cfg.out, &e.partial).map_err(ExperimentError::Setup)?;
            let error = match e.error {
                Error::Config(_) | Error::Io(_) => return Err(ExperimentError::Setup(e.error)),
                other => other,
            };
            Err(ExperimentError::Solver { error, rows: e.partial.len() })
        }
    }
}

/// First virtual time at which each trace reaches `F ≤ target`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub target: f64,
    pub time_a: Option<f64>,
    pub time_b: Option<f64>,
}

impl CompareReport {
    /// `time_a / time_b`, when both traces reach the target.
    pub fn ratio(&self) -> Option<f64> {
        Some(self.time_a? / self.time_b?)
    }
}

impl std::fmt::Display for CompareReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let show = |t: Option<f64>| t.map_or("unreached".to_string(), |t| format!("{t:.6}"));
        write!(f, "target={} time_a={} time_b={}", self.target, show(self.time_a), show(self.time_b))?;
        match self.ratio() {
            Some(r) => write!(f, " ratio={r:.6}"),
            None => write!(f, " ratio=unavailable"),
        }
    }
}

pub fn time_to_target(rows: &[TraceRow], target: f64) -> Option<f64> {
    rows.iter().find(|r| r.upper <= target).map(|r| r.vtime)
}

pub fn compare_runs(a: &[TraceRow], b: &[TraceRow], target: f64) -> CompareReport {
    CompareReport { target, time_a: time_to_target(a, target), time_b: time_to_target(b, target) }
}

pub fn compare_files(a: &Path, b: &Path, target: f64) -> Result<CompareReport> {
    let a = read_trace_csv(File::open(a)?)?;
    let b = read_trace_csv(File::open(b)?)?;
    Ok(compare_runs(&a, &b, target))
}

/// Installs the logger, reading the level from `BILEVEL_LOG` (default `error`).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("BILEVEL_LOG", "error");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
