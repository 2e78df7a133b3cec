use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-normal per-dispatch delay, `multiplier_i · exp(N(μ_log, σ_log²))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayModel {
    pub mu_log: f64,
    pub sigma_log: f64,
    /// Per-worker scale; missing entries mean 1. Stragglers get values > 1.
    pub multipliers: Vec<f64>,
}

impl Default for DelayModel {
    /// `LN(3.5, 1)` with no stragglers.
    fn default() -> Self {
        Self { mu_log: 3.5, sigma_log: 1.0, multipliers: Vec::new() }
    }
}

impl DelayModel {
    pub fn constant(duration: f64) -> Self {
        Self { mu_log: duration.ln(), sigma_log: 0.0, multipliers: Vec::new() }
    }

    /// Marks `workers` as stragglers with the given delay multiplier.
    pub fn with_stragglers(mut self, n_workers: usize, workers: &[usize], multiplier: f64) -> Self {
        self.multipliers.resize(n_workers.max(self.multipliers.len()), 1.0);
        for &w in workers {
            if w < self.multipliers.len() {
                self.multipliers[w] = multiplier;
            }
        }
        self
    }

    pub fn multiplier(&self, worker: usize) -> f64 {
        self.multipliers.get(worker).copied().unwrap_or(1.0)
    }

    pub fn validate(&self, n_workers: usize) -> Result<()> {
        if !(self.sigma_log >= 0.0) || !self.mu_log.is_finite() || !self.sigma_log.is_finite() {
            return Err(Error::Config(format!(
                "delay parameters must be finite with sigma_log >= 0 (mu_log = {}, sigma_log = {})",
                self.mu_log, self.sigma_log
            )));
        }
        if self.multipliers.len() > n_workers {
            return Err(Error::Config(format!(
                "{} delay multipliers for {n_workers} workers",
                self.multipliers.len()
            )));
        }
        if let Some(m) = self.multipliers.iter().find(|m| !(**m > 0.0) || !m.is_finite()) {
            return Err(Error::Config(format!("delay multiplier must be positive, got {m}")));
        }
        Ok(())
    }
}

/// One delay draw for `worker`.
pub fn sample_delay<R: Rng + ?Sized>(model: &DelayModel, worker: usize, rng: &mut R) -> f64 {
    let noise: f64 = if model.sigma_log == 0.0 { 0.0 } else { rng.sample(StandardNormal) };
    model.multiplier(worker) * (model.mu_log + model.sigma_log * noise).exp()
}

/// Independent delay streams, one per worker, so that a worker's k-th draw
/// depends only on `(seed, worker, k)`.
#[derive(Debug, Clone)]
pub struct DelayStreams {
    model: DelayModel,
    rngs: Vec<ChaCha8Rng>,
}

impl DelayStreams {
    pub fn new(model: DelayModel, n_workers: usize, seed: u64) -> Self {
        let rngs = (0..n_workers)
            .map(|w| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(w as u64 + 1);
                rng
            })
            .collect();
        Self { model, rngs }
    }

    pub fn next(&mut self, worker: usize) -> f64 {
        sample_delay(&self.model, worker, &mut self.rngs[worker])
    }
}
