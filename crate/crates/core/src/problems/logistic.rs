//! Logistic-regression hyperparameter problems: data hyper-cleaning and
//! regularization-coefficient optimization.

use std::collections::HashMap;

use super::{BilevelProblem, Dataset, ProblemDims, Split};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm_sq};

pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-label * score))` for `label ∈ {−1, +1}`.
pub fn logistic_loss(score: f64, label: f64) -> f64 {
    let t = -label * score;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// d/d(score) of [`logistic_loss`].
fn logistic_dloss(score: f64, label: f64) -> f64 {
    -label * sigmoid(-label * score)
}

/// One worker's samples with labels mapped to ±1.
#[derive(Debug, Clone)]
struct Shard {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<f64>,
    train_ids: Vec<usize>,
    val_x: Vec<Vec<f64>>,
    val_y: Vec<f64>,
}

impl Shard {
    fn from_dataset(worker: usize, ds: &Dataset) -> Result<Self> {
        let to_pm = binary_map(ds)?;
        let train = ds.indices_of(Split::Train);
        let val = ds.indices_of(Split::Validation);
        if train.is_empty() || val.is_empty() {
            return Err(Error::Config(format!(
                "worker {worker} needs non-empty train and validation shards (train={}, val={})",
                train.len(),
                val.len()
            )));
        }
        Ok(Self {
            train_x: train.iter().map(|&k| ds.features[k].clone()).collect(),
            train_y: train.iter().map(|&k| to_pm(ds.labels[k])).collect(),
            train_ids: train.iter().map(|&k| ds.ids[k]).collect(),
            val_x: val.iter().map(|&k| ds.features[k].clone()).collect(),
            val_y: val.iter().map(|&k| to_pm(ds.labels[k])).collect(),
        })
    }

    fn val_loss(&self, w: &[f64]) -> f64 {
        let total: f64 = self.val_x.iter().zip(&self.val_y).map(|(x, &l)| logistic_loss(dot(x, w), l)).sum();
        total / self.val_x.len() as f64
    }

    fn val_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; w.len()];
        let scale = 1.0 / self.val_x.len() as f64;
        for (x, &l) in self.val_x.iter().zip(&self.val_y) {
            axpy(scale * logistic_dloss(dot(x, w), l), x, &mut g);
        }
        g
    }
}

/// Maps a two-class label set onto ±1 (smaller class → −1).
fn binary_map(ds: &Dataset) -> Result<impl Fn(i64) -> f64> {
    match ds.classes.as_slice() {
        [neg, pos] => {
            let (neg, pos) = (*neg, *pos);
            Ok(move |l: i64| if l == pos { 1.0 } else if l == neg { -1.0 } else { f64::NAN })
        }
        other => Err(Error::Config(format!("binary logistic loss needs exactly two classes, got {other:?}"))),
    }
}

fn shards_from(data: &[Dataset]) -> Result<Vec<Shard>> {
    if data.is_empty() {
        return Err(Error::Config("no worker shards".into()));
    }
    let dim = data[0].dim();
    data.iter()
        .enumerate()
        .map(|(i, ds)| {
            if ds.dim() != dim {
                return Err(Error::Config(format!("shard {i} has feature dim {}, expected {dim}", ds.dim())));
            }
            Shard::from_dataset(i, ds)
        })
        .collect()
}

/// Distributed data hyper-cleaning.
///
/// The upper variable `v` holds one weight logit `ψ_j` per training sample,
/// concatenated over workers; worker `i` reads only its own slice. The lower
/// variable is the linear model `w`.
#[derive(Debug, Clone)]
pub struct HyperCleaning {
    dims: ProblemDims,
    shards: Vec<Shard>,
    offsets: Vec<usize>,
    reg: f64,
    psi_of_id: HashMap<usize, usize>,
}

pub fn make_hypercleaning(shards: &[Dataset], reg: f64) -> Result<HyperCleaning> {
    if !(reg >= 0.0) {
        return Err(Error::Config(format!("C_r must be non-negative, got {reg}")));
    }
    let shards = shards_from(shards)?;
    let mut offsets = Vec::with_capacity(shards.len());
    let mut psi_of_id = HashMap::new();
    let mut total = 0;
    for s in &shards {
        offsets.push(total);
        for (j, id) in s.train_ids.iter().enumerate() {
            psi_of_id.insert(*id, total + j);
        }
        total += s.train_x.len();
    }
    let dim = shards[0].train_x[0].len();
    let dims = ProblemDims::new(shards.len(), total, dim)?;
    Ok(HyperCleaning { dims, shards, offsets, reg, psi_of_id })
}

impl HyperCleaning {
    /// Position in `v` of the training sample with the given dataset id.
    pub fn psi_index_of(&self, id: usize) -> Option<usize> {
        self.psi_of_id.get(&id).copied()
    }

    fn slice<'a>(&self, i: usize, v: &'a [f64]) -> &'a [f64] {
        let start = self.offsets[i];
        &v[start..start + self.shards[i].train_x.len()]
    }
}

impl BilevelProblem for HyperCleaning {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn upper_value(&self, i: usize, _x: &[f64], y: &[f64]) -> f64 {
        self.shards[i].val_loss(y)
    }

    fn upper_grad_x(&self, _i: usize, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn upper_grad_y(&self, i: usize, _x: &[f64], y: &[f64]) -> Vec<f64> {
        self.shards[i].val_grad(y)
    }

    fn lower_value(&self, i: usize, v: &[f64], y: &[f64]) -> f64 {
        let s = &self.shards[i];
        let psi = self.slice(i, v);
        let data: f64 = s
            .train_x
            .iter()
            .zip(&s.train_y)
            .zip(psi)
            .map(|((x, &l), &p)| sigmoid(p) * logistic_loss(dot(x, y), l))
            .sum();
        data / s.train_x.len() as f64 + self.reg * norm_sq(y)
    }

    fn lower_grad_v(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        let s = &self.shards[i];
        let scale = 1.0 / s.train_x.len() as f64;
        let mut g = vec![0.0; v.len()];
        let start = self.offsets[i];
        for (j, ((x, &l), &p)) in s.train_x.iter().zip(&s.train_y).zip(self.slice(i, v)).enumerate() {
            let sg = sigmoid(p);
            g[start + j] = scale * sg * (1.0 - sg) * logistic_loss(dot(x, y), l);
        }
        g
    }

    fn lower_grad_y(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        let s = &self.shards[i];
        let scale = 1.0 / s.train_x.len() as f64;
        let mut g: Vec<f64> = y.iter().map(|w| 2.0 * self.reg * w).collect();
        for ((x, &l), &p) in s.train_x.iter().zip(&s.train_y).zip(self.slice(i, v)) {
            axpy(scale * sigmoid(p) * logistic_dloss(dot(x, y), l), x, &mut g);
        }
        g
    }

    fn mixed_jvp(&self, i: usize, v: &[f64], y: &[f64], dv: &[f64]) -> Vec<f64> {
        let s = &self.shards[i];
        let scale = 1.0 / s.train_x.len() as f64;
        let mut g = vec![0.0; y.len()];
        let dpsi = self.slice(i, dv);
        for (((x, &l), &p), &d) in s.train_x.iter().zip(&s.train_y).zip(self.slice(i, v)).zip(dpsi) {
            if d == 0.0 {
                continue;
            }
            let sg = sigmoid(p);
            axpy(scale * sg * (1.0 - sg) * d * logistic_dloss(dot(x, y), l), x, &mut g);
        }
        g
    }

    fn mixed_vjp(&self, i: usize, v: &[f64], y: &[f64], r: &[f64]) -> Vec<f64> {
        let s = &self.shards[i];
        let scale = 1.0 / s.train_x.len() as f64;
        let mut out = vec![0.0; v.len()];
        let start = self.offsets[i];
        for (j, ((x, &l), &p)) in s.train_x.iter().zip(&s.train_y).zip(self.slice(i, v)).enumerate() {
            let sg = sigmoid(p);
            out[start + j] = scale * sg * (1.0 - sg) * logistic_dloss(dot(x, y), l) * dot(x, r);
        }
        out
    }
}

/// Distributed regularization-coefficient optimization: one non-negative
/// penalty weight `ψ_j` per model coordinate.
#[derive(Debug, Clone)]
pub struct RegCoef {
    dims: ProblemDims,
    shards: Vec<Shard>,
}

pub fn make_regcoef(shards: &[Dataset]) -> Result<RegCoef> {
    let shards = shards_from(shards)?;
    let dim = shards[0].train_x[0].len();
    let dims = ProblemDims::new(shards.len(), dim, dim)?;
    Ok(RegCoef { dims, shards })
}

impl BilevelProblem for RegCoef {
    fn dims(&self) -> ProblemDims {
        self.dims
    }

    fn upper_value(&self, i: usize, _x: &[f64], y: &[f64]) -> f64 {
        self.shards[i].val_loss(y)
    }

    fn upper_grad_x(&self, _i: usize, x: &[f64], _y: &[f64]) -> Vec<f64> {
        vec![0.0; x.len()]
    }

    fn upper_grad_y(&self, i: usize, _x: &[f64], y: &[f64]) -> Vec<f64> {
        self.shards[i].val_grad(y)
    }

    fn lower_value(&self, i: usize, v: &[f64], y: &[f64]) -> f64 {
        let s = &self.shards[i];
        let data: f64 = s.train_x.iter().zip(&s.train_y).map(|(x, &l)| logistic_loss(dot(x, y), l)).sum();
        let penalty: f64 = v.iter().zip(y).map(|(p, w)| p * w * w).sum();
        data / s.train_x.len() as f64 + penalty
    }

    fn lower_grad_v(&self, _i: usize, _v: &[f64], y: &[f64]) -> Vec<f64> {
        y.iter().map(|w| w * w).collect()
    }

    fn lower_grad_y(&self, i: usize, v: &[f64], y: &[f64]) -> Vec<f64> {
        let s = &self.shards[i];
        let scale = 1.0 / s.train_x.len() as f64;
        let mut g: Vec<f64> = v.iter().zip(y).map(|(p, w)| 2.0 * p * w).collect();
        for (x, &l) in s.train_x.iter().zip(&s.train_y) {
            axpy(scale * logistic_dloss(dot(x, y), l), x, &mut g);
        }
        g
    }

    fn mixed_jvp(&self, _i: usize, _v: &[f64], y: &[f64], dv: &[f64]) -> Vec<f64> {
        y.iter().zip(dv).map(|(w, d)| 2.0 * w * d).collect()
    }

    fn mixed_vjp(&self, _i: usize, _v: &[f64], y: &[f64], r: &[f64]) -> Vec<f64> {
        y.iter().zip(r).map(|(w, d)| 2.0 * w * d).collect()
    }
}
