use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    Csv,
    Libsvm,
}

impl std::str::FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "libsvm" | "svmlight" => Ok(Self::Libsvm),
            other => Err(Error::Config(format!("unknown dataset format `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Skip the first CSV line.
    pub csv_header: bool,
}

/// Dense labelled samples with train/validation tags.
///
/// `ids` carries each sample's row index in the originating file so that
/// shards and corruption records can be related back to one another.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<i64>,
    pub splits: Vec<Split>,
    pub ids: Vec<usize>,
    /// Declared label set, sorted ascending.
    pub classes: Vec<i64>,
    dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<i64>, splits: Vec<Split>) -> Result<Self> {
        let classes: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        Self::with_classes(features, labels, splits, classes)
    }

    pub fn with_classes(
        features: Vec<Vec<f64>>,
        labels: Vec<i64>,
        splits: Vec<Split>,
        classes: Vec<i64>,
    ) -> Result<Self> {
        if features.len() != labels.len() || features.len() != splits.len() {
            return Err(Error::Shape(format!(
                "dataset columns differ: {} feature rows, {} labels, {} split tags",
                features.len(),
                labels.len(),
                splits.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if let Some(k) = features.iter().position(|f| f.len() != dim) {
            return Err(Error::Shape(format!("sample {k} has {} features, expected {dim}", features[k].len())));
        }
        if let Some(l) = labels.iter().find(|l| !classes.contains(l)) {
            return Err(Error::Config(format!("label {l} not in declared label set {classes:?}")));
        }
        let ids = (0..features.len()).collect();
        Ok(Self { features, labels, splits, ids, classes, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&k| self.splits[k] == split).collect()
    }

    /// Rows at `rows`, in that order, keeping ids and the label set.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&k| self.features[k].clone()).collect(),
            labels: rows.iter().map(|&k| self.labels[k]).collect(),
            splits: rows.iter().map(|&k| self.splits[k]).collect(),
            ids: rows.iter().map(|&k| self.ids[k]).collect(),
            classes: self.classes.clone(),
            dim: self.dim,
        }
    }

    /// Re-tags a seeded random `fraction` of samples as validation, the rest as train.
    pub fn assign_validation(&mut self, fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!("validation fraction {fraction} outside [0, 1]")));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_val = (fraction * self.len() as f64).round() as usize;
        for (rank, &k) in order.iter().enumerate() {
            self.splits[k] = if rank < n_val { Split::Validation } else { Split::Train };
        }
        Ok(())
    }
}

/// Which training labels were replaced, and under what draw.
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionRecord {
    /// Sample ids (see [`Dataset::ids`]) whose labels were changed.
    pub corrupted: BTreeSet<usize>,
    pub rate: f64,
    pub seed: u64,
}

pub fn load_dataset(path: &Path, format: DatasetFormat, opts: LoadOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let (features, labels) = match format {
        DatasetFormat::Csv => parse_csv(path, &text, opts.csv_header)?,
        DatasetFormat::Libsvm => parse_libsvm(path, &text)?,
    };
    if labels.is_empty() {
        return Err(Error::Format { path: path.into(), line: 0, msg: "no samples".into() });
    }
    let splits = vec![Split::Train; labels.len()];
    Dataset::new(features, labels, splits)
}

fn format_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_label(path: &Path, line: usize, tok: &str) -> Result<i64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| format_err(path, line, format!("bad label `{tok}`")))?;
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(format_err(path, line, format!("label `{tok}` is not an integer")));
    }
    Ok(v as i64)
}

fn parse_csv(path: &Path, text: &str, header: bool) -> Result<(Vec<Vec<f64>>, Vec<i64>)> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        if header && k == 0 {
            continue;
        }
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let label = parse_label(path, lineno, cells.next().unwrap_or_default())?;
        let row = cells
            .map(|c| c.trim().parse::<f64>().map_err(|_| format_err(path, lineno, format!("bad feature `{c}`"))))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format_err(path, lineno, format!("expected {w} features, found {}", row.len())))
            }
            _ => {}
        }
        labels.push(label);
        features.push(row);
    }
    Ok((features, labels))
}

fn parse_libsvm(path: &Path, text: &str) -> Result<(Vec<Vec<f64>>, Vec<i64>)> {
    let mut sparse = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.trim_end_matches('\r');
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let label = parse_label(path, lineno, toks.next().unwrap_or_default())?;
        let mut entries = Vec::new();
        for tok in toks {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| format_err(path, lineno, format!("expected idx:val, found `{tok}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| format_err(path, lineno, format!("bad index `{idx}`")))?;
            if idx == 0 {
                return Err(format_err(path, lineno, "feature indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| format_err(path, lineno, format!("bad value `{val}`")))?;
            dim = dim.max(idx);
            entries.push((idx - 1, val));
        }
        labels.push(label);
        sparse.push(entries);
    }
    let features = sparse
        .into_iter()
        .map(|entries| {
            let mut row = vec![0.0; dim];
            for (j, v) in entries {
                row[j] = v;
            }
            row
        })
        .collect();
    Ok((features, labels))
}

/// Splits `dataset` into `workers` disjoint shards.
///
/// Train and validation samples are shuffled separately and dealt
/// round-robin, so both the shard sizes and each shard's per-split counts
/// differ by at most one.
pub fn partition_dataset(dataset: &Dataset, workers: usize, seed: u64) -> Result<Vec<Dataset>> {
    if workers == 0 {
        return Err(Error::Config("cannot partition over zero workers".into()));
    }
    if workers > dataset.len() {
        return Err(Error::Config(format!(
            "{workers} workers but only {} samples",
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = dataset.indices_of(Split::Train);
    let mut val = dataset.indices_of(Split::Validation);
    train.shuffle(&mut rng);
    val.shuffle(&mut rng);
    let mut shards = vec![Vec::new(); workers];
    for (k, row) in train.into_iter().chain(val).enumerate() {
        shards[k % workers].push(row);
    }
    Ok(shards.iter().map(|rows| dataset.subset(rows)).collect())
}

/// Replaces each training label, with probability `rate`, by a label drawn
/// uniformly from the other classes. Validation labels are left untouched.
pub fn corrupt_labels(dataset: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, CorruptionRecord)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("corruption rate {rate} outside [0, 1]")));
    }
    let mut out = dataset.clone();
    let mut corrupted = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..out.len() {
        if out.splits[k] != Split::Train {
            continue;
        }
        let flip = rng.random::<f64>() < rate;
        if !flip {
            continue;
        }
        let others: Vec<i64> = out.classes.iter().copied().filter(|&c| c != out.labels[k]).collect();
        if others.is_empty() {
            continue;
        }
        out.labels[k] = others[rng.random_range(0..others.len())];
        corrupted.insert(out.ids[k]);
    }
    Ok((out, CorruptionRecord { corrupted, rate, seed }))
}

/// Linearly separable ±1 data: Gaussian features labelled by the sign of a
/// random hyperplane through the origin.
pub fn synthetic_classification(samples: usize, features: usize, val_fraction: f64, seed: u64) -> Result<Dataset> {
    if samples == 0 || features == 0 {
        return Err(Error::Config("synthetic dataset needs samples > 0 and features > 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let truth: Vec<f64> = (0..features).map(|_| normal(&mut rng)).collect();
    let mut rows = Vec::with_capacity(samples);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let x: Vec<f64> = (0..features).map(|_| normal(&mut rng)).collect();
        let s: f64 = x.iter().zip(&truth).map(|(a, b)| a * b).sum();
        labels.push(if s >= 0.0 { 1 } else { -1 });
        rows.push(x);
    }
    let mut ds = Dataset::with_classes(rows, labels, vec![Split::Train; samples], vec![-1, 1])?;
    ds.assign_validation(val_fraction, seed.wrapping_add(1))?;
    Ok(ds)
}
