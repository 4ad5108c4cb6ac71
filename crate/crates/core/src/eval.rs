//! Frozen-encoder evaluation: graph readout, linear probes on node
//! embeddings and stratified k-fold graph classification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphSet, NodeSplit};
use crate::masking::derive_seed;
use crate::model::GraphMae;
use crate::tensor::Tensor;
use crate::train::{adam_update, OptimConfig};

pub const CLASSIFIER: &str = "linear_probe";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Max,
    Sum,
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "sum" => Ok(Self::Sum),
            other => Err(Error::validation(format!("unknown pooling {other:?}"))),
        }
    }
}

impl std::fmt::Display for Pooling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Max => "max",
            Self::Sum => "sum",
        })
    }
}

/// Correctly rounded sum (Shewchuk's exact partials), so the result does
/// not depend on the order of the terms.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // Round the partials (non-overlapping, increasing magnitude) to nearest.
    let Some(mut hi) = partials.pop() else { return 0.0 };
    let mut lo = 0.0;
    while let Some(y) = partials.pop() {
        let x = hi;
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if let Some(&next) = partials.last() {
        if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

/// Column-wise pooling of a graph's node embeddings into one `1×k` row.
/// Sums are correctly rounded, so every pooling is exactly invariant to
/// the order of the rows.
pub fn readout(h: &Tensor, pooling: Pooling) -> Result<Tensor> {
    let (n, k) = h.shape();
    if n == 0 {
        return Err(Error::validation("readout of an empty graph"));
    }
    let out = (0..k)
        .map(|c| {
            let col = (0..n).map(|r| h.get(r, c));
            match pooling {
                Pooling::Max => col.fold(f64::NEG_INFINITY, f64::max),
                Pooling::Sum => exact_sum(col),
                Pooling::Mean => exact_sum(col) / n as f64,
            }
        })
        .collect();
    Tensor::from_vec(1, k, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub lr: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Independent classifier initializations.
    pub repeats: usize,
    /// Z-score features with training-set statistics before fitting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self::node_defaults()
    }
}

impl ProbeConfig {
    pub fn node_defaults() -> Self {
        Self {
            lr: 0.01,
            epochs: 300,
            weight_decay: 1e-4,
            repeats: 20,
            standardize: false,
            seed: 0,
        }
    }

    pub fn graph_defaults() -> Self {
        Self {
            repeats: 5,
            standardize: true,
            ..Self::node_defaults()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.epochs == 0 || self.repeats == 0 || self.weight_decay < 0.0 {
            return Err(Error::validation(
                "probe needs lr > 0, epochs > 0, repeats > 0 and weight_decay >= 0",
            ));
        }
        Ok(())
    }
}

/// Multinomial logistic regression `softmax(x W + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearClassifier {
    pub w: Tensor,
    pub b: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    row.iter_mut().for_each(|v| *v /= s);
}

impl LinearClassifier {
    /// Full-batch Adam on the mean cross-entropy of the `train` rows.
    pub fn fit(h: &Tensor, labels: &[usize], train: &[usize], num_classes: usize, cfg: &ProbeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if labels.len() != h.rows() {
            return Err(Error::validation(format!("{} labels for {} rows", labels.len(), h.rows())));
        }
        if train.is_empty() {
            return Err(Error::validation("empty training set"));
        }
        let first = labels[train[0]];
        if train.iter().all(|&i| labels[i] == first) {
            return Err(Error::validation("training set holds a single class"));
        }
        if let Some(&l) = train.iter().map(|&i| &labels[i]).find(|&&l| l >= num_classes) {
            return Err(Error::validation(format!("label {l} outside {num_classes} classes")));
        }
        let d = h.cols();
        let c = num_classes;
        let (shift, scale) = if cfg.standardize {
            let m = train.len() as f64;
            let mut mean = vec![0.0; d];
            for &i in train {
                mean.iter_mut().zip(h.row(i)).for_each(|(a, v)| *a += v / m);
            }
            let mut var = vec![0.0; d];
            for &i in train {
                var.iter_mut()
                    .zip(h.row(i))
                    .zip(&mean)
                    .for_each(|((s, v), mu)| *s += (v - mu) * (v - mu) / m);
            }
            let scale = var.iter().map(|s| if *s > 1e-12 { 1.0 / s.sqrt() } else { 1.0 }).collect();
            (mean, scale)
        } else {
            (vec![0.0; d], vec![1.0; d])
        };
        let x = Tensor::from_vec(
            train.len(),
            d,
            train
                .iter()
                .flat_map(|&i| h.row(i).iter().zip(&shift).zip(&scale).map(|((v, s), k)| (v - s) * k))
                .collect(),
        )?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut clf = Self {
            w: Tensor::xavier_uniform(d, c, &mut rng),
            b: vec![0.0; c],
            shift,
            scale,
        };
        let wcfg = OptimConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            max_epoch: cfg.epochs,
            ..OptimConfig::default()
        };
        let bcfg = OptimConfig { weight_decay: 0.0, ..wcfg };
        let (mut mw, mut vw) = (vec![0.0; d * c], vec![0.0; d * c]);
        let (mut mb, mut vb) = (vec![0.0; c], vec![0.0; c]);
        let m = train.len() as f64;
        for step in 1..=cfg.epochs as u64 {
            let mut p = x.matmul(&clf.w)?;
            for r in 0..p.rows() {
                let row = p.row_mut(r);
                row.iter_mut().zip(&clf.b).for_each(|(v, b)| *v += b);
                softmax_in_place(row);
                row[labels[train[r]]] -= 1.0;
                row.iter_mut().for_each(|v| *v /= m);
            }
            let gw = x.transpose().matmul(&p)?;
            let mut gb = vec![0.0; c];
            for r in 0..p.rows() {
                gb.iter_mut().zip(p.row(r)).for_each(|(g, v)| *g += v);
            }
            adam_update(clf.w.data_mut(), gw.data(), &mut mw, &mut vw, step, cfg.lr, &wcfg);
            adam_update(&mut clf.b, &gb, &mut mb, &mut vb, step, cfg.lr, &bcfg);
        }
        if !clf.w.is_finite() {
            return Err(Error::NonFinite { op: "linear_probe" });
        }
        Ok(clf)
    }

    pub fn predict(&self, h: &Tensor, rows: &[usize]) -> Vec<usize> {
        rows.iter()
            .map(|&i| {
                let x: Vec<f64> = h.row(i).iter().zip(&self.shift).zip(&self.scale).map(|((v, s), k)| (v - s) * k).collect();
                let mut best = (0, f64::NEG_INFINITY);
                for c in 0..self.b.len() {
                    let logit = self.b[c] + x.iter().enumerate().map(|(j, v)| v * self.w.get(j, c)).sum::<f64>();
                    if logit > best.1 {
                        best = (c, logit);
                    }
                }
                best.0
            })
            .collect()
    }

    pub fn accuracy(&self, h: &Tensor, labels: &[usize], rows: &[usize]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = self.predict(h, rows).iter().zip(rows).filter(|(p, &i)| **p == labels[i]).count();
        hits as f64 / rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub classifier: String,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub values: Vec<f64>,
    pub config: serde_json::Value,
    /// Fold of every graph, one assignment per repeat (graph task only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub folds: Vec<Vec<usize>>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl EvalReport {
    fn new(task: &str, values: Vec<f64>, config: serde_json::Value, folds: Vec<Vec<usize>>) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            task: task.to_string(),
            classifier: CLASSIFIER.to_string(),
            mean,
            std,
            values,
            config,
            folds,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn num_classes(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Node classification: fit on `split.train_idx`, score on `split.test_idx`,
/// once per repeat with a distinct classifier initialization.
pub fn linear_probe(h: &Tensor, labels: &[usize], split: &NodeSplit, cfg: &ProbeConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let n = h.rows();
    if labels.len() != n {
        return Err(Error::validation(format!("{} labels for {n} embeddings", labels.len())));
    }
    if split.test_idx.is_empty() {
        return Err(Error::validation("empty test split"));
    }
    if let Some(&i) = split.train_idx.iter().chain(&split.test_idx).find(|&&i| i >= n) {
        return Err(Error::validation(format!("split index {i} out of range for {n} nodes")));
    }
    let c = num_classes(labels);
    let values = (0..cfg.repeats)
        .map(|r| {
            let clf = LinearClassifier::fit(h, labels, &split.train_idx, c, cfg, derive_seed(cfg.seed, r as u64))?;
            Ok(clf.accuracy(h, labels, &split.test_idx))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::new("node_classification", values, serde_json::to_value(cfg)?, Vec::new()))
}

/// Stratified fold assignment: classes are shuffled separately, laid end to
/// end, and dealt round-robin so fold sizes differ by at most one.
/// `k == labels.len()` is leave-one-out and needs no stratification.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 || k > labels.len() {
        return Err(Error::validation(format!("k={k} folds for {} items", labels.len())));
    }
    let c = num_classes(labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if k == labels.len() {
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut rng);
        return Ok(order);
    }
    let mut folds = vec![0; labels.len()];
    let mut pos = 0;
    for class in 0..c {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(Error::validation(format!(
                "class {class} has {} members, fewer than k={k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = pos % k;
            pos += 1;
        }
    }
    Ok(folds)
}

/// Pooled embedding of every graph, one row per graph.
pub fn graph_embeddings(set: &GraphSet, model: &GraphMae, pooling: Pooling) -> Result<Tensor> {
    let rows = set
        .graphs
        .iter()
        .map(|g| Ok(readout(&model.embed(g)?, pooling)?.into_data()))
        .collect::<Result<Vec<_>>>()?;
    Tensor::from_rows(&rows)
}

/// Graph classification by stratified k-fold cross-validation of a linear
/// probe on pooled embeddings, repeated with fresh fold shuffles.
pub fn kfold_graph_eval(
    set: &GraphSet,
    model: &GraphMae,
    pooling: Pooling,
    k: usize,
    repeats: usize,
    cfg: &ProbeConfig,
) -> Result<EvalReport> {
    let h = graph_embeddings(set, model, pooling)?;
    kfold_eval(&h, &set.labels(), pooling, k, repeats, cfg)
}

/// The k-fold protocol on precomputed graph-level features.
pub fn kfold_eval(h: &Tensor, labels: &[usize], pooling: Pooling, k: usize, repeats: usize, cfg: &ProbeConfig) -> Result<EvalReport> {
    cfg.validate()?;
    if repeats == 0 {
        return Err(Error::validation("repeats must be positive"));
    }
    if labels.len() != h.rows() {
        return Err(Error::validation(format!("{} labels for {} graphs", labels.len(), h.rows())));
    }
    let c = num_classes(labels);
    let mut values = Vec::with_capacity(k * repeats);
    let mut assignments = Vec::with_capacity(repeats);
    for r in 0..repeats {
        let run_seed = derive_seed(cfg.seed, r as u64);
        let folds = stratified_folds(labels, k, derive_seed(run_seed, 0xf01d))?;
        for f in 0..k {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| folds[i] == f);
            let clf = LinearClassifier::fit(h, labels, &train, c, cfg, derive_seed(run_seed, f as u64))?;
            values.push(clf.accuracy(h, labels, &test));
        }
        assignments.push(folds);
    }
    let config = serde_json::json!({
        "probe": cfg,
        "k": k,
        "repeats": repeats,
        "pooling": pooling,
    });
    Ok(EvalReport::new("graph_classification", values, config, assignments))
}
