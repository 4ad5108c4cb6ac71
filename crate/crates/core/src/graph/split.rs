use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Graph;
use crate::error::{Error, Result};

/// Disjoint train/validation/test node index sets (each sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl NodeSplit {
    pub fn new(mut train_idx: Vec<usize>, mut val_idx: Vec<usize>, mut test_idx: Vec<usize>, n: usize) -> Result<Self> {
        train_idx.sort_unstable();
        val_idx.sort_unstable();
        test_idx.sort_unstable();
        let mut seen = vec![false; n];
        for &i in train_idx.iter().chain(&val_idx).chain(&test_idx) {
            if i >= n {
                return Err(Error::validation(format!("split index {i} out of range for {n} nodes")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::validation(format!("node {i} appears in more than one split")));
            }
        }
        Ok(Self {
            train_idx,
            val_idx,
            test_idx,
        })
    }
}

fn count_for(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 1e-9).floor() as usize
}

/// Seeded random split by fractions. When the graph has node labels the
/// split is stratified: every class is spread across the three sets in
/// proportion (within one node).
pub fn split_nodes(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<NodeSplit> {
    let (ft, fv, fs) = fractions;
    if ft < 0.0 || fv < 0.0 || fs < 0.0 || ft + fv + fs > 1.0 + 1e-9 {
        return Err(Error::validation(format!(
            "split fractions {fractions:?} must be nonnegative and sum to at most 1"
        )));
    }
    let n = g.n();
    let n_train = count_for(ft, n);
    let n_val = count_for(fv, n).min(n - n_train);
    let n_test = if (ft + fv + fs - 1.0).abs() < 1e-9 {
        n - n_train - n_val
    } else {
        count_for(fs, n).min(n - n_train - n_val)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = match &g.node_labels {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        }
        Some(labels) => {
            let classes = g.num_classes();
            let mut members: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                members[l].push(i);
            }
            // Systematic interleave: member at rank r of a class of size m
            // sits at position (r + 0.5) / m of the merged order.
            let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
            for (c, m) in members.iter_mut().enumerate() {
                m.shuffle(&mut rng);
                let size = m.len() as f64;
                keyed.extend(m.iter().enumerate().map(|(r, &i)| ((r as f64 + 0.5) / size, c, i)));
            }
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let order: Vec<usize> = keyed.into_iter().map(|k| k.2).collect();
            if n_train > 0 {
                for (c, m) in members.iter().enumerate() {
                    if !m.is_empty() && !order[..n_train].iter().any(|&i| labels[i] == c) {
                        return Err(Error::validation(format!(
                            "class {c} has {} members, too few for a {ft} train fraction",
                            m.len()
                        )));
                    }
                }
            }
            order
        }
    };
    NodeSplit::new(
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..n_train + n_val + n_test].to_vec(),
        n,
    )
}

/// Planetoid-style split: `train_per_class` labeled nodes per class, then
/// `num_val` and `num_test` nodes drawn from the remainder.
pub fn split_nodes_per_class(
    g: &Graph,
    train_per_class: usize,
    num_val: usize,
    num_test: usize,
    seed: u64,
) -> Result<NodeSplit> {
    let labels = g
        .node_labels
        .as_ref()
        .ok_or_else(|| Error::validation("per-class split needs node labels"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut train = Vec::new();
    let mut rest = Vec::new();
    for (c, m) in members.iter_mut().enumerate() {
        if m.len() < train_per_class {
            return Err(Error::validation(format!(
                "class {c} has {} members, fewer than {train_per_class} requested for training",
                m.len()
            )));
        }
        m.shuffle(&mut rng);
        train.extend_from_slice(&m[..train_per_class]);
        rest.extend_from_slice(&m[train_per_class..]);
    }
    if rest.len() < num_val + num_test {
        return Err(Error::validation("not enough nodes left for validation and test"));
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);
    NodeSplit::new(
        train,
        rest[..num_val].to_vec(),
        rest[num_val..num_val + num_test].to_vec(),
        g.n(),
    )
}
