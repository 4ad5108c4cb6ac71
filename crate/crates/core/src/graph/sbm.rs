use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{CsrAdjacency, Graph, GraphSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planted node features: each block draws a mean vector whose first
/// `signal_dims` coordinates are `mean_scale · N(0, 1)` (the rest zero);
/// every node adds isotropic `noise_std · N(0, 1)` noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpec {
    pub dim: usize,
    pub signal_dims: usize,
    pub mean_scale: f64,
    pub noise_std: f64,
}

impl FeatureSpec {
    pub fn isotropic(dim: usize, noise_std: f64) -> Self {
        Self {
            dim,
            signal_dims: dim,
            mean_scale: 1.0,
            noise_std,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub features: FeatureSpec,
    pub seed: u64,
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation(format!("{name}={p} is not a probability")));
    }
    Ok(())
}

/// Samples an undirected stochastic block model with planted features.
/// Node labels are block ids; nodes of block `b` are contiguous.
pub fn generate_sbm(spec: &SbmSpec) -> Result<Graph> {
    check_prob("p_in", spec.p_in)?;
    check_prob("p_out", spec.p_out)?;
    if spec.block_sizes.is_empty() || spec.block_sizes.contains(&0) {
        return Err(Error::validation("block sizes must be positive"));
    }
    if spec.features.signal_dims > spec.features.dim {
        return Err(Error::validation("signal_dims exceeds feature dim"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let labels: Vec<usize> = spec
        .block_sizes
        .iter()
        .enumerate()
        .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
        .collect();
    let n = labels.len();

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if labels[i] == labels[j] { spec.p_in } else { spec.p_out };
            // Always draw so the stream does not depend on p.
            let u: f64 = rng.random();
            if u < p {
                edges.push((i, j));
            }
        }
    }

    let fs = &spec.features;
    let means: Vec<Vec<f64>> = (0..spec.block_sizes.len())
        .map(|_| {
            (0..fs.dim)
                .map(|c| {
                    let z: f64 = rng.sample(StandardNormal);
                    if c < fs.signal_dims {
                        fs.mean_scale * z
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let mut features = Tensor::zeros(n, fs.dim);
    for (i, &b) in labels.iter().enumerate() {
        for (c, m) in means[b].iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            features.set(i, c, m + fs.noise_std * z);
        }
    }

    let adjacency = CsrAdjacency::from_undirected_edges(n, &edges)?;
    Graph::new(format!("sbm-{}", spec.seed), adjacency, features)?.with_node_labels(labels)
}

/// Graph-classification fixture: class `c` graphs are Erdős–Rényi graphs
/// with edge probability `class_edge_probs[c]`; node features are one-hot
/// degrees capped at `max_degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSetSpec {
    pub graphs_per_class: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub class_edge_probs: Vec<f64>,
    pub max_degree: usize,
    pub seed: u64,
}

pub fn generate_graph_set(spec: &GraphSetSpec) -> Result<GraphSet> {
    if spec.min_nodes == 0 || spec.min_nodes > spec.max_nodes {
        return Err(Error::validation("need 0 < min_nodes <= max_nodes"));
    }
    for &p in &spec.class_edge_probs {
        check_prob("class edge probability", p)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut graphs = Vec::new();
    for k in 0..spec.graphs_per_class {
        for (class, &p) in spec.class_edge_probs.iter().enumerate() {
            let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let u: f64 = rng.random();
                    if u < p {
                        edges.push((i, j));
                    }
                }
            }
            let adjacency = CsrAdjacency::from_undirected_edges(n, &edges)?;
            let features = degree_one_hot(&adjacency, spec.max_degree);
            let g = Graph::new(format!("c{class}-{k}"), adjacency, features)?.with_graph_label(class);
            graphs.push(g);
        }
    }
    GraphSet::new(graphs)
}

pub(crate) fn degree_one_hot(adj: &CsrAdjacency, max_degree: usize) -> Tensor {
    let mut t = Tensor::zeros(adj.n(), max_degree + 1);
    for i in 0..adj.n() {
        t.set(i, adj.degree(i).min(max_degree), 1.0);
    }
    t
}
