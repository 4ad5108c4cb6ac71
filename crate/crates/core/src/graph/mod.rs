//! Graphs, graph collections, preprocessing, file formats, synthetic
//! generators and node splits.

mod csr;
pub mod io;
mod sbm;
mod split;

pub use csr::CsrAdjacency;
pub use sbm::{generate_graph_set, generate_sbm, FeatureSpec, GraphSetSpec, SbmSpec};
pub use split::{split_nodes, split_nodes_per_class, NodeSplit};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An undirected attributed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub name: String,
    pub adjacency: CsrAdjacency,
    pub features: Tensor,
    pub node_labels: Option<Vec<usize>>,
    pub graph_label: Option<usize>,
}

impl Graph {
    pub fn new(name: impl Into<String>, adjacency: CsrAdjacency, features: Tensor) -> Result<Self> {
        let g = Self {
            name: name.into(),
            adjacency,
            features,
            node_labels: None,
            graph_label: None,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn with_node_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::validation(format!(
                "{} labels for {} nodes",
                labels.len(),
                self.n()
            )));
        }
        self.node_labels = Some(labels);
        Ok(self)
    }

    pub fn with_graph_label(mut self, label: usize) -> Self {
        self.graph_label = Some(label);
        self
    }

    pub fn n(&self) -> usize {
        self.adjacency.n()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.node_labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.adjacency.validate()?;
        if self.features.rows() != self.n() {
            return Err(Error::validation(format!(
                "feature matrix has {} rows for {} nodes",
                self.features.rows(),
                self.n()
            )));
        }
        if let Some(labels) = &self.node_labels {
            if labels.len() != self.n() {
                return Err(Error::validation("node label count differs from node count"));
            }
        }
        Ok(())
    }

    pub fn add_self_loops(&self) -> Graph {
        Graph {
            adjacency: self.adjacency.with_self_loops(),
            ..self.clone()
        }
    }

    /// Scales every nonzero feature row to unit L2 norm.
    pub fn row_normalize_features(&self) -> Graph {
        let mut features = self.features.clone();
        for r in 0..features.rows() {
            let row = features.row_mut(r);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
        Graph {
            features,
            ..self.clone()
        }
    }

    /// Relabels nodes so that node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n() {
            return Err(Error::validation("permutation length differs from node count"));
        }
        let mut inverse = vec![usize::MAX; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            if p >= perm.len() || inverse[p] != usize::MAX {
                return Err(Error::validation("not a permutation"));
            }
            inverse[p] = i;
        }
        let features = self.features.gather_rows(&inverse);
        let node_labels = self
            .node_labels
            .as_ref()
            .map(|l| inverse.iter().map(|&i| l[i]).collect());
        Ok(Graph {
            name: self.name.clone(),
            adjacency: self.adjacency.permute(perm)?,
            features,
            node_labels,
            graph_label: self.graph_label,
        })
    }

    /// Disjoint union of graphs as one block-diagonal graph; returns the
    /// node offset of each part (plus the total at the end).
    pub fn batch(parts: &[&Graph]) -> Result<(Graph, Vec<usize>)> {
        let d = parts.first().map_or(0, |g| g.feature_dim());
        if parts.iter().any(|g| g.feature_dim() != d) {
            return Err(Error::validation("batched graphs differ in feature dimension"));
        }
        let mut offsets = Vec::with_capacity(parts.len() + 1);
        let mut data = Vec::new();
        let mut n = 0;
        for g in parts {
            offsets.push(n);
            n += g.n();
            data.extend_from_slice(g.features.data());
        }
        offsets.push(n);
        let adjs: Vec<&CsrAdjacency> = parts.iter().map(|g| &g.adjacency).collect();
        let g = Graph::new("batch", CsrAdjacency::block_diagonal(&adjs), Tensor::from_vec(n, d, data)?)?;
        Ok((g, offsets))
    }
}

/// A labeled collection of graphs sharing one feature dimension.
#[derive(Debug, Clone)]
pub struct GraphSet {
    pub graphs: Vec<Graph>,
    pub num_classes: usize,
}

impl GraphSet {
    pub fn new(graphs: Vec<Graph>) -> Result<Self> {
        let d = graphs.first().map_or(0, Graph::feature_dim);
        if graphs.iter().any(|g| g.feature_dim() != d) {
            return Err(Error::validation("graphs in a set must share feature dimension"));
        }
        if let Some(g) = graphs.iter().find(|g| g.graph_label.is_none()) {
            return Err(Error::validation(format!("graph {} has no label", g.name)));
        }
        let num_classes = graphs
            .iter()
            .filter_map(|g| g.graph_label)
            .max()
            .map_or(0, |m| m + 1);
        Ok(Self { graphs, num_classes })
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.graphs.first().map_or(0, Graph::feature_dim)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.graphs.iter().map(|g| g.graph_label.unwrap_or(0)).collect()
    }
}
