use graphmae::graph::io::{load_graph, load_graph_dir, load_graph_set, read_split};
use graphmae::graph::{generate_graph_set, generate_sbm, split_nodes_per_class, Graph, GraphSet, NodeSplit};

use crate::config::{Config, Source, Task};
use crate::error::{CliError, Result};

#[derive(Debug, Clone)]
pub enum Dataset {
    Node(Graph),
    Graphs(GraphSet),
}

impl Dataset {
    pub fn load(cfg: &Config) -> Result<Self> {
        let data = match (cfg.task, cfg.source) {
            (Task::Node, Source::Sbm) => Dataset::Node(generate_sbm(&cfg.sbm_spec())?),
            (Task::Graph, Source::Graphs) => Dataset::Graphs(generate_graph_set(&cfg.graph_set_spec())?),
            (Task::Node, Source::Files) => Dataset::Node(match &cfg.data_dir {
                Some(dir) => load_graph_dir(dir)?,
                None => load_graph(
                    cfg.edges.as_deref().ok_or_else(|| CliError::usage("data.edges missing"))?,
                    cfg.features.as_deref().ok_or_else(|| CliError::usage("data.features missing"))?,
                    cfg.labels.as_deref(),
                )?,
            }),
            (Task::Graph, Source::Files) => {
                let dir = cfg.data_dir.as_deref().ok_or_else(|| CliError::usage("data.dir missing"))?;
                Dataset::Graphs(load_graph_set(dir)?)
            }
            (task, source) => return Err(CliError::usage(format!("{source:?} data cannot feed a {task:?} task"))),
        };
        if cfg.normalize_features {
            data.normalized()
        } else {
            Ok(data)
        }
    }

    fn normalized(self) -> Result<Self> {
        Ok(match self {
            Dataset::Node(g) => Dataset::Node(g.row_normalize_features()),
            Dataset::Graphs(set) => Dataset::Graphs(GraphSet::new(
                set.graphs.iter().map(Graph::row_normalize_features).collect(),
            )?),
        })
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Dataset::Node(g) => g.feature_dim(),
            Dataset::Graphs(set) => set.feature_dim(),
        }
    }
}

/// The split file if one is configured, otherwise a per-class draw.
pub fn node_split(cfg: &Config, g: &Graph) -> Result<NodeSplit> {
    if let Some(path) = &cfg.split_file {
        return Ok(read_split(path, g.n())?);
    }
    if g.node_labels.is_none() {
        return Err(CliError::usage(format!("{} has no node labels to probe", g.name)));
    }
    let s = &cfg.split;
    let train = s.train_per_class * g.num_classes();
    let rest = g.n().saturating_sub(train + s.num_val);
    let num_test = s.num_test.unwrap_or(rest);
    Ok(split_nodes_per_class(g, s.train_per_class, s.num_val, num_test, cfg.split_seed())?)
}
