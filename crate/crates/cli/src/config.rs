//! Run configuration files.
//!
//! One `key = value` per line, `#` starts a comment, dotted keys group
//! related settings (`encoder.kind`, `probe.lr`). Unknown or repeated keys
//! are errors. Relative paths resolve against the config file's directory.
//!
//! `task` picks the defaults (`node` or `graph`) and is read first wherever
//! it appears; every other key overrides one field.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphmae::eval::{Pooling, ProbeConfig};
use graphmae::graph::{FeatureSpec, GraphSetSpec, SbmSpec};
use graphmae::train::RunConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Node,
    Graph,
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "node" => Ok(Task::Node),
            "graph" => Ok(Task::Graph),
            other => Err(format!("unknown task {other:?} (expected node or graph)")),
        }
    }
}

/// Where the graph(s) come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    /// `data.dir`, or `data.edges` + `data.features` (+ `data.labels`).
    Files,
    /// Planted-feature stochastic block model (`sbm.*`).
    Sbm,
    /// Synthetic graph collection (`graphs.*`).
    Graphs,
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "files" => Ok(Source::Files),
            "sbm" => Ok(Source::Sbm),
            "graphs" => Ok(Source::Graphs),
            other => Err(format!("unknown data.source {other:?} (expected files, sbm or graphs)")),
        }
    }
}

/// Labeled-node split drawn when no split file is given.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub train_per_class: usize,
    pub num_val: usize,
    /// `None` takes every remaining node.
    pub num_test: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub path: PathBuf,
    pub task: Task,
    /// Master seed; sub-seeds that are not set explicitly follow it.
    pub seed: u64,
    pub source: Source,
    pub data_dir: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub split_file: Option<PathBuf>,
    pub normalize_features: bool,
    pub sbm: SbmSpec,
    pub graphs: GraphSetSpec,
    pub split: SplitSpec,
    pub run: RunConfig,
    pub probe: ProbeConfig,
    pub pooling: Pooling,
    pub folds: usize,
    pub fold_repeats: usize,
    sbm_seed: Option<u64>,
    /// Defaults to the whole feature dimension.
    sbm_signal_dims: Option<usize>,
    graphs_seed: Option<u64>,
    split_seed: Option<u64>,
    probe_seed: Option<u64>,
}

struct Entry<'a> {
    line: usize,
    value: &'a str,
}

fn parse_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| format!("invalid list element {:?}", v.trim())))
        .collect()
}

impl Config {
    /// Defaults for `task` before any key is applied.
    pub fn defaults(task: Task) -> Self {
        let (run, probe, normalize) = match task {
            Task::Node => (RunConfig::node_defaults(), ProbeConfig::node_defaults(), true),
            Task::Graph => (RunConfig::graph_defaults(), ProbeConfig::graph_defaults(), false),
        };
        Self {
            path: PathBuf::new(),
            task,
            seed: 0,
            source: Source::Files,
            data_dir: None,
            edges: None,
            features: None,
            labels: None,
            split_file: None,
            normalize_features: normalize,
            sbm: SbmSpec {
                block_sizes: vec![100, 100],
                p_in: 0.15,
                p_out: 0.01,
                features: FeatureSpec {
                    dim: 200,
                    signal_dims: 200,
                    mean_scale: 0.05,
                    noise_std: 1.0,
                },
                seed: 0,
            },
            graphs: GraphSetSpec {
                graphs_per_class: 20,
                min_nodes: 8,
                max_nodes: 16,
                class_edge_probs: vec![0.2, 0.6],
                max_degree: 15,
                seed: 0,
            },
            split: SplitSpec {
                train_per_class: 20,
                num_val: 0,
                num_test: None,
            },
            run,
            probe,
            pooling: Pooling::Mean,
            folds: 10,
            fold_repeats: 5,
            sbm_seed: None,
            sbm_signal_dims: None,
            graphs_seed: None,
            split_seed: None,
            probe_seed: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Invalid {
            path: path.to_path_buf(),
            msg: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| CliError::Config {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut entries: Vec<(&str, Entry)> = Vec::new();
        let mut seen: HashMap<&str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(err(i + 1, format!("expected `key = value`, got {raw:?}")));
            };
            let (key, value) = (key.trim(), value.trim().trim_matches('"'));
            if key.is_empty() {
                return Err(err(i + 1, "empty key".into()));
            }
            if let Some(first) = seen.insert(key, i + 1) {
                return Err(err(i + 1, format!("key `{key}` already set on line {first}")));
            }
            entries.push((key, Entry { line: i + 1, value }));
        }

        let task = match entries.iter().find(|(k, _)| *k == "task") {
            Some((_, e)) => e.value.parse().map_err(|m| err(e.line, m))?,
            None => Task::Node,
        };
        let mut cfg = Self::defaults(task);
        cfg.path = path.to_path_buf();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        for (key, e) in &entries {
            cfg.apply(key, e.value, &base).map_err(|m| match m {
                ApplyError::Unknown => CliError::UnknownKey {
                    path: path.to_path_buf(),
                    line: e.line,
                    key: key.to_string(),
                },
                ApplyError::Invalid(msg) => err(e.line, format!("{key}: {msg}")),
            })?;
        }
        cfg.validate().map_err(|msg| CliError::Invalid {
            path: path.to_path_buf(),
            msg,
        })?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str, base: &Path) -> std::result::Result<(), ApplyError> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, ApplyError> {
            v.parse().map_err(|_| ApplyError::Invalid(format!("invalid value {v:?}")))
        }
        fn parsed<T: FromStr<Err = E>, E: std::fmt::Display>(v: &str) -> std::result::Result<T, ApplyError> {
            v.parse().map_err(|e: E| ApplyError::Invalid(e.to_string()))
        }
        let path = |v: &str| Some(base.join(v));
        let bool_ = |v: &str| parse_bool(v).map_err(ApplyError::Invalid);
        match key {
            "task" => {}
            "seed" => self.seed = num(v)?,
            "data.source" => self.source = v.parse().map_err(ApplyError::Invalid)?,
            "data.dir" => self.data_dir = path(v),
            "data.edges" => self.edges = path(v),
            "data.features" => self.features = path(v),
            "data.labels" => self.labels = path(v),
            "data.split" => self.split_file = path(v),
            "data.normalize_features" => self.normalize_features = bool_(v)?,

            "sbm.blocks" => self.sbm.block_sizes = parse_list(v).map_err(ApplyError::Invalid)?,
            "sbm.p_in" => self.sbm.p_in = num(v)?,
            "sbm.p_out" => self.sbm.p_out = num(v)?,
            "sbm.feature_dim" => self.sbm.features.dim = num(v)?,
            "sbm.signal_dims" => self.sbm_signal_dims = Some(num(v)?),
            "sbm.mean_scale" => self.sbm.features.mean_scale = num(v)?,
            "sbm.noise_std" => self.sbm.features.noise_std = num(v)?,
            "sbm.seed" => self.sbm_seed = Some(num(v)?),

            "graphs.per_class" => self.graphs.graphs_per_class = num(v)?,
            "graphs.min_nodes" => self.graphs.min_nodes = num(v)?,
            "graphs.max_nodes" => self.graphs.max_nodes = num(v)?,
            "graphs.edge_probs" => self.graphs.class_edge_probs = parse_list(v).map_err(ApplyError::Invalid)?,
            "graphs.max_degree" => self.graphs.max_degree = num(v)?,
            "graphs.seed" => self.graphs_seed = Some(num(v)?),

            "split.train_per_class" => self.split.train_per_class = num(v)?,
            "split.num_val" => self.split.num_val = num(v)?,
            "split.num_test" => self.split.num_test = Some(num(v)?),
            "split.seed" => self.split_seed = Some(num(v)?),

            "mask_ratio" => self.run.mask_ratio = num(v)?,
            "replace_rate" => self.run.replace_rate = num(v)?,
            "criterion" => self.run.loss.criterion = parsed(v)?,
            "gamma" => self.run.loss.gamma = num(v)?,
            "lr" => self.run.optim.lr = num(v)?,
            "weight_decay" => self.run.optim.weight_decay = num(v)?,
            "max_epoch" => self.run.optim.max_epoch = num(v)?,
            "batch_size" => self.run.batch_size = num(v)?,
            "hidden_size" => self.run.model.hidden_dim = num(v)?,
            "num_layers" => self.run.model.num_layers = num(v)?,
            "negative_slope" => self.run.model.negative_slope = num(v)?,
            "remask" => self.run.model.remask = bool_(v)?,
            "encoder.kind" => self.run.model.encoder_kind = parsed(v)?,
            "encoder.heads" => self.run.model.heads = num(v)?,
            "decoder.kind" => self.run.model.decoder_kind = parsed(v)?,
            "decoder.heads" => self.run.model.decoder_heads = num(v)?,

            "pooling" => self.pooling = parsed(v)?,
            "eval.folds" => self.folds = num(v)?,
            "eval.repeats" => self.fold_repeats = num(v)?,

            "probe.lr" => self.probe.lr = num(v)?,
            "probe.epochs" => self.probe.epochs = num(v)?,
            "probe.weight_decay" => self.probe.weight_decay = num(v)?,
            "probe.repeats" => self.probe.repeats = num(v)?,
            "probe.standardize" => self.probe.standardize = bool_(v)?,
            "probe.seed" => self.probe_seed = Some(num(v)?),
            _ => return Err(ApplyError::Unknown),
        }
        Ok(())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        match (self.task, self.source) {
            (Task::Node, Source::Graphs) => return Err("data.source = graphs needs task = graph".into()),
            (Task::Graph, Source::Sbm) => return Err("data.source = sbm needs task = node".into()),
            _ => {}
        }
        if self.source == Source::Files {
            let explicit = self.edges.is_some() || self.features.is_some() || self.labels.is_some();
            match (&self.data_dir, explicit) {
                (Some(_), true) => return Err("give either data.dir or data.edges/data.features, not both".into()),
                (None, false) => return Err("no data: set data.dir, data.edges + data.features, or data.source".into()),
                (None, true) if self.edges.is_none() || self.features.is_none() => {
                    return Err("data.edges and data.features must be given together".into())
                }
                (None, true) if self.task == Task::Graph => return Err("graph tasks read a collection from data.dir".into()),
                _ => {}
            }
        }
        self.run_config().validate().map_err(|e| e.to_string())?;
        self.probe_config().validate().map_err(|e| e.to_string())?;
        Ok(())
    }

    pub fn run_config(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            ..self.run.clone()
        }
    }

    pub fn probe_config(&self) -> ProbeConfig {
        ProbeConfig {
            seed: self.probe_seed.unwrap_or(self.seed),
            ..self.probe
        }
    }

    pub fn sbm_spec(&self) -> SbmSpec {
        let mut spec = SbmSpec {
            seed: self.sbm_seed.unwrap_or(self.seed),
            ..self.sbm.clone()
        };
        spec.features.signal_dims = self.sbm_signal_dims.unwrap_or(spec.features.dim);
        spec
    }

    pub fn graph_set_spec(&self) -> GraphSetSpec {
        GraphSetSpec {
            seed: self.graphs_seed.unwrap_or(self.seed),
            ..self.graphs.clone()
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split_seed.unwrap_or(self.seed)
    }
}

enum ApplyError {
    Unknown,
    Invalid(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use graphmae::layers::LayerKind;
    use graphmae::loss::Criterion;

    fn parse(text: &str) -> Result<Config> {
        Config::parse(text, Path::new("/cfg/run.conf"))
    }

    #[test]
    fn dotted_keys_and_comments() {
        let c = parse(
            "# synthetic\ndata.source = sbm\nencoder.kind = gcn  # inline\ndecoder.kind = mlp\ngamma = 2\nsbm.blocks = 30, 40\n",
        )
        .unwrap();
        assert_eq!(c.run.model.encoder_kind, LayerKind::Gcn);
        assert_eq!(c.run.model.decoder_kind, LayerKind::Mlp);
        assert_eq!(c.run.loss.gamma, 2.0);
        assert_eq!(c.sbm.block_sizes, vec![30, 40]);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = parse("data.source = sbm\nmask_rato = 0.5\n").unwrap_err();
        match &e {
            CliError::UnknownKey { key, line, .. } => assert_eq!((key.as_str(), *line), ("mask_rato", 2)),
            other => panic!("{other}"),
        }
        assert!(e.to_string().contains("mask_rato"));
    }

    #[test]
    fn task_selects_defaults_regardless_of_position() {
        let c = parse("data.dir = set\ntask = graph\n").unwrap();
        assert_eq!(c.run.model.encoder_kind, LayerKind::Gin);
        assert_eq!(c.run.batch_size, 32);
        assert!(c.probe.standardize);
        assert_eq!(c.data_dir, Some(PathBuf::from("/cfg/set")));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(parse("data.source = sbm\ngamma = 0.5\n").is_err());
        assert!(parse("data.source = sbm\ncriterion = l1\n").is_err());
        assert!(parse("data.source = sbm\nmask_ratio = lots\n").is_err());
        assert!(parse("data.source = sbm\ngamma = 2\ngamma = 3\n").is_err());
        assert!(parse("data.source = sbm\njust a line\n").is_err());
        assert!(parse("gamma = 2\n").is_err());
    }

    #[test]
    fn master_seed_feeds_sub_seeds() {
        let mut c = parse("data.source = sbm\nseed = 9\nprobe.seed = 4\n").unwrap();
        assert_eq!((c.run_config().seed, c.sbm_spec().seed, c.probe_config().seed), (9, 9, 4));
        c.seed = 11;
        assert_eq!((c.run_config().seed, c.split_seed(), c.probe_config().seed), (11, 11, 4));
    }

    #[test]
    fn criterion_by_name() {
        let c = parse("data.source = sbm\ncriterion = cosine\n").unwrap();
        assert_eq!(c.run.loss.criterion, Criterion::Cosine);
    }
}
