//! On-disk formats.
//!
//! - edge list: one `src dst` pair per line, 0-based, `#` starts a comment
//! - features: CSV text (one row per node) or binary `GMAEF1` + `u64 n` +
//!   `u64 d` + `n·d` little-endian `f64`, row-major
//! - labels: one integer per line
//! - node split: one `index train|val|test` pair per line
//! - graph set: one subdirectory per graph plus a `labels.txt` manifest of
//!   `graph_name label` lines

use std::fs;
use std::path::{Path, PathBuf};

use super::{CsrAdjacency, Graph, GraphSet, NodeSplit};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 6] = b"GMAEF1";

pub const EDGES_FILE: &str = "edges.txt";
pub const FEATURES_BIN_FILE: &str = "features.bin";
pub const FEATURES_CSV_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.txt";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::validation(format!("{} has no file name", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_edge_list(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = read_text(path)?;
    let mut edges = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, lineno + 1, format!("expected `src dst`, got {raw:?}")));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(path, lineno + 1, format!("invalid node index {s:?}")))
        };
        edges.push((parse(a)?, parse(b)?));
    }
    Ok(edges)
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(FEATURE_MAGIC) {
        decode_features_bin(&bytes)
    } else {
        let text = String::from_utf8(bytes).map_err(|_| parse_err(path, 0, "feature file is neither GMAEF1 nor UTF-8"))?;
        parse_features_csv(path, &text)
    }
}

fn parse_features_csv(path: &Path, text: &str) -> Result<Tensor> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|s| {
                let s = s.trim();
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| parse_err(path, lineno + 1, format!("invalid feature value {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(parse_err(
                    path,
                    lineno + 1,
                    format!("row has {} values, expected {}", row.len(), first.len()),
                ));
            }
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

pub fn encode_features_bin(features: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 16 + 8 * features.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(features.cols() as u64).to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features_bin(bytes: &[u8]) -> Result<Tensor> {
    let body = bytes
        .strip_prefix(FEATURE_MAGIC.as_slice())
        .ok_or_else(|| Error::Format("missing GMAEF1 magic".into()))?;
    if body.len() < 16 {
        return Err(Error::Format("truncated feature header".into()));
    }
    let n = u64::from_le_bytes(body[0..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
    let payload = &body[16..];
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(8))
        .ok_or_else(|| Error::Format("feature dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Format(format!(
            "feature payload has {} bytes, expected {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(n, d, data)
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<usize>()
                .map_err(|_| parse_err(path, i + 1, format!("invalid label {:?}", l.trim())))
        })
        .collect()
}

/// Reads a split file for an `n`-node graph. Nodes not listed belong to
/// no split.
pub fn read_split(path: &Path, n: usize) -> Result<NodeSplit> {
    let text = read_text(path)?;
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(idx), Some(part), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(path, lineno + 1, format!("expected `index train|val|test`, got {raw:?}")));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| parse_err(path, lineno + 1, format!("invalid node index {idx:?}")))?;
        match part {
            "train" => train.push(idx),
            "val" => val.push(idx),
            "test" => test.push(idx),
            other => return Err(parse_err(path, lineno + 1, format!("unknown split {other:?}"))),
        }
    }
    NodeSplit::new(train, val, test, n)
}

/// Loads a graph; the node count is the feature row count.
pub fn load_graph(edge_path: &Path, feature_path: &Path, label_path: Option<&Path>) -> Result<Graph> {
    let edges = read_edge_list(edge_path)?;
    let features = read_features(feature_path)?;
    let n = features.rows();
    let adjacency = CsrAdjacency::from_undirected_edges(n, &edges)?;
    let name = edge_path
        .parent()
        .and_then(Path::file_name)
        .map_or_else(|| "graph".to_string(), |s| s.to_string_lossy().into_owned());
    let mut g = Graph::new(name, adjacency, features)?;
    if let Some(lp) = label_path {
        let labels = read_labels(lp)?;
        if labels.len() != n {
            return Err(Error::validation(format!(
                "{} has {} labels for {n} nodes",
                lp.display(),
                labels.len()
            )));
        }
        g = g.with_node_labels(labels)?;
    }
    Ok(g)
}

/// Loads `edges.txt`, `features.bin` or `features.csv`, and `labels.txt`
/// (if present) from one directory.
pub fn load_graph_dir(dir: &Path) -> Result<Graph> {
    let bin = dir.join(FEATURES_BIN_FILE);
    let features = if bin.exists() { bin } else { dir.join(FEATURES_CSV_FILE) };
    let labels = dir.join(LABELS_FILE);
    let mut g = load_graph(
        &dir.join(EDGES_FILE),
        &features,
        labels.exists().then_some(labels.as_path()),
    )?;
    if let Some(name) = dir.file_name() {
        g.name = name.to_string_lossy().into_owned();
    }
    Ok(g)
}

pub fn edge_list_text(adj: &CsrAdjacency) -> String {
    let mut text = String::new();
    for (i, j, _) in adj.arcs() {
        if i <= j {
            text.push_str(&format!("{i} {j}\n"));
        }
    }
    text
}

/// Writes `edges.txt`, `features.bin` and (for node-labeled graphs)
/// `labels.txt` into `dir`.
pub fn save_graph_dir(g: &Graph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(EDGES_FILE), edge_list_text(&g.adjacency).as_bytes())?;
    write_atomic(&dir.join(FEATURES_BIN_FILE), &encode_features_bin(&g.features))?;
    if let Some(labels) = &g.node_labels {
        let text: String = labels.iter().map(|l| format!("{l}\n")).collect();
        write_atomic(&dir.join(LABELS_FILE), text.as_bytes())?;
    }
    Ok(())
}

pub fn load_graph_set(dir: &Path) -> Result<GraphSet> {
    let manifest = dir.join(LABELS_FILE);
    let text = read_text(&manifest)?;
    let mut graphs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let (Some(name), Some(label), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(&manifest, lineno + 1, "expected `graph_name label`"));
        };
        let label: usize = label
            .parse()
            .map_err(|_| parse_err(&manifest, lineno + 1, format!("invalid label {label:?}")))?;
        let sub: PathBuf = dir.join(name);
        let mut g = load_graph_dir(&sub)?;
        g.node_labels = None;
        graphs.push(g.with_graph_label(label));
    }
    GraphSet::new(graphs)
}

pub fn save_graph_set(set: &GraphSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for (i, g) in set.graphs.iter().enumerate() {
        let name = format!("g{i:05}");
        save_graph_dir(g, &dir.join(&name))?;
        manifest.push_str(&format!("{name} {}\n", g.graph_label.unwrap_or(0)));
    }
    write_atomic(&dir.join(LABELS_FILE), manifest.as_bytes())
}
