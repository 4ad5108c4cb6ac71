use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graphmae::eval::{kfold_graph_eval, linear_probe, EvalReport};
use graphmae::gradcheck::{self, CheckResult};
use graphmae::graph::io::write_atomic;
use graphmae::layers::LayerKind;
use graphmae::loss::Criterion;
use graphmae::model::{Architecture, GraphMae, ARCHITECTURE_FILE, CHECKPOINT_FILE};
use graphmae::train::{pretrain_graphs, TrainLog};
use graphmae::Error;
use rayon::prelude::*;

use crate::config::{Config, Task};
use crate::data::{node_split, Dataset};
use crate::error::{CliError, Result};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_FILE: &str = "report.json";
pub const GRADCHECK_FILE: &str = "gradcheck.csv";
pub const THREADS_ENV: &str = "GRAPHMAE_THREADS";

/// Multiplier applied to the corrupted op's backward contribution.
pub const FAULT_FACTOR: f64 = 1.5;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| {
        Error::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

/// Pretrains on whatever the config describes.
pub fn train(cfg: &Config, data: &Dataset) -> Result<(GraphMae, TrainLog)> {
    let run = cfg.run_config();
    Ok(match data {
        Dataset::Node(g) => graphmae::train::pretrain(g, &run)?,
        Dataset::Graphs(set) => pretrain_graphs(set, &run)?,
    })
}

/// Node task: linear probe on the configured split. Graph task: k-fold
/// cross-validation on pooled embeddings.
pub fn evaluate(cfg: &Config, data: &Dataset, model: &GraphMae) -> Result<EvalReport> {
    let probe = cfg.probe_config();
    match data {
        Dataset::Node(g) => {
            let split = node_split(cfg, g)?;
            let labels = g.node_labels.as_ref().ok_or_else(|| CliError::usage("graph has no node labels"))?;
            Ok(linear_probe(&model.embed(g)?, labels, &split, &probe)?)
        }
        Dataset::Graphs(set) => Ok(kfold_graph_eval(set, model, cfg.pooling, cfg.folds, cfg.fold_repeats, &probe)?),
    }
}

pub fn cmd_pretrain(cfg: &Config, out: &Path) -> Result<TrainLog> {
    let data = Dataset::load(cfg)?;
    let (model, log) = train(cfg, &data)?;
    create_dir(out)?;
    model.save(out)?;
    write_atomic(&out.join(TRAIN_LOG_FILE), log.to_csv().as_bytes())?;
    Ok(log)
}

/// Loads a checkpoint (a directory holding `model.ckpt` and
/// `architecture.json`, or the `.ckpt` file itself) and checks that its
/// architecture is the one the config would build.
pub fn load_checkpoint(cfg: &Config, data: &Dataset, checkpoint: &Path) -> Result<GraphMae> {
    if !checkpoint.exists() {
        return Err(Error::Io {
            path: checkpoint.to_path_buf(),
            source: std::io::ErrorKind::NotFound.into(),
        }
        .into());
    }
    let (arch_path, ckpt_path) = if checkpoint.is_dir() {
        (checkpoint.join(ARCHITECTURE_FILE), checkpoint.join(CHECKPOINT_FILE))
    } else {
        (checkpoint.with_file_name(ARCHITECTURE_FILE), checkpoint.to_path_buf())
    };
    let expected = Architecture::from_spec(data.feature_dim(), &cfg.run.model)?;
    let text = fs::read_to_string(&arch_path).map_err(|source| Error::Io {
        path: arch_path.clone(),
        source,
    })?;
    let saved = Architecture::from_json(&text)?;
    if saved != expected {
        return Err(Error::ArchitectureMismatch(format!(
            "{} does not match the architecture built from {}",
            arch_path.display(),
            cfg.path.display()
        ))
        .into());
    }
    Ok(GraphMae::load_with_architecture(expected, &ckpt_path)?)
}

fn cmd_eval(cfg: &Config, checkpoint: &Path, out: &Path, task: Task) -> Result<EvalReport> {
    if cfg.task != task {
        return Err(CliError::usage(format!(
            "{} configures a {:?} task; use the matching subcommand",
            cfg.path.display(),
            cfg.task
        )));
    }
    let data = Dataset::load(cfg)?;
    let model = load_checkpoint(cfg, &data, checkpoint)?;
    let report = evaluate(cfg, &data, &model)?;
    create_dir(out)?;
    write_atomic(&out.join(REPORT_FILE), report.to_json()?.as_bytes())?;
    Ok(report)
}

pub fn cmd_probe(cfg: &Config, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    cmd_eval(cfg, checkpoint, out, Task::Node)
}

pub fn cmd_graph_eval(cfg: &Config, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    cmd_eval(cfg, checkpoint, out, Task::Graph)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    MaskRatio,
    Gamma,
    Criterion,
    DecoderKind,
    Remask,
}

impl FromStr for Axis {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask_ratio" => Ok(Axis::MaskRatio),
            "gamma" => Ok(Axis::Gamma),
            "criterion" => Ok(Axis::Criterion),
            "decoder_kind" => Ok(Axis::DecoderKind),
            "remask_on_off" => Ok(Axis::Remask),
            other => Err(CliError::usage(format!(
                "unknown axis {other:?} (expected mask_ratio, gamma, criterion, decoder_kind or remask_on_off)"
            ))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::MaskRatio => "mask_ratio",
            Axis::Gamma => "gamma",
            Axis::Criterion => "criterion",
            Axis::DecoderKind => "decoder_kind",
            Axis::Remask => "remask_on_off",
        }
    }

    /// Sets the axis in `cfg` and returns the canonical label of `value`.
    pub fn apply(self, cfg: &mut Config, value: &str) -> Result<String> {
        let bad = |e: String| CliError::usage(format!("invalid {} value {value:?}: {e}", self.name()));
        let float = || value.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        let label = match self {
            Axis::MaskRatio => {
                let v = float()?;
                cfg.run.mask_ratio = v;
                v.to_string()
            }
            Axis::Gamma => {
                let v = float()?;
                cfg.run.loss.gamma = v;
                v.to_string()
            }
            Axis::Criterion => {
                let c: Criterion = value.trim().parse().map_err(|e: Error| bad(e.to_string()))?;
                cfg.run.loss.criterion = c;
                c.to_string()
            }
            Axis::DecoderKind => {
                let k: LayerKind = value.trim().parse().map_err(|e: Error| bad(e.to_string()))?;
                cfg.run.model.decoder_kind = k;
                k.to_string()
            }
            Axis::Remask => {
                let on = match value.trim() {
                    "on" | "true" => true,
                    "off" | "false" => false,
                    _ => return Err(bad("expected on or off".into())),
                };
                cfg.run.model.remask = on;
                if on { "on" } else { "off" }.to_string()
            }
        };
        cfg.run_config().validate().map_err(|e| bad(e.to_string()))?;
        Ok(label)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: String,
    pub report: EvalReport,
    pub log: TrainLog,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("axis_value,mean,std\n");
    for r in rows {
        s.push_str(&format!("{},{:?},{:?}\n", r.value, r.report.mean, r.report.std));
    }
    s
}

fn gnuplot_stub(axis: Axis, csv: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key off\n\
         set xlabel '{axis}'\n\
         set ylabel 'accuracy'\n\
         plot '{csv}' skip 1 using 0:2:3:xtic(1) with yerrorlines\n",
        axis = axis.name()
    )
}

/// Worker count from `GRAPHMAE_THREADS`; unset means rayon's default.
pub fn sweep_threads() -> Result<usize> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
    }
}

pub fn ablation_paths(out: &Path, axis: Axis) -> (PathBuf, PathBuf) {
    (
        out.join(format!("ablation_{}.csv", axis.name())),
        out.join(format!("ablation_{}.gp", axis.name())),
    )
}

/// Pretrains and evaluates once per value. Every run uses the same seeds;
/// only the axis changes. Per-run logs and reports go to
/// `runs/<index>-<value>/`.
pub fn cmd_ablate(cfg: &Config, axis: Axis, values: &[String], out: &Path, emit_gnuplot: bool) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(CliError::usage("--values is empty"));
    }
    let mut runs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = cfg.clone();
        let label = axis.apply(&mut c, v)?;
        runs.push((label, c));
    }
    let data = Dataset::load(cfg)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(sweep_threads()?)
        .build()
        .map_err(|e| CliError::usage(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<AblationRow>> = pool.install(|| {
        runs.par_iter()
            .map(|(label, c)| {
                log::info!("{} = {label}: training", axis.name());
                let (model, log) = train(c, &data)?;
                let report = evaluate(c, &data, &model)?;
                Ok(AblationRow {
                    value: label.clone(),
                    report,
                    log,
                })
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;

    for (i, row) in rows.iter().enumerate() {
        let dir = out.join("runs").join(format!("{i:02}-{}", row.value));
        create_dir(&dir)?;
        write_atomic(&dir.join(TRAIN_LOG_FILE), row.log.to_csv().as_bytes())?;
        write_atomic(&dir.join(REPORT_FILE), row.report.to_json()?.as_bytes())?;
    }
    let (csv_path, gp_path) = ablation_paths(out, axis);
    write_atomic(&csv_path, ablation_csv(&rows).as_bytes())?;
    if emit_gnuplot {
        let csv_name = csv_path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_atomic(&gp_path, gnuplot_stub(axis, &csv_name).as_bytes())?;
    }
    Ok(rows)
}

/// Runs every registered finite-difference check and writes the CSV.
/// Fails with the names of the checks over threshold.
pub fn cmd_gradcheck(out: &Path, corrupt: Option<&str>) -> Result<Vec<CheckResult>> {
    if let Some(op) = corrupt {
        gradcheck::validate_fault(op)?;
    }
    let results = gradcheck::run_all(corrupt.map(|op| (op, FAULT_FACTOR)))?;
    create_dir(out)?;
    write_atomic(&out.join(GRADCHECK_FILE), gradcheck::to_csv(&results).as_bytes())?;
    let failed: Vec<String> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} ({:.3e} >= {:.0e}, worst {})", r.name, r.max_rel_error, r.threshold, r.worst))
        .collect();
    if !failed.is_empty() {
        return Err(CliError::ChecksFailed(format!(
            "{} of {} gradient checks failed:\n  {}",
            failed.len(),
            results.len(),
            failed.join("\n  ")
        )));
    }
    Ok(results)
}
