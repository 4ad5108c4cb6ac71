//! Finite-difference verification of every differentiable op, layer and
//! loss, plus one end-to-end masked autoencoder pass.
//!
//! Each check builds a small problem, projects non-scalar outputs onto a
//! fixed random direction (`Σ c ⊙ out`), and compares reverse-mode
//! gradients with central differences for every input and parameter
//! scalar. Ops, layers and losses are scored entry by entry as
//! `|a − f| / (|f| + 1e-8)`. The end-to-end pass is scored per tensor as
//! `max|a − f| / max(‖f‖∞, ‖a‖∞, s)`, where the floor `s` is `1e-3` times
//! the largest finite-difference entry of the problem: some attention
//! gradients there are structurally zero and their finite differences are
//! pure round-off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::CsrAdjacency;
use crate::layers::{Activation, GinEps, GraphContext, Layer, LayerConfig, LayerKind};
use crate::loss::{reconstruction_loss, Criterion, LossConfig};
use crate::masking::{apply_input_mask, remask, sample_mask, MaskConfig, MaskPlan};
use crate::model::{Architecture, GraphMae, ModelSpec};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;
pub const PRIMITIVE_THRESHOLD: f64 = 1e-5;
pub const END_TO_END_THRESHOLD: f64 = 1e-4;
const ABSOLUTE_FLOOR: f64 = 1e-8;
const RELATIVE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    Op,
    Layer,
    Loss,
    EndToEnd,
}

impl CheckKind {
    pub fn metric(self) -> Metric {
        match self {
            Self::EndToEnd => Metric::Scaled,
            _ => Metric::Elementwise,
        }
    }

    pub fn threshold(self) -> f64 {
        match self {
            Self::EndToEnd => END_TO_END_THRESHOLD,
            _ => PRIMITIVE_THRESHOLD,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Op => "op",
            Self::Layer => "layer",
            Self::Loss => "loss",
            Self::EndToEnd => "end_to_end",
        }
    }
}

/// How analytic and numeric gradients are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Per entry, relative to the finite difference.
    Elementwise,
    /// Per tensor, with a floor tied to the problem's gradient scale.
    Scaled,
}

type Forward = Box<dyn Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var>>;

/// A differentiable function of some input tensors and a parameter store.
pub struct Problem {
    pub store: ParamStore,
    pub inputs: Vec<Tensor>,
    forward: Forward,
}

impl Problem {
    pub fn new(store: ParamStore, inputs: Vec<Tensor>, forward: impl Fn(&mut Tape, &ParamStore, &[Var]) -> Result<Var> + 'static) -> Self {
        Self {
            store,
            inputs,
            forward: Box::new(forward),
        }
    }

    /// Runs the function and reduces it to a scalar.
    fn scalar(&self, tape: &mut Tape, store: &ParamStore, inputs: &[Tensor]) -> Result<(Vec<Var>, Var)> {
        let vars = inputs.iter().map(|t| tape.leaf(t.clone())).collect::<Result<Vec<_>>>()?;
        let out = (self.forward)(tape, store, &vars)?;
        if tape.value(out).is_scalar() {
            return Ok((vars, out));
        }
        let (r, c) = tape.shape(out);
        let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee);
        let dir = tape.leaf(Tensor::uniform(r, c, -1.0, 1.0, &mut rng))?;
        let prod = tape.mul(out, dir)?;
        Ok((vars, tape.sum(prod)?))
    }

    fn loss_value(&self, store: &ParamStore, inputs: &[Tensor]) -> Result<f64> {
        let mut tape = Tape::inference();
        let (_, l) = self.scalar(&mut tape, store, inputs)?;
        Ok(tape.value(l).get(0, 0))
    }

    /// Worst relative error over all inputs and parameters, with the name
    /// of the offending tensor.
    pub fn max_relative_error(&self, metric: Metric, fault: Option<(&str, f64)>) -> Result<(f64, String)> {
        let mut store = self.store.clone();
        store.zero_grad();
        let mut tape = Tape::new();
        if let Some((op, factor)) = fault {
            tape.inject_backward_fault(op, factor);
        }
        let (vars, loss) = self.scalar(&mut tape, &store, &self.inputs)?;
        let grads = tape.backward(loss, &mut store)?;

        let mut pairs: Vec<(String, Tensor, Tensor)> = Vec::new();
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(self.inputs[k].rows(), self.inputs[k].cols()));
            let mut inputs = self.inputs.clone();
            let mut numeric = Tensor::zeros(analytic.rows(), analytic.cols());
            for i in 0..numeric.len() {
                let x0 = inputs[k].data()[i];
                inputs[k].data_mut()[i] = x0 + STEP;
                let up = self.loss_value(&self.store, &inputs)?;
                inputs[k].data_mut()[i] = x0 - STEP;
                let down = self.loss_value(&self.store, &inputs)?;
                inputs[k].data_mut()[i] = x0;
                numeric.data_mut()[i] = (up - down) / (2.0 * STEP);
            }
            pairs.push((format!("input{k}"), analytic, numeric));
        }
        for id in store.ids() {
            let analytic = store.grad(id).clone();
            let mut probe = self.store.clone();
            let mut numeric = Tensor::zeros(analytic.rows(), analytic.cols());
            for i in 0..numeric.len() {
                let x0 = probe.value(id).data()[i];
                probe.get_mut(id).value.data_mut()[i] = x0 + STEP;
                let up = self.loss_value(&probe, &self.inputs)?;
                probe.get_mut(id).value.data_mut()[i] = x0 - STEP;
                let down = self.loss_value(&probe, &self.inputs)?;
                probe.get_mut(id).value.data_mut()[i] = x0;
                numeric.data_mut()[i] = (up - down) / (2.0 * STEP);
            }
            pairs.push((store.get(id).id.clone(), analytic, numeric));
        }
        let scale = pairs.iter().map(|(_, _, f)| inf_norm(f)).fold(0.0, f64::max);
        let floor = (RELATIVE_FLOOR * scale).max(ABSOLUTE_FLOOR);
        let mut worst = (0.0, String::new());
        for (name, a, f) in pairs {
            let err = match metric {
                Metric::Elementwise => elementwise_error(&a, &f),
                Metric::Scaled => relative_error(&a, &f, floor),
            };
            if err > worst.0 || worst.1.is_empty() {
                worst = (err, name);
            }
        }
        Ok(worst)
    }
}

fn inf_norm(t: &Tensor) -> f64 {
    t.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// `max_i |a_i − f_i| / (|f_i| + 1e-8)`.
pub fn elementwise_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, f)| (a - f).abs() / (f.abs() + 1e-8))
        .fold(0.0, f64::max)
}

pub fn relative_error(analytic: &Tensor, numeric: &Tensor, floor: f64) -> f64 {
    let denom = inf_norm(analytic).max(inf_norm(numeric)).max(floor);
    analytic.max_abs_diff(numeric) / denom
}

pub struct Check {
    pub name: &'static str,
    pub kind: CheckKind,
    build: fn() -> Result<Problem>,
}

impl Check {
    pub fn problem(&self) -> Result<Problem> {
        (self.build)()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub kind: CheckKind,
    pub max_rel_error: f64,
    pub threshold: f64,
    pub passed: bool,
    /// Tensor that produced the maximum.
    pub worst: String,
}

/// Runs one check, optionally scaling the backward contributions of the
/// op named in `fault`.
pub fn run_check(check: &Check, fault: Option<(&str, f64)>) -> Result<CheckResult> {
    let (err, worst) = check.problem()?.max_relative_error(check.kind.metric(), fault)?;
    let threshold = check.kind.threshold();
    Ok(CheckResult {
        name: check.name.to_string(),
        kind: check.kind,
        max_rel_error: err,
        threshold,
        passed: err < threshold,
        worst,
    })
}

pub fn run_all(fault: Option<(&str, f64)>) -> Result<Vec<CheckResult>> {
    registry().iter().map(|c| run_check(c, fault)).collect()
}

pub fn to_csv(results: &[CheckResult]) -> String {
    let mut s = String::from("check,kind,max_rel_error,threshold,passed\n");
    for r in results {
        s.push_str(&format!(
            "{},{},{:e},{:e},{}\n",
            r.name,
            r.kind.as_str(),
            r.max_rel_error,
            r.threshold,
            r.passed
        ));
    }
    s
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_t(r: usize, c: usize, seed: u64) -> Tensor {
    Tensor::uniform(r, c, -1.0, 1.0, &mut rng(seed))
}

/// Entries bounded away from zero, for ops with a kink there.
fn off_zero(r: usize, c: usize, seed: u64) -> Tensor {
    let mut g = rng(seed);
    let data = (0..r * c)
        .map(|_| {
            let m = g.random_range(0.1..1.0);
            if g.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::from_vec(r, c, data).expect("sized")
}

fn positive(r: usize, c: usize, seed: u64) -> Tensor {
    Tensor::uniform(r, c, 0.5, 2.0, &mut rng(seed))
}

fn random_graph(n: usize, p: f64, seed: u64) -> CsrAdjacency {
    let mut g = rng(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if g.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    CsrAdjacency::from_undirected_edges(n, &edges).expect("valid edges")
}

fn op(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static) -> Result<Problem> {
    Ok(Problem::new(ParamStore::new(), inputs, move |t, _, v| f(t, v)))
}

fn layer_problem(kind: LayerKind, heads: usize, concat: bool, activation: Activation, seed: u64) -> Result<Problem> {
    let adj = random_graph(7, 0.4, seed);
    let ctx = GraphContext::new(&adj)?;
    let mut cfg = if kind == LayerKind::Gat {
        LayerConfig::gat(4, 3, heads, concat, activation)
    } else {
        LayerConfig::new(kind, 4, 3, activation)
    };
    cfg.gin_eps = GinEps::Learnable;
    let mut store = ParamStore::new();
    let layer = Layer::init(cfg, "l", &mut store, &mut rng(seed + 1))?;
    // Nudge parameters off their zero/constant initial values.
    for p in store.iter_mut() {
        let noise = rand_t(p.value.rows(), p.value.cols(), seed + 2);
        p.value.add_assign(&noise.map(|v| 0.3 * v));
    }
    Ok(Problem::new(store, vec![rand_t(7, 4, seed + 3)], move |t, s, v| layer.forward(t, s, &ctx, v[0])))
}

fn loss_problem(cfg: LossConfig, seed: u64) -> Result<Problem> {
    let x = rand_t(6, 4, seed);
    let plan = MaskPlan::from_masked(6, vec![0, 2, 3, 5])?;
    Ok(Problem::new(ParamStore::new(), vec![rand_t(6, 4, seed + 1)], move |t, _, v| {
        reconstruction_loss(t, &x, v[0], &plan, &cfg)
    }))
}

fn end_to_end() -> Result<Problem> {
    let n = 12;
    let adj = random_graph(n, 0.3, 77);
    let ctx = GraphContext::new(&adj)?;
    let x = rand_t(n, 6, 78);
    let spec = ModelSpec {
        hidden_dim: 8,
        heads: 2,
        ..ModelSpec::default()
    };
    let arch = Architecture::from_spec(6, &spec)?;
    let mut model = GraphMae::new(arch, 79)?;
    for p in model.params.iter_mut() {
        let noise = rand_t(p.value.rows(), p.value.cols(), 80);
        p.value.add_assign(&noise.map(|v| 0.3 * v));
    }
    let plan = sample_mask(
        n,
        &MaskConfig {
            mask_ratio: 0.5,
            replace_rate: 0.34,
            seed: 81,
        },
    )?;
    let loss = LossConfig::sce(3.0);
    let store = model.params.clone();
    model.params = ParamStore::new();
    Ok(Problem::new(store, Vec::new(), move |t, s, _| {
        let x_mask = t.param(s, model.x_mask)?;
        let corrupted = apply_input_mask(t, &x, &plan, x_mask)?;
        let h = model.encoder.forward(t, s, &ctx, corrupted)?;
        let h_dmask = t.param(s, model.h_dmask)?;
        let h = remask(t, h, &plan, h_dmask)?;
        let z = model.decoder.forward(t, s, &ctx, h)?;
        reconstruction_loss(t, &x, z, &plan, &loss)
    }))
}

/// Every registered check, in report order.
pub fn registry() -> Vec<Check> {
    use CheckKind::*;
    macro_rules! check {
        ($name:expr, $kind:expr, $build:expr) => {
            Check {
                name: $name,
                kind: $kind,
                build: $build,
            }
        };
    }
    vec![
        check!("matmul", Op, || op(vec![rand_t(3, 4, 1), rand_t(4, 2, 2)], |t, v| t.matmul(v[0], v[1]))),
        check!("transpose", Op, || op(vec![rand_t(3, 4, 3)], |t, v| t.transpose(v[0]))),
        check!("add", Op, || op(vec![rand_t(3, 4, 4), rand_t(3, 4, 5)], |t, v| t.add(v[0], v[1]))),
        check!("sub", Op, || op(vec![rand_t(3, 4, 6), rand_t(3, 4, 7)], |t, v| t.sub(v[0], v[1]))),
        check!("add_row", Op, || op(vec![rand_t(3, 4, 8), rand_t(1, 4, 9)], |t, v| t.add_row(v[0], v[1]))),
        check!("mul", Op, || op(vec![rand_t(3, 4, 10), rand_t(3, 4, 11)], |t, v| t.mul(v[0], v[1]))),
        check!("scale", Op, || op(vec![rand_t(3, 4, 12)], |t, v| t.scale(v[0], -1.7))),
        check!("scale_by", Op, || op(vec![rand_t(1, 1, 13), rand_t(3, 4, 14)], |t, v| t.scale_by(v[0], v[1]))),
        check!("concat_cols", Op, || op(vec![rand_t(3, 2, 15), rand_t(3, 3, 16)], |t, v| t.concat_cols(&[v[0], v[1]]))),
        check!("gather_rows", Op, || op(vec![rand_t(4, 3, 17)], |t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 2]))),
        check!("scatter_rows", Op, || op(vec![rand_t(5, 3, 18), rand_t(2, 3, 19)], |t, v| t.scatter_rows(v[0], &[3, 1], v[1]))),
        check!("sum", Op, || op(vec![rand_t(3, 4, 20)], |t, v| t.sum(v[0]))),
        check!("mean", Op, || op(vec![rand_t(3, 4, 21)], |t, v| t.mean(v[0]))),
        check!("sum_rows", Op, || op(vec![rand_t(3, 4, 22)], |t, v| t.sum_rows(v[0]))),
        check!("mean_rows", Op, || op(vec![rand_t(3, 4, 23)], |t, v| t.mean_rows(v[0]))),
        check!("power", Op, || op(vec![positive(3, 4, 24)], |t, v| t.power(v[0], 2.5))),
        check!("leaky_relu", Op, || op(vec![off_zero(3, 4, 25)], |t, v| t.leaky_relu(v[0], 0.2))),
        check!("prelu", Op, || op(vec![off_zero(3, 4, 26), rand_t(1, 4, 27)], |t, v| t.prelu(v[0], v[1]))),
        check!("exp", Op, || op(vec![rand_t(3, 4, 28)], |t, v| t.exp(v[0]))),
        check!("log", Op, || op(vec![positive(3, 4, 29)], |t, v| t.log(v[0]))),
        check!("l2_norm_rows", Op, || op(vec![off_zero(3, 4, 30)], |t, v| t.l2_norm_rows(v[0], 1e-12))),
        check!("spmm", Op, || {
            let adj = random_graph(8, 0.4, 31).with_self_loops().gcn_normalize()?;
            op(vec![rand_t(8, 3, 32)], move |t, v| t.spmm(&adj, v[0]))
        }),
        check!("edge_spmm", Op, || {
            let adj = random_graph(8, 0.4, 33).with_self_loops();
            let nnz = adj.nnz();
            op(vec![rand_t(nnz, 1, 34), rand_t(8, 3, 35)], move |t, v| t.edge_spmm(&adj, v[0], v[1]))
        }),
        check!("segment_softmax", Op, || {
            let adj = random_graph(8, 0.4, 36).with_self_loops();
            let offsets = adj.row_offsets().to_vec();
            op(vec![rand_t(adj.nnz(), 1, 37)], move |t, v| t.segment_softmax(v[0], &offsets))
        }),
        check!("input_mask", Op, || {
            let x = rand_t(6, 3, 38);
            let plan = sample_mask(6, &MaskConfig { mask_ratio: 0.67, replace_rate: 0.5, seed: 39 })?;
            op(vec![rand_t(1, 3, 40)], move |t, v| apply_input_mask(t, &x, &plan, v[0]))
        }),
        check!("remask", Op, || {
            let plan = MaskPlan::from_masked(6, vec![1, 4])?;
            op(vec![rand_t(6, 3, 41), rand_t(1, 3, 42)], move |t, v| remask(t, v[0], &plan, v[1]))
        }),
        check!("layer_gcn", Layer, || layer_problem(LayerKind::Gcn, 1, true, Activation::Prelu, 50)),
        check!("layer_gat_concat", Layer, || layer_problem(LayerKind::Gat, 2, true, Activation::Prelu, 51)),
        check!("layer_gat_mean", Layer, || layer_problem(LayerKind::Gat, 2, false, Activation::Identity, 52)),
        check!("layer_gin", Layer, || layer_problem(LayerKind::Gin, 1, true, Activation::Prelu, 53)),
        check!("layer_mlp", Layer, || layer_problem(LayerKind::Mlp, 1, true, Activation::Identity, 54)),
        check!("loss_sce_gamma1", Loss, || loss_problem(LossConfig::sce(1.0), 60)),
        check!("loss_sce_gamma2", Loss, || loss_problem(LossConfig::sce(2.0), 61)),
        check!("loss_sce_gamma3", Loss, || loss_problem(LossConfig::sce(3.0), 62)),
        check!("loss_cosine", Loss, || loss_problem(LossConfig { criterion: Criterion::Cosine, ..LossConfig::default() }, 63)),
        check!("loss_mse", Loss, || loss_problem(LossConfig { criterion: Criterion::Mse, ..LossConfig::default() }, 64)),
        check!("end_to_end_gat_sce", EndToEnd, end_to_end),
    ]
}

/// Name of every op that a fault can target, in the tape's spelling.
pub fn fault_targets() -> &'static [&'static str] {
    &[
        "matmul", "transpose", "add", "sub", "add_row", "mul", "scale", "scale_by", "concat_cols", "gather_rows",
        "scatter_rows", "sum", "mean", "sum_rows", "mean_rows", "power", "leaky_relu", "prelu", "exp", "log",
        "l2_norm_rows", "spmm", "edge_spmm", "segment_softmax", "sce_loss", "mse_loss",
    ]
}

pub fn validate_fault(op: &str) -> Result<()> {
    if fault_targets().contains(&op) {
        Ok(())
    } else {
        Err(Error::validation(format!("unknown op {op:?} for fault injection")))
    }
}
