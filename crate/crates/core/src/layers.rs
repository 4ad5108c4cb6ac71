//! GCN, GAT, GIN and MLP layers and the layer stacks used as encoder and
//! decoder.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{CsrAdjacency, Graph};
use crate::tensor::Tensor;

pub const PRELU_INIT: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Gcn,
    Gat,
    Gin,
    Mlp,
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Self::Gcn),
            "gat" => Ok(Self::Gat),
            "gin" => Ok(Self::Gin),
            "mlp" => Ok(Self::Mlp),
            other => Err(Error::validation(format!("unknown layer kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for LayerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Gcn => "gcn",
            Self::Gat => "gat",
            Self::Gin => "gin",
            Self::Mlp => "mlp",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Prelu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GinEps {
    /// Trainable, initialized at zero.
    Learnable,
    Fixed(f64),
}

/// Static description of one layer.
///
/// `out_dim` is per head. GAT layers with `concat` produce
/// `heads · out_dim` columns; without it the heads are averaged and the
/// layer produces `out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub heads: usize,
    pub concat: bool,
    pub negative_slope: f64,
    pub gin_eps: GinEps,
    pub activation: Activation,
}

impl LayerConfig {
    pub fn new(kind: LayerKind, in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            kind,
            in_dim,
            out_dim,
            heads: 1,
            concat: false,
            negative_slope: 0.2,
            gin_eps: GinEps::Learnable,
            activation,
        }
    }

    pub fn gat(in_dim: usize, out_dim: usize, heads: usize, concat: bool, activation: Activation) -> Self {
        Self {
            heads,
            concat,
            ..Self::new(LayerKind::Gat, in_dim, out_dim, activation)
        }
    }

    pub fn output_dim(&self) -> usize {
        if self.kind == LayerKind::Gat && self.concat {
            self.heads * self.out_dim
        } else {
            self.out_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::validation(format!("{} layer has a zero dimension", self.kind)));
        }
        if self.kind == LayerKind::Gat && self.heads == 0 {
            return Err(Error::validation("GAT layer needs at least one head"));
        }
        if self.kind != LayerKind::Gat && self.heads != 1 {
            return Err(Error::validation(format!("{} layer must have exactly one head", self.kind)));
        }
        Ok(())
    }
}

/// The adjacency variants a graph is consumed in: GIN uses the raw
/// structure, GAT the structure with self-loops, GCN the symmetrically
/// normalized structure with self-loops.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub raw: CsrAdjacency,
    pub with_loops: CsrAdjacency,
    pub gcn_norm: CsrAdjacency,
    arc_rows: Vec<usize>,
}

impl GraphContext {
    pub fn new(adjacency: &CsrAdjacency) -> Result<Self> {
        let with_loops = adjacency.with_self_loops();
        let gcn_norm = with_loops.gcn_normalize()?;
        let arc_rows = with_loops.arc_rows();
        Ok(Self {
            raw: adjacency.clone(),
            with_loops,
            gcn_norm,
            arc_rows,
        })
    }

    pub fn from_graph(g: &Graph) -> Result<Self> {
        Self::new(&g.adjacency)
    }

    pub fn n(&self) -> usize {
        self.raw.n()
    }
}

#[derive(Debug, Clone)]
struct GatHead {
    w: ParamId,
    a_src: ParamId,
    a_dst: ParamId,
}

/// Two linear maps with a PReLU in between.
#[derive(Debug, Clone)]
struct Mlp2 {
    w1: ParamId,
    b1: ParamId,
    slope: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
enum Weights {
    Gcn { w: ParamId },
    Gat { heads: Vec<GatHead> },
    Gin { eps: Option<ParamId>, mlp: Mlp2 },
    Mlp { mlp: Mlp2 },
}

/// A layer's configuration bound to its parameters in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Layer {
    pub config: LayerConfig,
    weights: Weights,
    act_slope: Option<ParamId>,
}

fn add_mlp2<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    in_dim: usize,
    out_dim: usize,
    rng: &mut R,
) -> Result<Mlp2> {
    Ok(Mlp2 {
        w1: store.add(format!("{prefix}.mlp.w1"), Tensor::xavier_uniform(in_dim, out_dim, rng))?,
        b1: store.add(format!("{prefix}.mlp.b1"), Tensor::zeros(1, out_dim))?,
        slope: store.add(format!("{prefix}.mlp.prelu"), Tensor::filled(1, out_dim, PRELU_INIT))?,
        w2: store.add(format!("{prefix}.mlp.w2"), Tensor::xavier_uniform(out_dim, out_dim, rng))?,
        b2: store.add(format!("{prefix}.mlp.b2"), Tensor::zeros(1, out_dim))?,
    })
}

impl Layer {
    /// Allocates and initializes the layer's parameters under `prefix`.
    pub fn init<R: Rng + ?Sized>(config: LayerConfig, prefix: &str, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (i, o) = (config.in_dim, config.out_dim);
        let weights = match config.kind {
            LayerKind::Gcn => Weights::Gcn {
                w: store.add(format!("{prefix}.gcn.w"), Tensor::xavier_uniform(i, o, rng))?,
            },
            LayerKind::Gat => {
                let mut heads = Vec::with_capacity(config.heads);
                for h in 0..config.heads {
                    let p = format!("{prefix}.gat.head{h}");
                    heads.push(GatHead {
                        w: store.add(format!("{p}.w"), Tensor::xavier_uniform(i, o, rng))?,
                        a_src: store.add(format!("{p}.a_src"), Tensor::xavier_uniform(o, 1, rng))?,
                        a_dst: store.add(format!("{p}.a_dst"), Tensor::xavier_uniform(o, 1, rng))?,
                    });
                }
                Weights::Gat { heads }
            }
            LayerKind::Gin => {
                let p = format!("{prefix}.gin");
                let eps = match config.gin_eps {
                    GinEps::Learnable => Some(store.add(format!("{p}.eps"), Tensor::scalar(0.0))?),
                    GinEps::Fixed(_) => None,
                };
                Weights::Gin {
                    eps,
                    mlp: add_mlp2(store, &p, i, o, rng)?,
                }
            }
            LayerKind::Mlp => Weights::Mlp {
                mlp: add_mlp2(store, &format!("{prefix}.mlp"), i, o, rng)?,
            },
        };
        let act_slope = match config.activation {
            Activation::Prelu => Some(store.add(
                format!("{prefix}.act.prelu"),
                Tensor::filled(1, config.output_dim(), PRELU_INIT),
            )?),
            Activation::Identity => None,
        };
        Ok(Self {
            config,
            weights,
            act_slope,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, h: Var) -> Result<Var> {
        let (n, d) = tape.shape(h);
        if d != self.config.in_dim {
            return Err(Error::shape(
                "layer",
                format!("{} layer expects {} input columns, got {d}", self.config.kind, self.config.in_dim),
            ));
        }
        if n != ctx.n() {
            return Err(Error::shape("layer", format!("{n} feature rows for {} nodes", ctx.n())));
        }
        let out = match &self.weights {
            Weights::Gcn { w } => gcn_forward(tape, store, &ctx.gcn_norm, h, *w)?,
            Weights::Gat { heads } => gat_forward(tape, store, ctx, h, heads, &self.config)?,
            Weights::Gin { eps, mlp } => {
                let agg = tape.spmm(&ctx.raw, h)?;
                let own = match (eps, self.config.gin_eps) {
                    (Some(e), _) => {
                        let e = tape.param(store, *e)?;
                        let one = tape.leaf(Tensor::scalar(1.0))?;
                        let s = tape.add(one, e)?;
                        tape.scale_by(s, h)?
                    }
                    (None, GinEps::Fixed(e)) => tape.scale(h, 1.0 + e)?,
                    (None, GinEps::Learnable) => unreachable!("learnable eps always has a parameter"),
                };
                let z = tape.add(own, agg)?;
                mlp2_forward(tape, store, mlp, z)?
            }
            Weights::Mlp { mlp } => mlp2_forward(tape, store, mlp, h)?,
        };
        match self.act_slope {
            Some(s) => {
                let s = tape.param(store, s)?;
                tape.prelu(out, s)
            }
            None => Ok(out),
        }
    }
}

fn gcn_forward(tape: &mut Tape, store: &ParamStore, adj_norm: &CsrAdjacency, h: Var, w: ParamId) -> Result<Var> {
    let agg = tape.spmm(adj_norm, h)?;
    let w = tape.param(store, w)?;
    tape.matmul(agg, w)
}

fn gat_forward(
    tape: &mut Tape,
    store: &ParamStore,
    ctx: &GraphContext,
    h: Var,
    heads: &[GatHead],
    cfg: &LayerConfig,
) -> Result<Var> {
    let adj = &ctx.with_loops;
    let mut outs = Vec::with_capacity(heads.len());
    for head in heads {
        let w = tape.param(store, head.w)?;
        let wh = tape.matmul(h, w)?;
        let a_src = tape.param(store, head.a_src)?;
        let a_dst = tape.param(store, head.a_dst)?;
        // Node i aggregates over its row; i is the attending node, j the
        // neighbor being attended to.
        let s = tape.matmul(wh, a_src)?;
        let t = tape.matmul(wh, a_dst)?;
        let s_arc = tape.gather_rows(s, &ctx.arc_rows)?;
        let t_arc = tape.gather_rows(t, adj.col_indices())?;
        let e = tape.add(s_arc, t_arc)?;
        let e = tape.leaky_relu(e, cfg.negative_slope)?;
        let alpha = tape.segment_softmax(e, adj.row_offsets())?;
        outs.push(tape.edge_spmm(adj, alpha, wh)?);
    }
    if outs.len() == 1 {
        return Ok(outs[0]);
    }
    if cfg.concat {
        tape.concat_cols(&outs)
    } else {
        let mut acc = outs[0];
        for &o in &outs[1..] {
            acc = tape.add(acc, o)?;
        }
        tape.scale(acc, 1.0 / outs.len() as f64)
    }
}

fn mlp2_forward(tape: &mut Tape, store: &ParamStore, mlp: &Mlp2, x: Var) -> Result<Var> {
    let w1 = tape.param(store, mlp.w1)?;
    let b1 = tape.param(store, mlp.b1)?;
    let slope = tape.param(store, mlp.slope)?;
    let w2 = tape.param(store, mlp.w2)?;
    let b2 = tape.param(store, mlp.b2)?;
    let z = tape.matmul(x, w1)?;
    let z = tape.add_row(z, b1)?;
    let z = tape.prelu(z, slope)?;
    let z = tape.matmul(z, w2)?;
    tape.add_row(z, b2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Encoder,
    Decoder,
}

/// An ordered stack of layers (the encoder or the decoder).
#[derive(Debug, Clone)]
pub struct Model {
    pub role: Role,
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn init<R: Rng + ?Sized>(role: Role, configs: &[LayerConfig], store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        for pair in configs.windows(2) {
            if pair[0].output_dim() != pair[1].in_dim {
                return Err(Error::validation(format!(
                    "layer output {} does not feed next layer input {}",
                    pair[0].output_dim(),
                    pair[1].in_dim
                )));
            }
        }
        let prefix = match role {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
        };
        let layers = configs
            .iter()
            .enumerate()
            .map(|(i, c)| Layer::init(c.clone(), &format!("{prefix}.{i}"), store, rng))
            .collect::<Result<_>>()?;
        Ok(Self { role, layers })
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.first().map(|l| l.config.in_dim)
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.last().map(|l| l.config.output_dim())
    }

    /// Applies every layer in order. An empty stack is the identity.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, ctx: &GraphContext, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(tape, store, ctx, h)?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    fn run(layer: &Layer, store: &ParamStore, adj: &CsrAdjacency, x: &Tensor) -> Tensor {
        let ctx = GraphContext::new(adj).unwrap();
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let out = layer.forward(&mut tape, store, &ctx, xv).unwrap();
        tape.value(out).clone()
    }

    fn set(store: &mut ParamStore, name: &str, value: Tensor) {
        let id = store.find(name).unwrap_or_else(|| panic!("no param {name}"));
        store.get_mut(id).value = value;
    }

    #[test]
    fn gcn_single_node_identity() {
        let mut store = ParamStore::new();
        let layer = Layer::init(LayerConfig::new(LayerKind::Gcn, 2, 2, Activation::Identity), "l", &mut store, &mut rng()).unwrap();
        set(&mut store, "l.gcn.w", Tensor::identity(2));
        let x = Tensor::from_rows(&[vec![0.3, -2.0]]).unwrap();
        assert_eq!(run(&layer, &store, &CsrAdjacency::empty(1), &x), x);
    }

    #[test]
    fn gcn_path_example() {
        let mut store = ParamStore::new();
        let layer = Layer::init(LayerConfig::new(LayerKind::Gcn, 1, 1, Activation::Identity), "l", &mut store, &mut rng()).unwrap();
        set(&mut store, "l.gcn.w", Tensor::scalar(1.0));
        let adj = CsrAdjacency::from_undirected_edges(2, &[(0, 1)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0], vec![3.0]]).unwrap();
        assert_eq!(run(&layer, &store, &adj, &x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn gat_zero_attention_is_mean_aggregation() {
        let mut store = ParamStore::new();
        let layer = Layer::init(LayerConfig::gat(2, 3, 1, false, Activation::Identity), "l", &mut store, &mut rng()).unwrap();
        set(&mut store, "l.gat.head0.a_src", Tensor::zeros(3, 1));
        set(&mut store, "l.gat.head0.a_dst", Tensor::zeros(3, 1));
        let adj = CsrAdjacency::from_undirected_edges(4, &[(0, 1), (0, 2), (2, 3)]).unwrap();
        let x = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.5, 2.0], vec![-1.0, 1.0], vec![3.0, -2.0]]).unwrap();
        let out = run(&layer, &store, &adj, &x);
        let wh = x.matmul(store.value(store.find("l.gat.head0.w").unwrap())).unwrap();
        let loops = adj.with_self_loops();
        for i in 0..4 {
            let nb = loops.neighbors(i);
            for c in 0..3 {
                let mean = nb.iter().map(|&j| wh.get(j, c)).sum::<f64>() / nb.len() as f64;
                assert!((out.get(i, c) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gat_single_node_is_linear_map() {
        let mut store = ParamStore::new();
        let layer = Layer::init(LayerConfig::gat(3, 2, 1, false, Activation::Identity), "l", &mut store, &mut rng()).unwrap();
        let x = Tensor::from_rows(&[vec![0.2, -0.4, 1.0]]).unwrap();
        let expected = x.matmul(store.value(store.find("l.gat.head0.w").unwrap())).unwrap();
        assert!(run(&layer, &store, &CsrAdjacency::empty(1), &x).max_abs_diff(&expected) < 1e-15);
    }

    fn identity_gin(eps: GinEps) -> (Layer, ParamStore) {
        let mut store = ParamStore::new();
        let mut cfg = LayerConfig::new(LayerKind::Gin, 1, 1, Activation::Identity);
        cfg.gin_eps = eps;
        let layer = Layer::init(cfg, "l", &mut store, &mut rng()).unwrap();
        set(&mut store, "l.gin.mlp.w1", Tensor::scalar(1.0));
        set(&mut store, "l.gin.mlp.w2", Tensor::scalar(1.0));
        set(&mut store, "l.gin.mlp.prelu", Tensor::scalar(1.0));
        (layer, store)
    }

    #[test]
    fn gin_isolated_node_identity() {
        let (layer, store) = identity_gin(GinEps::Learnable);
        let x = Tensor::scalar(-1.7);
        assert_eq!(run(&layer, &store, &CsrAdjacency::empty(1), &x), x);
    }

    #[test]
    fn gin_star_center_sums() {
        let (layer, store) = identity_gin(GinEps::Fixed(0.0));
        let adj = CsrAdjacency::from_undirected_edges(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let x = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(run(&layer, &store, &adj, &x).get(0, 0), 6.0);
    }

    #[test]
    fn gin_eps_minus_one_cancels_self() {
        let (layer, store) = identity_gin(GinEps::Fixed(-1.0));
        let x = Tensor::scalar(4.2);
        assert_eq!(run(&layer, &store, &CsrAdjacency::empty(1), &x).get(0, 0), 0.0);
    }

    #[test]
    fn dims_checked() {
        let mut store = ParamStore::new();
        let layer = Layer::init(LayerConfig::new(LayerKind::Gcn, 3, 2, Activation::Prelu), "l", &mut store, &mut rng()).unwrap();
        let ctx = GraphContext::new(&CsrAdjacency::empty(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(2, 4)).unwrap();
        assert!(layer.forward(&mut tape, &store, &ctx, x).is_err());
        let bad = [LayerConfig::new(LayerKind::Gcn, 3, 2, Activation::Prelu), LayerConfig::new(LayerKind::Gcn, 3, 2, Activation::Prelu)];
        assert!(Model::init(Role::Encoder, &bad, &mut ParamStore::new(), &mut rng()).is_err());
    }

    #[test]
    fn empty_model_is_identity() {
        let m = Model::init(Role::Encoder, &[], &mut ParamStore::new(), &mut rng()).unwrap();
        let ctx = GraphContext::new(&CsrAdjacency::empty(2)).unwrap();
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::filled(2, 3, 0.5)).unwrap();
        let h = m.forward(&mut tape, &ParamStore::new(), &ctx, x).unwrap();
        assert_eq!(tape.value(h), tape.value(x));
    }
}
