//! The autoencoder: encoder and decoder stacks plus the two mask tokens,
//! all sharing one parameter store.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{checkpoint, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::io::write_atomic;
use crate::graph::Graph;
use crate::layers::{Activation, GinEps, GraphContext, LayerConfig, LayerKind, Model, Role};
use crate::loss::{reconstruction_loss, LossConfig};
use crate::masking::{apply_input_mask, remask, MaskPlan};
use crate::tensor::Tensor;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const ARCHITECTURE_FILE: &str = "architecture.json";

/// High-level knobs from which the layer lists are derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder_kind: LayerKind,
    pub decoder_kind: LayerKind,
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// Heads of every GAT encoder layer (concatenated).
    pub heads: usize,
    /// Heads of the GAT decoder layer (averaged).
    pub decoder_heads: usize,
    pub negative_slope: f64,
    pub remask: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            encoder_kind: LayerKind::Gat,
            decoder_kind: LayerKind::Gat,
            num_layers: 2,
            hidden_dim: 512,
            heads: 4,
            decoder_heads: 1,
            negative_slope: 0.2,
            remask: true,
        }
    }
}

/// Serializable description of a full autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub encoder: Vec<LayerConfig>,
    pub decoder: Vec<LayerConfig>,
    pub remask: bool,
}

fn layer(kind: LayerKind, in_dim: usize, out_dim: usize, heads: usize, concat: bool, act: Activation, slope: f64) -> Result<LayerConfig> {
    let mut cfg = if kind == LayerKind::Gat {
        if concat {
            if out_dim % heads != 0 {
                return Err(Error::validation(format!("hidden size {out_dim} not divisible by {heads} heads")));
            }
            LayerConfig::gat(in_dim, out_dim / heads, heads, true, act)
        } else {
            LayerConfig::gat(in_dim, out_dim, heads, false, act)
        }
    } else {
        LayerConfig::new(kind, in_dim, out_dim, act)
    };
    cfg.negative_slope = slope;
    cfg.gin_eps = GinEps::Learnable;
    Ok(cfg)
}

impl Architecture {
    pub fn from_spec(feature_dim: usize, spec: &ModelSpec) -> Result<Self> {
        if spec.num_layers == 0 {
            return Err(Error::validation("encoder needs at least one layer"));
        }
        let mut encoder = Vec::with_capacity(spec.num_layers);
        for i in 0..spec.num_layers {
            let in_dim = if i == 0 { feature_dim } else { spec.hidden_dim };
            encoder.push(layer(
                spec.encoder_kind,
                in_dim,
                spec.hidden_dim,
                spec.heads,
                true,
                Activation::Prelu,
                spec.negative_slope,
            )?);
        }
        let decoder = vec![layer(
            spec.decoder_kind,
            spec.hidden_dim,
            feature_dim,
            spec.decoder_heads,
            false,
            Activation::Identity,
            spec.negative_slope,
        )?];
        let arch = Self {
            feature_dim,
            hidden_dim: spec.hidden_dim,
            encoder,
            decoder,
            remask: spec.remask,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        let enc_out = self.encoder.last().map_or(self.feature_dim, LayerConfig::output_dim);
        if enc_out != self.hidden_dim {
            return Err(Error::validation(format!("encoder produces {enc_out} columns, hidden_dim is {}", self.hidden_dim)));
        }
        if let Some(first) = self.encoder.first() {
            if first.in_dim != self.feature_dim {
                return Err(Error::validation("encoder input differs from feature_dim"));
            }
        }
        let dec_in = self.decoder.first().map_or(self.hidden_dim, |l| l.in_dim);
        let dec_out = self.decoder.last().map_or(self.hidden_dim, LayerConfig::output_dim);
        if dec_in != self.hidden_dim || dec_out != self.feature_dim {
            return Err(Error::validation(format!(
                "decoder maps {dec_in} -> {dec_out}, expected {} -> {}",
                self.hidden_dim, self.feature_dim
            )));
        }
        Ok(())
    }

    /// Re-masking only applies in front of a graph decoder; an MLP decoder
    /// would see identical inputs for every masked node.
    pub fn remask_active(&self) -> bool {
        self.remask && self.decoder.first().is_some_and(|l| l.kind != LayerKind::Mlp)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let arch: Self = serde_json::from_str(s)?;
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Debug, Clone)]
pub struct GraphMae {
    pub arch: Architecture,
    pub params: ParamStore,
    pub encoder: Model,
    pub decoder: Model,
    /// `[MASK]`, `1 × feature_dim`.
    pub x_mask: ParamId,
    /// `[DMASK]`, `1 × hidden_dim`.
    pub h_dmask: ParamId,
}

/// Intermediate values of one masked forward pass.
pub struct ForwardPass {
    pub corrupted: Var,
    pub codes: Var,
    pub remasked: Var,
    pub reconstruction: Var,
    pub loss: Var,
}

impl GraphMae {
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let encoder = Model::init(Role::Encoder, &arch.encoder, &mut params, &mut rng)?;
        let decoder = Model::init(Role::Decoder, &arch.decoder, &mut params, &mut rng)?;
        // A zero [DMASK] would zero every decoder input row that the loss
        // reads, leaving the decoder's source-side attention without gradient.
        let x_mask = params.add("token.mask", Tensor::xavier_uniform(1, arch.feature_dim, &mut rng))?;
        let h_dmask = params.add("token.dmask", Tensor::xavier_uniform(1, arch.hidden_dim, &mut rng))?;
        Ok(Self {
            arch,
            params,
            encoder,
            decoder,
            x_mask,
            h_dmask,
        })
    }

    /// `H = f_E(A, X)`.
    pub fn encode(&self, tape: &mut Tape, ctx: &GraphContext, x: Var) -> Result<Var> {
        self.encoder.forward(tape, &self.params, ctx, x)
    }

    /// `Z = f_D(A, H̃)`.
    pub fn decode(&self, tape: &mut Tape, ctx: &GraphContext, h_tilde: Var) -> Result<Var> {
        self.decoder.forward(tape, &self.params, ctx, h_tilde)
    }

    /// Mask, encode, re-mask, decode and score the masked rows.
    pub fn forward(&self, tape: &mut Tape, ctx: &GraphContext, x: &Tensor, plan: &MaskPlan, loss: &LossConfig) -> Result<ForwardPass> {
        let x_mask = tape.param(&self.params, self.x_mask)?;
        let corrupted = apply_input_mask(tape, x, plan, x_mask)?;
        let codes = self.encode(tape, ctx, corrupted)?;
        let remasked = if self.arch.remask_active() {
            let h_dmask = tape.param(&self.params, self.h_dmask)?;
            remask(tape, codes, plan, h_dmask)?
        } else {
            codes
        };
        let reconstruction = self.decode(tape, ctx, remasked)?;
        let loss = reconstruction_loss(tape, x, reconstruction, plan, loss)?;
        Ok(ForwardPass {
            corrupted,
            codes,
            remasked,
            reconstruction,
            loss,
        })
    }

    /// Node embeddings of the uncorrupted graph; nothing is recorded.
    pub fn embed(&self, g: &Graph) -> Result<Tensor> {
        let ctx = GraphContext::from_graph(g)?;
        self.embed_with(&ctx, &g.features)
    }

    pub fn embed_with(&self, ctx: &GraphContext, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.arch.feature_dim {
            return Err(Error::shape(
                "embed",
                format!("features have {} columns, model expects {}", x.cols(), self.arch.feature_dim),
            ));
        }
        let mut tape = Tape::inference();
        let xv = tape.leaf(x.clone())?;
        let h = self.encode(&mut tape, ctx, xv)?;
        Ok(tape.value(h).clone())
    }

    /// Reconstruction loss under a given plan, without recording gradients.
    pub fn masked_loss(&self, g: &Graph, plan: &MaskPlan, loss: &LossConfig) -> Result<f64> {
        let ctx = GraphContext::from_graph(g)?;
        let mut tape = Tape::inference();
        let pass = self.forward(&mut tape, &ctx, &g.features, plan, loss)?;
        Ok(tape.value(pass.loss).get(0, 0))
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        checkpoint::encode_params(&self.params)
    }

    /// Writes `model.ckpt` and `architecture.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join(CHECKPOINT_FILE), &self.checkpoint_bytes())?;
        write_atomic(&dir.join(ARCHITECTURE_FILE), self.arch.to_json()?.as_bytes())
    }

    /// Rebuilds the model from an architecture, then overwrites every
    /// parameter from checkpoint bytes.
    pub fn from_checkpoint(arch: Architecture, bytes: &[u8]) -> Result<Self> {
        let mut model = Self::new(arch, 0)?;
        checkpoint::load_params_into(&mut model.params, bytes)?;
        Ok(model)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let arch_path = dir.join(ARCHITECTURE_FILE);
        let arch_text = fs::read_to_string(&arch_path).map_err(|e| Error::io(&arch_path, e))?;
        Self::load_with_architecture(Architecture::from_json(&arch_text)?, &dir.join(CHECKPOINT_FILE))
    }

    pub fn load_with_architecture(arch: Architecture, checkpoint_path: &Path) -> Result<Self> {
        let bytes = fs::read(checkpoint_path).map_err(|e| Error::io(checkpoint_path, e))?;
        Self::from_checkpoint(arch, &bytes)
    }
}
