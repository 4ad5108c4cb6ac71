//! Reconstruction criteria over the masked node set.
//!
//! The scaled cosine error of a masked node is `(1 − cos(x_i, z_i))^γ`;
//! the loss averages it over the masked nodes. Norms are floored at
//! `eps_norm`, so an all-zero row has cosine 0 and costs exactly `1^γ`.
//! Only `z` is differentiated; `x` is data.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::masking::MaskPlan;
use crate::tensor::Tensor;

pub const DEFAULT_EPS_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Scaled cosine error with exponent `gamma`.
    Sce,
    /// Mean squared error.
    Mse,
    /// Plain cosine error `1 − cos`, ignoring `gamma`.
    Cosine,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sce" => Ok(Self::Sce),
            "mse" => Ok(Self::Mse),
            "cosine" | "cos" => Ok(Self::Cosine),
            other => Err(Error::validation(format!("unknown criterion {other:?}"))),
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sce => "sce",
            Self::Mse => "mse",
            Self::Cosine => "cosine",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub criterion: Criterion,
    pub gamma: f64,
    pub eps_norm: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            criterion: Criterion::Sce,
            gamma: 3.0,
            eps_norm: DEFAULT_EPS_NORM,
        }
    }
}

impl LossConfig {
    pub fn sce(gamma: f64) -> Self {
        Self {
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 1.0) {
            return Err(Error::validation(format!("gamma={} must be >= 1", self.gamma)));
        }
        if !(self.eps_norm > 0.0) {
            return Err(Error::validation("eps_norm must be positive"));
        }
        Ok(())
    }
}

fn check_inputs(x: &Tensor, z: &Tensor, plan: &MaskPlan) -> Result<()> {
    if x.shape() != z.shape() {
        return Err(Error::shape("loss", format!("target {:?} vs reconstruction {:?}", x.shape(), z.shape())));
    }
    if plan.is_empty() {
        return Err(Error::validation("loss over an empty mask is undefined"));
    }
    if plan.n != x.rows() {
        return Err(Error::validation(format!("plan over {} nodes, features have {} rows", plan.n, x.rows())));
    }
    plan.validate()
}

struct CosineRow {
    /// Clamped to `[-1, 1]`.
    cos: f64,
    /// `∂cos/∂z`.
    dcos: Vec<f64>,
}

fn cosine_row(x: &[f64], z: &[f64], eps: f64) -> CosineRow {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
    let nz_raw = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nz = nz_raw.max(eps);
    let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
    let cos = dot / (nx * nz);
    let dcos = if nz_raw > eps {
        x.iter()
            .zip(z)
            .map(|(&a, &b)| a / (nx * nz) - cos * b / (nz * nz))
            .collect()
    } else {
        x.iter().map(|&a| a / (nx * nz)).collect()
    };
    CosineRow {
        cos: cos.clamp(-1.0, 1.0),
        dcos,
    }
}

/// Per-row value and derivative with respect to the cosine error `e`.
fn cosine_error_terms(e: f64, cfg: &LossConfig) -> (f64, f64) {
    match cfg.criterion {
        Criterion::Cosine => (e, 1.0),
        _ => (e.powf(cfg.gamma), cfg.gamma * e.powf(cfg.gamma - 1.0)),
    }
}

/// Per-masked-row criterion values, without a tape.
pub fn per_row_loss(x: &Tensor, z: &Tensor, plan: &MaskPlan, cfg: &LossConfig) -> Result<Vec<f64>> {
    check_inputs(x, z, plan)?;
    cfg.validate()?;
    Ok(plan
        .masked
        .iter()
        .map(|&i| match cfg.criterion {
            Criterion::Mse => {
                let d = x.cols().max(1) as f64;
                x.row(i).iter().zip(z.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / d
            }
            _ => cosine_error_terms(1.0 - cosine_row(x.row(i), z.row(i), cfg.eps_norm).cos, cfg).0,
        })
        .collect())
}

/// Criterion averaged over the masked rows, recorded on the tape.
pub fn reconstruction_loss(tape: &mut Tape, x: &Tensor, z: Var, plan: &MaskPlan, cfg: &LossConfig) -> Result<Var> {
    match cfg.criterion {
        Criterion::Mse => mse_loss(tape, x, z, plan),
        _ => cosine_family_loss(tape, x, z, plan, cfg),
    }
}

/// Scaled cosine error averaged over the masked rows.
pub fn sce_loss(tape: &mut Tape, x: &Tensor, z: Var, plan: &MaskPlan, cfg: &LossConfig) -> Result<Var> {
    let cfg = LossConfig {
        criterion: Criterion::Sce,
        ..*cfg
    };
    cosine_family_loss(tape, x, z, plan, &cfg)
}

fn cosine_family_loss(tape: &mut Tape, x: &Tensor, z: Var, plan: &MaskPlan, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    let zv = tape.value(z);
    check_inputs(x, zv, plan)?;
    let (n, d) = zv.shape();
    let m = plan.len() as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(n, d);
    for &i in &plan.masked {
        let row = cosine_row(x.row(i), zv.row(i), cfg.eps_norm);
        let (value, dvalue) = cosine_error_terms(1.0 - row.cos, cfg);
        total += value;
        // d(value)/dz = dvalue · d(1 − cos)/dz, scaled by the 1/m mean.
        let s = -dvalue / m;
        grad.row_mut(i).iter_mut().zip(&row.dcos).for_each(|(g, dc)| *g = s * dc);
    }
    let z_idx = z.index();
    tape.record("sce_loss", Tensor::scalar(total / m), move || {
        Box::new(move |g| vec![(z_idx, grad.map(|v| v * g.get(0, 0)))])
    })
}

/// Mean over masked rows of the per-row mean squared error.
pub fn mse_loss(tape: &mut Tape, x: &Tensor, z: Var, plan: &MaskPlan) -> Result<Var> {
    let zv = tape.value(z);
    check_inputs(x, zv, plan)?;
    let (n, d) = zv.shape();
    let scale = 1.0 / (plan.len() * d.max(1)) as f64;
    let mut total = 0.0;
    let mut grad = Tensor::zeros(n, d);
    for &i in &plan.masked {
        let mut row_sum = 0.0;
        for (c, (a, b)) in x.row(i).iter().zip(zv.row(i)).enumerate() {
            let r = b - a;
            row_sum += r * r;
            grad.set(i, c, 2.0 * r * scale);
        }
        total += row_sum / d.max(1) as f64;
    }
    let z_idx = z.index();
    tape.record("mse_loss", Tensor::scalar(total / plan.len() as f64), move || {
        Box::new(move |g| vec![(z_idx, grad.map(|v| v * g.get(0, 0)))])
    })
}
