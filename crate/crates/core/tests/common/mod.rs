#![allow(dead_code)]

pub mod dense;

use dense::Mat;
use graphmae::autodiff::ParamStore;
use graphmae::layers::{Activation, GinEps, LayerConfig, LayerKind};
use graphmae::Tensor;

pub fn to_mat(t: &Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

pub fn to_tensor(m: &Mat) -> Tensor {
    Tensor::from_rows(m).unwrap()
}

fn param(store: &ParamStore, name: &str) -> Tensor {
    let id = store.find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    store.value(id).clone()
}

fn row(store: &ParamStore, name: &str) -> Vec<f64> {
    param(store, name).data().to_vec()
}

/// Dense evaluation of one layer whose parameters live under `prefix`.
pub fn layer_oracle(cfg: &LayerConfig, store: &ParamStore, prefix: &str, a: &Mat, h: &Mat) -> Mat {
    let mlp = |p: &str, x: &Mat| {
        dense::mlp2(
            x,
            &to_mat(&param(store, &format!("{p}.mlp.w1"))),
            &row(store, &format!("{p}.mlp.b1")),
            &row(store, &format!("{p}.mlp.prelu")),
            &to_mat(&param(store, &format!("{p}.mlp.w2"))),
            &row(store, &format!("{p}.mlp.b2")),
        )
    };
    let out = match cfg.kind {
        LayerKind::Gcn => dense::matmul(&dense::matmul(&dense::gcn_norm(a), h), &to_mat(&param(store, &format!("{prefix}.gcn.w")))),
        LayerKind::Gat => {
            let heads: Vec<Mat> = (0..cfg.heads)
                .map(|k| {
                    let p = format!("{prefix}.gat.head{k}");
                    dense::gat_head(
                        a,
                        h,
                        &to_mat(&param(store, &format!("{p}.w"))),
                        &row(store, &format!("{p}.a_src")),
                        &row(store, &format!("{p}.a_dst")),
                        cfg.negative_slope,
                    )
                })
                .collect();
            let n = h.len();
            if cfg.concat {
                (0..n).map(|i| heads.iter().flat_map(|m| m[i].clone()).collect()).collect()
            } else {
                (0..n)
                    .map(|i| {
                        (0..cfg.out_dim)
                            .map(|c| heads.iter().map(|m| m[i][c]).sum::<f64>() / cfg.heads as f64)
                            .collect()
                    })
                    .collect()
            }
        }
        LayerKind::Gin => {
            let eps = match cfg.gin_eps {
                GinEps::Learnable => param(store, &format!("{prefix}.gin.eps")).get(0, 0),
                GinEps::Fixed(e) => e,
            };
            mlp(&format!("{prefix}.gin"), &dense::gin_aggregate(a, h, eps))
        }
        LayerKind::Mlp => mlp(&format!("{prefix}.mlp"), h),
    };
    match cfg.activation {
        Activation::Prelu => dense::prelu(&out, &row(store, &format!("{prefix}.act.prelu"))),
        Activation::Identity => out,
    }
}
