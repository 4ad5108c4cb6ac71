//! Dense reference implementations, written against plain nested vectors
//! and edge lists so they share no code with the sparse kernels.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

pub fn random_edges(n: usize, p: f64, seed: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

pub fn random_mat(r: usize, c: usize, seed: u64) -> Mat {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..r).map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn adjacency(n: usize, edges: &[(usize, usize)]) -> Mat {
    let mut a = vec![vec![0.0; n]; n];
    for &(i, j) in edges {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    a
}

pub fn with_self_loops(a: &Mat) -> Mat {
    let mut a = a.clone();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let cols = b.first().map_or(0, Vec::len);
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| row.iter().enumerate().map(|(k, v)| v * b[k][j]).sum())
                .collect()
        })
        .collect()
}

pub fn gcn_norm(a: &Mat) -> Mat {
    let a = with_self_loops(a);
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    a.iter()
        .enumerate()
        .map(|(i, r)| r.iter().enumerate().map(|(j, v)| v / (deg[i] * deg[j]).sqrt()).collect())
        .collect()
}

/// Softmax over the nonzero pattern of each row of `mask`.
pub fn masked_softmax(logits: &Mat, mask: &Mat) -> Mat {
    logits
        .iter()
        .zip(mask)
        .map(|(l, m)| {
            let max = l.iter().zip(m).filter(|(_, m)| **m != 0.0).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = l.iter().zip(m).map(|(v, m)| if *m != 0.0 { (v - max).exp() } else { 0.0 }).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|v| if s > 0.0 { v / s } else { 0.0 }).collect()
        })
        .collect()
}

pub fn prelu(x: &Mat, slope: &[f64]) -> Mat {
    x.iter()
        .map(|r| r.iter().zip(slope).map(|(v, a)| if *v >= 0.0 { *v } else { a * v }).collect())
        .collect()
}

pub fn add_row(x: &Mat, b: &[f64]) -> Mat {
    x.iter().map(|r| r.iter().zip(b).map(|(v, c)| v + c).collect()).collect()
}

pub fn leaky(x: f64, slope: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        slope * x
    }
}

/// One attention head over `A + I`.
pub fn gat_head(a: &Mat, h: &Mat, w: &Mat, a_src: &[f64], a_dst: &[f64], slope: f64) -> Mat {
    let mask = with_self_loops(a);
    let wh = matmul(h, w);
    let n = h.len();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    let logits: Mat = (0..n)
        .map(|i| (0..n).map(|j| leaky(dot(a_src, &wh[i]) + dot(a_dst, &wh[j]), slope)).collect())
        .collect();
    let alpha = masked_softmax(&logits, &mask);
    matmul(&alpha, &wh)
}

pub fn mlp2(x: &Mat, w1: &Mat, b1: &[f64], slope: &[f64], w2: &Mat, b2: &[f64]) -> Mat {
    let z = prelu(&add_row(&matmul(x, w1), b1), slope);
    add_row(&matmul(&z, w2), b2)
}

/// `(1 + eps) h_i + Σ_{j ∈ N(i)} h_j`, before the MLP.
pub fn gin_aggregate(a: &Mat, h: &Mat, eps: f64) -> Mat {
    let agg = matmul(a, h);
    agg.iter()
        .zip(h)
        .map(|(s, own)| s.iter().zip(own).map(|(x, y)| x + (1.0 + eps) * y).collect())
        .collect()
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len(), "row counts differ");
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len(), "column counts differ");
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}
