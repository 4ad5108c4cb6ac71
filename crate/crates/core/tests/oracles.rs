mod common;

use common::dense::{self, Mat};
use common::{layer_oracle, to_mat, to_tensor};
use graphmae::autodiff::{segment_softmax_raw, ParamStore, Tape};
use graphmae::graph::CsrAdjacency;
use graphmae::layers::{Activation, GraphContext, Layer, LayerConfig, LayerKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-10;

struct Case {
    n: usize,
    edges: Vec<(usize, usize)>,
    seed: u64,
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..100)
        .map(|k| {
            let n = rng.random_range(1..=50);
            let p = rng.random_range(0.0..0.3);
            Case {
                n,
                edges: dense::random_edges(n, p, 1000 + k),
                seed: 5000 + k,
            }
        })
        .collect()
}

#[test]
fn spmm_matches_dense() {
    for c in cases() {
        let adj = CsrAdjacency::from_undirected_edges(c.n, &c.edges).unwrap();
        let h = dense::random_mat(c.n, 3, c.seed);
        let a = dense::adjacency(c.n, &c.edges);
        for (sparse, reference) in [(adj.clone(), a.clone()), (adj.with_self_loops().gcn_normalize().unwrap(), dense::gcn_norm(&a))] {
            let mut tape = Tape::inference();
            let hv = tape.leaf(to_tensor(&h)).unwrap();
            let out = tape.spmm(&sparse, hv).unwrap();
            let err = dense::max_abs_diff(&to_mat(tape.value(out)), &dense::matmul(&reference, &h));
            assert!(err < TOL, "n={} err={err}", c.n);
        }
    }
}

#[test]
fn segment_softmax_matches_dense() {
    for c in cases() {
        let adj = CsrAdjacency::from_undirected_edges(c.n, &c.edges).unwrap().with_self_loops();
        let logits_dense = dense::random_mat(c.n, c.n, c.seed).iter().map(|r| r.iter().map(|v| 5.0 * v).collect()).collect::<Mat>();
        let arcs: Vec<(usize, usize, f64)> = adj.arcs().collect();
        let logits: Vec<f64> = arcs.iter().map(|&(i, j, _)| logits_dense[i][j]).collect();
        let got = segment_softmax_raw(&logits, adj.row_offsets());
        let want = dense::masked_softmax(&logits_dense, &with_loops_dense(c.n, &c.edges));
        for (k, &(i, j, _)) in arcs.iter().enumerate() {
            assert!((got[k] - want[i][j]).abs() < TOL);
        }
        // the tape op agrees with the raw kernel
        let mut tape = Tape::inference();
        let l = tape.leaf(graphmae::Tensor::from_vec(logits.len(), 1, logits.clone()).unwrap()).unwrap();
        let s = tape.segment_softmax(l, adj.row_offsets()).unwrap();
        assert_eq!(tape.value(s).data(), got.as_slice());
    }
}

fn with_loops_dense(n: usize, edges: &[(usize, usize)]) -> Mat {
    dense::with_self_loops(&dense::adjacency(n, edges))
}

fn check_layer(cfg: LayerConfig) {
    for c in cases() {
        let adj = CsrAdjacency::from_undirected_edges(c.n, &c.edges).unwrap();
        let ctx = GraphContext::new(&adj).unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let layer = Layer::init(cfg.clone(), "l", &mut store, &mut rng).unwrap();
        // Move every parameter off its initial value so tokens, biases,
        // eps and slopes all matter.
        for p in store.iter_mut() {
            for v in p.value.data_mut() {
                *v += rng.random_range(-0.5..0.5);
            }
        }
        let h = dense::random_mat(c.n, cfg.in_dim, c.seed + 1);
        let mut tape = Tape::inference();
        let hv = tape.leaf(to_tensor(&h)).unwrap();
        let out = layer.forward(&mut tape, &store, &ctx, hv).unwrap();
        let want = layer_oracle(&cfg, &store, "l", &dense::adjacency(c.n, &c.edges), &h);
        let err = dense::max_abs_diff(&to_mat(tape.value(out)), &want);
        assert!(err < TOL, "{:?} n={} err={err}", cfg.kind, c.n);
    }
}

#[test]
fn gcn_layer_matches_dense() {
    check_layer(LayerConfig::new(LayerKind::Gcn, 4, 3, Activation::Prelu));
}

#[test]
fn gat_layer_concat_matches_dense() {
    check_layer(LayerConfig::gat(4, 3, 3, true, Activation::Prelu));
}

#[test]
fn gat_layer_mean_matches_dense() {
    check_layer(LayerConfig::gat(4, 3, 2, false, Activation::Identity));
}

#[test]
fn gin_layer_matches_dense() {
    check_layer(LayerConfig::new(LayerKind::Gin, 4, 3, Activation::Prelu));
}

#[test]
fn mlp_layer_matches_dense() {
    check_layer(LayerConfig::new(LayerKind::Mlp, 4, 3, Activation::Identity));
}
