mod common;

use common::dense;
use graphmae::autodiff::{segment_softmax_raw, ParamStore, Tape};
use graphmae::graph::CsrAdjacency;
use graphmae::layers::{Activation, GraphContext, Layer, LayerConfig};
use graphmae::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn softmax_segments_sum_to_one(
        segs in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 0..8), 1..20)
    ) {
        let mut offsets = vec![0];
        let mut logits = Vec::new();
        for s in &segs {
            logits.extend_from_slice(s);
            offsets.push(logits.len());
        }
        let p = segment_softmax_raw(&logits, &offsets);
        for w in offsets.windows(2) {
            if w[0] == w[1] {
                continue;
            }
            let seg = &p[w[0]..w[1]];
            prop_assert!(seg.iter().all(|v| *v > 0.0));
            prop_assert!((seg.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }
}

/// One forward+backward pass of a GAT layer; returns all parameter
/// gradients flattened.
fn gat_gradients(seed: u64) -> Vec<u64> {
    let n = 15;
    let adj = CsrAdjacency::from_undirected_edges(n, &dense::random_edges(n, 0.25, seed)).unwrap();
    let ctx = GraphContext::new(&adj).unwrap();
    let mut store = ParamStore::new();
    let layer = Layer::init(LayerConfig::gat(4, 3, 2, true, Activation::Prelu), "l", &mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_rows(&dense::random_mat(n, 4, seed + 1)).unwrap()).unwrap();
    let h = layer.forward(&mut tape, &store, &ctx, x).unwrap();
    let sq = tape.mul(h, h).unwrap();
    let loss = tape.sum(sq).unwrap();
    tape.backward(loss, &mut store).unwrap();
    store.iter().flat_map(|p| p.grad.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect()
}

#[test]
fn replay_is_bit_identical() {
    for seed in 0..5 {
        assert_eq!(gat_gradients(seed), gat_gradients(seed));
    }
}
