use graphmae::autodiff::Tape;
use graphmae::eval::{kfold_eval, kfold_graph_eval, linear_probe, mean_std, readout, Pooling, ProbeConfig};
use graphmae::graph::{CsrAdjacency, Graph, GraphSet, NodeSplit};
use graphmae::layers::GraphContext;
use graphmae::masking::{apply_input_mask, MaskPlan};
use graphmae::model::{Architecture, GraphMae, ModelSpec};
use graphmae::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_loop_readout(h: &[Vec<f64>], pooling: Pooling) -> Vec<f64> {
    let k = h[0].len();
    let mut out = vec![0.0; k];
    for c in 0..k {
        let mut acc = if pooling == Pooling::Max { f64::NEG_INFINITY } else { 0.0 };
        for row in h {
            acc = if pooling == Pooling::Max { acc.max(row[c]) } else { acc + row[c] };
        }
        out[c] = if pooling == Pooling::Mean { acc / h.len() as f64 } else { acc };
    }
    out
}

#[test]
fn readout_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    // Dyadic entries: every partial sum is exact, so summation order cannot
    // matter and the comparison is bit-for-bit.
    let dyadic: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.random_range(-1024i32..1024) as f64 / 256.0).collect()).collect();
    let general: Vec<Vec<f64>> = (0..7).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    for p in [Pooling::Mean, Pooling::Max, Pooling::Sum] {
        let got = readout(&Tensor::from_rows(&dyadic).unwrap(), p).unwrap();
        assert_eq!(got.data(), scalar_loop_readout(&dyadic, p).as_slice());
        let got = readout(&Tensor::from_rows(&general).unwrap(), p).unwrap();
        for (a, b) in got.data().iter().zip(scalar_loop_readout(&general, p)) {
            assert!((a - b).abs() <= 1e-15);
        }
    }
}

#[test]
fn identical_rows_pool_to_that_row() {
    let h = Tensor::from_rows(&vec![vec![0.3, -2.0, 7.5]; 5]).unwrap();
    assert_eq!(readout(&h, Pooling::Mean).unwrap().data(), &[0.3, -2.0, 7.5]);
    assert_eq!(readout(&h, Pooling::Max).unwrap().data(), &[0.3, -2.0, 7.5]);
}

proptest! {
    #[test]
    fn readout_is_permutation_invariant(rows in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, 4), 1..30), seed: u64) {
        let h = Tensor::from_rows(&rows).unwrap();
        let mut shuffled = rows.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hp = Tensor::from_rows(&shuffled).unwrap();
        for p in [Pooling::Mean, Pooling::Max, Pooling::Sum] {
            prop_assert_eq!(readout(&h, p).unwrap(), readout(&hp, p).unwrap());
        }
    }

    #[test]
    fn report_mean_is_mean_of_values(values in prop::collection::vec(0.0f64..1.0, 1..60)) {
        let (mean, std) = mean_std(&values);
        prop_assert!((mean - values.iter().sum::<f64>() / values.len() as f64).abs() <= 1e-12);
        prop_assert!(std >= 0.0);
    }
}

fn small_model(seed: u64) -> GraphMae {
    let spec = ModelSpec {
        hidden_dim: 6,
        heads: 2,
        ..ModelSpec::default()
    };
    GraphMae::new(Architecture::from_spec(3, &spec).unwrap(), seed).unwrap()
}

fn ring(n: usize, feature: [f64; 3], label: usize) -> Graph {
    let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let adj = CsrAdjacency::from_undirected_edges(n, &edges).unwrap();
    Graph::new("ring", adj, Tensor::from_rows(&vec![feature.to_vec(); n]).unwrap()).unwrap().with_graph_label(label)
}

#[test]
fn embed_equals_encode_with_empty_plan() {
    let m = small_model(1);
    let g = ring(6, [0.2, -0.4, 1.0], 0);
    let ctx = GraphContext::from_graph(&g).unwrap();
    let mut tape = Tape::new();
    let tok = tape.param(&m.params, m.x_mask).unwrap();
    let x = apply_input_mask(&mut tape, &g.features, &MaskPlan::empty(6), tok).unwrap();
    let h = m.encode(&mut tape, &ctx, x).unwrap();
    assert_eq!(tape.value(h), &m.embed(&g).unwrap());
    assert_eq!(m.embed(&g).unwrap(), m.embed(&g).unwrap());
}

#[test]
fn probe_leaves_encoder_untouched() {
    let m = small_model(2);
    let before = m.params.checksum();
    let graphs: Vec<Graph> = (0..10).map(|i| ring(4 + i % 3, if i % 2 == 0 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] }, i % 2)).collect();
    let set = GraphSet::new(graphs).unwrap();
    let rep = kfold_graph_eval(&set, &m, Pooling::Mean, 5, 1, &ProbeConfig::graph_defaults()).unwrap();
    assert_eq!(m.params.checksum(), before);
    assert_eq!(rep.values.len(), 5);
}

#[test]
fn leave_one_out_on_separable_graphs() {
    let m = small_model(3);
    let graphs: Vec<Graph> = (0..10).map(|i| ring(5, if i < 5 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] }, usize::from(i >= 5))).collect();
    let set = GraphSet::new(graphs).unwrap();
    let rep = kfold_graph_eval(&set, &m, Pooling::Mean, 10, 1, &ProbeConfig::graph_defaults()).unwrap();
    assert_eq!(rep.mean, 1.0);
}

#[test]
fn ten_folds_five_repeats_gives_fifty_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
    let h = Tensor::from_rows(&(0..40).map(|i| vec![labels[i] as f64 + rng.random_range(-0.2..0.2), 1.0]).collect::<Vec<_>>()).unwrap();
    let rep = kfold_eval(&h, &labels, Pooling::Mean, 10, 5, &ProbeConfig::graph_defaults()).unwrap();
    assert_eq!(rep.values.len(), 50);
    assert_eq!(rep.folds.len(), 5);
}

#[test]
fn class_smaller_than_k_rejected() {
    let labels = vec![0, 0, 0, 0, 0, 1, 1];
    let h = Tensor::zeros(7, 2);
    assert!(kfold_eval(&h, &labels, Pooling::Mean, 3, 1, &ProbeConfig::graph_defaults()).is_err());
}

#[test]
fn identical_graphs_random_labels_is_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut labels: Vec<usize> = (0..60).map(|i| i % 2).collect();
    labels.shuffle(&mut rng);
    let h = Tensor::from_rows(&vec![vec![0.5, -0.5]; 60]).unwrap();
    let rep = kfold_eval(&h, &labels, Pooling::Mean, 5, 4, &ProbeConfig::graph_defaults()).unwrap();
    assert!((rep.mean - 0.5).abs() <= 0.1, "{}", rep.mean);
}

#[test]
fn shuffled_labels_give_chance_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 400;
    let h = Tensor::uniform(n, 8, -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
    let split = NodeSplit::new((0..200).collect(), Vec::new(), (200..n).collect(), n).unwrap();
    let rep = linear_probe(&h, &labels, &split, &ProbeConfig::default()).unwrap();
    assert_eq!(rep.values.len(), 20);
    assert!((rep.mean - 0.25).abs() <= 0.10, "{}", rep.mean);
}
