use graphmae::autodiff::ParamStore;
use graphmae::graph::{generate_graph_set, generate_sbm, FeatureSpec, Graph, GraphSetSpec, SbmSpec};
use graphmae::train::{cosine_lr, pretrain, pretrain_graphs, AdamState, OptimConfig, RunConfig};
use graphmae::{Error, Tensor};

fn fixture(seed: u64) -> Graph {
    generate_sbm(&SbmSpec {
        block_sizes: vec![20, 20],
        p_in: 0.3,
        p_out: 0.02,
        features: FeatureSpec::isotropic(8, 0.3),
        seed,
    })
    .unwrap()
    .row_normalize_features()
}

fn small_run(epochs: usize) -> RunConfig {
    let mut run = RunConfig::node_defaults();
    run.model.hidden_dim = 16;
    run.model.heads = 2;
    run.optim.max_epoch = epochs;
    run.optim.lr = 0.01;
    run
}

/// Textbook Adam on one scalar with decoupled decay.
struct ScalarAdam {
    m: f64,
    v: f64,
    t: i32,
}

impl ScalarAdam {
    fn step(&mut self, p: f64, g: f64, lr: f64, c: &OptimConfig) -> f64 {
        self.t += 1;
        let p = p * (1.0 - lr * c.weight_decay);
        self.m = c.beta1 * self.m + (1.0 - c.beta1) * g;
        self.v = c.beta2 * self.v + (1.0 - c.beta2) * g * g;
        let mh = self.m / (1.0 - c.beta1.powi(self.t));
        let vh = self.v / (1.0 - c.beta2.powi(self.t));
        p - lr * mh / (vh.sqrt() + c.eps)
    }
}

#[test]
fn adam_matches_scalar_oracle_over_100_steps() {
    let cfg = OptimConfig {
        lr: 0.05,
        weight_decay: 0.01,
        max_epoch: 100,
        ..OptimConfig::default()
    };
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::from_rows(&[vec![1.5, -0.7, 0.0]]).unwrap()).unwrap();
    let mut state = AdamState::new(&store);
    let mut oracle: Vec<(f64, ScalarAdam)> = store.value(id).data().iter().map(|&p| (p, ScalarAdam { m: 0.0, v: 0.0, t: 0 })).collect();
    for t in 0..100 {
        let lr = cosine_lr(t, 100, cfg.lr).unwrap();
        // gradient of (p - 0.3)^2 + 0.1 p^3
        let grad: Vec<f64> = store.value(id).data().iter().map(|p| 2.0 * (p - 0.3) + 0.3 * p * p).collect();
        store.get_mut(id).grad = Tensor::from_vec(1, 3, grad.clone()).unwrap();
        state.step(&mut store, lr, &cfg).unwrap();
        for ((p, adam), g) in oracle.iter_mut().zip(&grad) {
            *p = adam.step(*p, *g, lr, &cfg);
        }
        for (got, (want, _)) in store.value(id).data().iter().zip(&oracle) {
            assert!((got - want).abs() <= 1e-12, "step {t}: {got} vs {want}");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let (a, la) = pretrain(&fixture(3), &small_run(15)).unwrap();
    let (b, lb) = pretrain(&fixture(3), &small_run(15)).unwrap();
    assert_eq!(a.checkpoint_bytes(), b.checkpoint_bytes());
    assert_eq!(la.to_csv(), lb.to_csv());
}

#[test]
fn loss_drops_by_a_fifth() {
    let (_, log) = pretrain(&fixture(4), &small_run(150)).unwrap();
    let (first, last) = (log.first_loss().unwrap(), log.last_loss().unwrap());
    assert!(last <= 0.8 * first, "first {first}, last {last}");
}

#[test]
fn zero_epochs_gives_empty_log() {
    let (_, log) = pretrain(&fixture(5), &small_run(0)).unwrap();
    assert!(log.is_empty());
}

#[test]
fn diverging_run_reports_epoch_and_norms() {
    let mut run = small_run(50);
    run.optim.lr = 1e200;
    match pretrain(&fixture(6), &run) {
        Err(Error::NonFiniteLoss { norms, .. }) => assert!(norms.contains("token.mask")),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("lr 1e200 should overflow"),
    }
}

#[test]
fn graph_set_pretraining_runs() {
    let set = generate_graph_set(&GraphSetSpec {
        graphs_per_class: 6,
        min_nodes: 5,
        max_nodes: 10,
        class_edge_probs: vec![0.2, 0.6],
        max_degree: 9,
        seed: 2,
    })
    .unwrap();
    let mut run = RunConfig::graph_defaults();
    run.model.hidden_dim = 8;
    run.optim.max_epoch = 3;
    run.batch_size = 4;
    let (a, log) = pretrain_graphs(&set, &run).unwrap();
    assert_eq!(log.records.len(), 3);
    let (b, _) = pretrain_graphs(&set, &run).unwrap();
    assert_eq!(a.checkpoint_bytes(), b.checkpoint_bytes());
}
