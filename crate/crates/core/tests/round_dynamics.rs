use std::sync::Arc;

use decavg::dataset::{gen_synthetic, Dataset};
use decavg::graph::{connectivity_report, gen_erdos_renyi, Edge, Graph};
use decavg::learner::{evaluate, init_mlp, train_epochs, ModelParams, OptimizerState};
use decavg::partition::Shard;
use decavg::protocol::{aggregation_coeffs, AggregationSpec, LocalTraining, NodeState, SimulationState};
use decavg::rng::{seed_stream, seeded, Purpose};

const SIZES: [usize; 3] = [4, 5, 3];

fn data() -> Dataset {
    gen_synthetic(3, 4, 40, 0.15, &mut seeded(8)).unwrap()
}

fn shards(ds: &Dataset, n: usize, per_node: usize) -> Vec<Shard> {
    (0..n)
        .map(|v| {
            let idx: Vec<usize> = (0..ds.len()).filter(|i| i % n == v).take(per_node + v % 3).collect();
            Shard::new(v, idx, ds).unwrap()
        })
        .collect()
}

fn build(g: Graph, ds: Arc<Dataset>, seed: u64, local: LocalTraining) -> SimulationState {
    let n = g.n();
    let nodes: Vec<NodeState> = shards(&ds, n, 6)
        .into_iter()
        .map(|shard| {
            let id = shard.owner();
            let params = init_mlp(&SIZES, &mut seed_stream(seed, id as u64, Purpose::Init)).unwrap();
            NodeState {
                id,
                opt: OptimizerState::new(&params, 0.1, 0.5).unwrap(),
                params,
                shard,
                rng: seed_stream(seed, id as u64, Purpose::Shuffle),
            }
        })
        .collect();
    let sizes = nodes.iter().map(|s| s.shard.len() as f64).collect();
    SimulationState::new(g, Arc::clone(&ds), ds, nodes, sizes, AggregationSpec::default(), local).unwrap()
}

fn max_pairwise(params: &[ModelParams]) -> f64 {
    let mut m: f64 = 0.0;
    for a in params {
        for b in params {
            m = m.max(a.distance(b));
        }
    }
    m
}

fn connected_graph(n: usize) -> Graph {
    (0..)
        .map(|s| gen_erdos_renyi(n, 0.35, &mut seeded(s)).unwrap())
        .find(|g| connectivity_report(g).connected)
        .unwrap()
}

#[test]
fn consensus_only_rounds_contract_like_the_dense_iteration() {
    let g = connected_graph(10);
    let ds = Arc::new(data());
    let mut sim = build(g.clone(), ds, 5, LocalTraining { epochs: 0, batch_size: 4 });
    let n = g.n();
    let mut coeff = vec![vec![0.0; n]; n];
    for (i, row) in coeff.iter_mut().enumerate() {
        for (j, c) in aggregation_coeffs(i, &g, &sim.sizes, &sim.aggregation).unwrap() {
            row[j] = c;
        }
    }
    let mut dense: Vec<Vec<f64>> = sim.params().iter().map(|p| p.as_slice().to_vec()).collect();

    sim.pretrain().unwrap();
    let mut first = None;
    for round in 1..=200 {
        sim.run_round().unwrap();
        dense = (0..n)
            .map(|i| {
                (0..dense[0].len())
                    .map(|k| (0..n).map(|j| coeff[i][j] * dense[j][k]).sum())
                    .collect()
            })
            .collect();
        if round == 1 {
            first = Some(max_pairwise(&sim.params()));
        }
    }
    for (p, d) in sim.params().iter().zip(&dense) {
        for (a, b) in p.as_slice().iter().zip(d) {
            assert!((a - b).abs() < 1e-9, "{a} vs dense {b}");
        }
    }
    let last = max_pairwise(&sim.params());
    let first = first.unwrap();
    assert!(first > 0.0);
    assert!(last * 100.0 <= first, "shrink only {first} -> {last}");
}

#[test]
fn isolated_node_matches_standalone_training() {
    let mut edges: Vec<Edge> = (0..4)
        .map(|u| Edge { u, v: u + 1, weight: 1.0 })
        .collect();
    edges.push(Edge { u: 0, v: 4, weight: 1.0 });
    // node 5 has no edges
    let g = Graph::from_edges(6, edges, None).unwrap();
    let ds = Arc::new(data());
    let local = LocalTraining { epochs: 2, batch_size: 3 };
    let mut sim = build(g, Arc::clone(&ds), 9, local);
    let shard = sim.nodes[5].shard.clone();
    sim.pretrain().unwrap();
    for _ in 0..4 {
        sim.run_round().unwrap();
    }

    let mut p = init_mlp(&SIZES, &mut seed_stream(9, 5, Purpose::Init)).unwrap();
    let mut opt = OptimizerState::new(&p, 0.1, 0.5).unwrap();
    let mut rng = seed_stream(9, 5, Purpose::Shuffle);
    let mut acc = Vec::new();
    for _ in 0..5 {
        train_epochs(&mut p, &mut opt, &ds, shard.sample_indices(), &mut rng, 2, 3).unwrap();
        acc.push(evaluate(&p, &ds).unwrap().accuracy);
    }
    assert_eq!(sim.nodes[5].params.as_slice(), p.as_slice());
    let trajectory: Vec<f64> = sim.history.iter().map(|r| r.accuracy[5]).collect();
    assert_eq!(trajectory, acc);
}

#[test]
fn edgeless_graph_is_pure_local_training() {
    let g = Graph::from_edges(4, Vec::new(), None).unwrap();
    let ds = Arc::new(data());
    let local = LocalTraining { epochs: 1, batch_size: 2 };
    let mut sim = build(g, Arc::clone(&ds), 2, local);
    sim.pretrain().unwrap();
    sim.run_round().unwrap();
    for v in 0..4 {
        let mut p = init_mlp(&SIZES, &mut seed_stream(2, v as u64, Purpose::Init)).unwrap();
        let mut opt = OptimizerState::new(&p, 0.1, 0.5).unwrap();
        let mut rng = seed_stream(2, v as u64, Purpose::Shuffle);
        for _ in 0..2 {
            train_epochs(&mut p, &mut opt, &ds, sim.nodes[v].shard.sample_indices(), &mut rng, 1, 2).unwrap();
        }
        assert_eq!(sim.nodes[v].params.as_slice(), p.as_slice());
    }
}

#[test]
fn rounds_are_reproducible() {
    let run = || {
        let mut sim = build(connected_graph(8), Arc::new(data()), 4, LocalTraining { epochs: 1, batch_size: 4 });
        sim.pretrain().unwrap();
        sim.run_round().unwrap();
        sim.run_round().unwrap();
        (sim.history.clone(), sim.params())
    };
    assert_eq!(run(), run());
}
