use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topodetect::graph::build_induced_graph;
use topodetect::nn::random_input;
use topodetect::persistence::{compute_persistence, wasserstein_distance, WassersteinParams};
use topodetect::topology::analyze;
use topodetect::{
    DiagramPoint, Dimension, InducedGraph, NetworkModel, PersistenceDiagram, TopologyConfig,
    VertexId,
};

fn random_graph(vertices: usize, edges: usize, seed: u64) -> InducedGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let list: Vec<_> = (0..edges)
        .map(|_| {
            let a = rng.random_range(0..vertices);
            let b = rng.random_range(0..vertices);
            (VertexId(a), VertexId(b), rng.random::<f64>(), 0)
        })
        .collect();
    InducedGraph::from_edges(list).unwrap()
}

fn random_diagram(points: usize, seed: u64) -> PersistenceDiagram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..points)
        .map(|i| {
            let death = rng.random::<f64>();
            DiagramPoint {
                birth: death + rng.random::<f64>(),
                death,
                dimension: Dimension::H0,
                generator_id: i,
            }
        })
        .collect();
    PersistenceDiagram {
        points,
        omega: 2.0,
        min_weight: 0.0,
    }
}

fn desk_model() -> NetworkModel {
    NetworkModel::initialized((28, 28), &NetworkModel::scaled_specs(), 7).unwrap()
}

fn persistence(c: &mut Criterion) {
    let graph = random_graph(4000, 10_000, 1);
    c.bench_function("h0_h1_10k_edges", |b| {
        b.iter(|| compute_persistence(black_box(&graph)))
    });
}

fn wasserstein(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein");
    for n in [10, 50, 100] {
        let (x, y) = (random_diagram(n, 2), random_diagram(n, 3));
        group.bench_function(format!("{n}_points"), |b| {
            b.iter(|| {
                wasserstein_distance(black_box(&x), black_box(&y), WassersteinParams::default())
            })
        });
    }
    group.finish();
}

fn network(c: &mut Criterion) {
    let model = desk_model();
    let x = random_input((28, 28), 4);
    c.bench_function("forward_desk", |b| {
        b.iter(|| model.forward(black_box(&x)).unwrap())
    });
    let trace = model.forward(&x).unwrap();
    let prune = TopologyConfig::default().prune;
    c.bench_function("induce_desk", |b| {
        b.iter(|| build_induced_graph(&model, black_box(&trace), prune).unwrap())
    });
    c.bench_function("analyze_desk", |b| {
        b.iter_batched(
            || x.clone(),
            |x| analyze(&model, &x, TopologyConfig::default()).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, persistence, wasserstein, network);
criterion_main!(benches);
