//! Independent oracles shared by the property and acceptance tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use topodetect::nn::{Activation, LayerSpec, Loss};
use topodetect::{
    DiagramPoint, Dimension, InducedGraph, NetworkModel, PersistenceDiagram, Tensor, VertexId,
};

/// `(src, dst, weight)` triples.
pub type EdgeList = Vec<(usize, usize, f64)>;

/// Assembles an edge list from a choice of vertex pairs. `ranks` must be a
/// permutation of `0..pairs.len()`, which makes all weights distinct.
pub fn assemble(
    pairs: &[(usize, usize)],
    ranks: &[usize],
    flips: &[bool],
    labels: &[usize],
) -> EdgeList {
    pairs
        .iter()
        .zip(ranks)
        .zip(flips)
        .map(|((&(a, b), &r), &flip)| {
            let (a, b) = (labels[a], labels[b]);
            let (s, d) = if flip { (b, a) } else { (a, b) };
            (s, d, 0.05 + 0.731 * r as f64)
        })
        .collect()
}

/// Random simple graph on at most `max_vertices` vertices with distinct weights.
pub fn random_graph(rng: &mut impl Rng, max_vertices: usize) -> EdgeList {
    let n = rng.random_range(2..=max_vertices);
    let all: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
        .collect();
    let density = rng.random_range(0.1..=1.0);
    let mut pairs: Vec<(usize, usize)> = all
        .into_iter()
        .filter(|_| rng.random_bool(density))
        .collect();
    if pairs.is_empty() {
        pairs.push((0, 1));
    }
    let mut ranks: Vec<usize> = (0..pairs.len()).collect();
    ranks.shuffle(rng);
    let flips: Vec<bool> = pairs.iter().map(|_| rng.random_bool(0.5)).collect();
    let mut labels: Vec<usize> = (0..n).map(|v| v * 3 + 1).collect();
    labels.shuffle(rng);
    assemble(&pairs, &ranks, &flips, &labels)
}

pub fn graph_of(edges: &EdgeList) -> InducedGraph {
    InducedGraph::from_edges(
        edges
            .iter()
            .map(|&(s, d, w)| (VertexId(s), VertexId(d), w, 0)),
    )
    .unwrap()
}

fn components(edges: &[&(usize, usize, f64)]) -> Vec<BTreeSet<usize>> {
    let mut adj: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &&(s, d, _) in edges {
        adj.entry(s).or_default().push(d);
        adj.entry(d).or_default().push(s);
    }
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in adj.keys() {
        if seen.contains(&start) {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            if comp.insert(v) {
                seen.insert(v);
                stack.extend(adj[&v].iter().copied());
            }
        }
        out.push(comp);
    }
    out
}

pub fn component_count(edges: &EdgeList) -> usize {
    components(&edges.iter().collect::<Vec<_>>()).len()
}

pub fn vertex_count(edges: &EdgeList) -> usize {
    edges
        .iter()
        .flat_map(|&(s, d, _)| [s, d])
        .collect::<BTreeSet<_>>()
        .len()
}

/// H0 pairs by recomputing connected components at every weight level.
/// A vertex appears at its heaviest edge; when components join, the one
/// born earliest survives and the rest die at the current level. Survivors
/// are truncated at the lightest weight.
pub fn sweep_h0(edges: &EdgeList) -> Vec<(f64, f64)> {
    let mut levels: Vec<f64> = edges.iter().map(|e| e.2).collect();
    levels.sort_by(|a, b| b.total_cmp(a));
    levels.dedup();
    let floor = *levels.last().unwrap();
    let mut alive: Vec<(BTreeSet<usize>, f64)> = Vec::new();
    let mut out = Vec::new();
    for &t in &levels {
        let active: Vec<&(usize, usize, f64)> = edges.iter().filter(|e| e.2 >= t).collect();
        let mut next = Vec::new();
        for comp in components(&active) {
            let mut births = Vec::new();
            let mut covered = BTreeSet::new();
            for (old, b) in &alive {
                if old.is_subset(&comp) {
                    births.push(*b);
                    covered.extend(old.iter().copied());
                }
            }
            births.extend(comp.difference(&covered).map(|_| t));
            births.sort_by(|a, b| b.total_cmp(a));
            out.extend(births[1..].iter().map(|&b| (b, t)));
            next.push((comp, births[0]));
        }
        alive = next;
    }
    out.extend(alive.iter().map(|(_, b)| (*b, floor)));
    sort_pairs(out)
}

pub fn sort_pairs(mut pairs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pairs
}

pub fn diagram_pairs(d: &PersistenceDiagram, dim: Dimension) -> Vec<(f64, f64)> {
    sort_pairs(d.pairs(dim))
}

pub fn diagram(points: &[(f64, f64)]) -> PersistenceDiagram {
    PersistenceDiagram {
        points: points
            .iter()
            .enumerate()
            .map(|(i, &(birth, death))| DiagramPoint {
                birth,
                death,
                dimension: Dimension::H0,
                generator_id: i,
            })
            .collect(),
        omega: points.iter().map(|p| p.0).fold(0.0, f64::max),
        min_weight: points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
    }
}

/// Random diagram with at most `max_points` off-diagonal points.
pub fn random_points(rng: &mut impl Rng, max_points: usize) -> Vec<(f64, f64)> {
    let n = rng.random_range(0..=max_points);
    (0..n)
        .map(|_| {
            let d = rng.random_range(0.0..5.0);
            (d + rng.random_range(0.01..5.0), d)
        })
        .collect()
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn to_diag(a: (f64, f64)) -> f64 {
    (a.0 - a.1).abs() / std::f64::consts::SQRT_2
}

/// p-Wasserstein distance (Euclidean ground metric) by enumerating every
/// partial matching; unmatched points on either side go to the diagonal.
pub fn brute_wasserstein(x: &[(f64, f64)], y: &[(f64, f64)], p: f64) -> f64 {
    fn go(
        i: usize,
        x: &[(f64, f64)],
        y: &[(f64, f64)],
        used: &mut Vec<bool>,
        acc: f64,
        p: f64,
        best: &mut f64,
    ) {
        if i == x.len() {
            let rest: f64 = y
                .iter()
                .zip(used.iter())
                .filter(|(_, &u)| !u)
                .map(|(&q, _)| to_diag(q).powf(p))
                .sum();
            *best = best.min(acc + rest);
            return;
        }
        go(i + 1, x, y, used, acc + to_diag(x[i]).powf(p), p, best);
        for j in 0..y.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, x, y, used, acc + dist(x[i], y[j]).powf(p), p, best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, x, y, &mut vec![false; y.len()], 0.0, p, &mut best);
    best.powf(1.0 / p)
}

/// Conv → ReLU → FC → ReLU → FC with at most 1000 parameters and weights
/// drawn uniformly from `[-1, 1]`.
pub fn small_model(rng: &mut impl Rng) -> NetworkModel {
    loop {
        let (h, w): (usize, usize) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let filters = rng.random_range(1..=2);
        let size = if rng.random_bool(0.5) { 3 } else { 5 };
        let stride: usize = rng.random_range(1..=2);
        let hidden = rng.random_range(2..=6);
        let classes = rng.random_range(2..=4);
        let conv_out = filters * h.div_ceil(stride) * w.div_ceil(stride);
        let specs = [
            LayerSpec::conv(filters, size, stride, Activation::Relu),
            LayerSpec::fully_connected(conv_out, hidden, Activation::Relu),
            LayerSpec::fully_connected(hidden, classes, Activation::None),
        ];
        let mut model = NetworkModel::zeroed((h, w), &specs).unwrap();
        if model.parameter_count() > 1000 {
            continue;
        }
        for layer in model.layers_mut() {
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        return model;
    }
}

/// Pixels stay away from 0 and 1 so finite-difference probes remain valid inputs.
pub fn random_image(rng: &mut impl Rng, shape: (usize, usize)) -> Tensor {
    Tensor::new(
        vec![shape.0, shape.1],
        (0..shape.0 * shape.1)
            .map(|_| rng.random_range(0.01..0.99))
            .collect(),
    )
    .unwrap()
}

fn loss_value(model: &NetworkModel, x: &Tensor, loss: Loss) -> f64 {
    let t = model.forward(x).unwrap();
    loss.evaluate(&t.logits, &t.probabilities).unwrap().0
}

/// Largest per-coordinate relative error between the analytic input gradient
/// and central differences with step `1e-5`. Coordinates where both are below
/// `1e-6` in magnitude compare against that floor.
pub fn gradient_relative_error(model: &NetworkModel, x: &Tensor, loss: Loss) -> f64 {
    const H: f64 = 1e-5;
    let analytic = model.input_gradient(x, loss).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += H;
        let mut minus = x.clone();
        minus.data_mut()[i] -= H;
        let numeric =
            (loss_value(model, &plus, loss) - loss_value(model, &minus, loss)) / (2.0 * H);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
