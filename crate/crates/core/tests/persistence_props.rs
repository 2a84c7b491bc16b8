mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{
    assemble, component_count, diagram_pairs, graph_of, sweep_h0, vertex_count, EdgeList,
};
use proptest::prelude::*;
use topodetect::persistence::{
    build_filtration, compute_persistence, extract_persistent_subgraph, Simplex,
};
use topodetect::{Dimension, VertexId};

fn graphs() -> impl Strategy<Value = EdgeList> {
    (2usize..=12)
        .prop_flat_map(|n| {
            let all: Vec<(usize, usize)> = (0..n)
                .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                .collect();
            let m = all.len();
            (Just(n), proptest::sample::subsequence(all, 1..=m))
        })
        .prop_flat_map(|(n, pairs)| {
            let k = pairs.len();
            (
                Just(pairs),
                Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(any::<bool>(), k),
                Just((0..n).map(|v| v * 3 + 1).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(pairs, ranks, flips, labels)| assemble(&pairs, &ranks, &flips, &labels))
}

/// Edges that may share weights and endpoints.
fn tied_graphs() -> impl Strategy<Value = EdgeList> {
    proptest::collection::vec((0usize..8, 0usize..8, 1u8..4), 1..20).prop_map(|raw| {
        raw.into_iter()
            .filter(|(a, b, _)| a != b)
            .map(|(a, b, w)| (a, b, f64::from(w)))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn h0_matches_threshold_sweep(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        prop_assert_eq!(diagram_pairs(&p.diagram, Dimension::H0), sweep_h0(&edges));
    }

    #[test]
    fn h1_count_is_euler_characteristic(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        let h1 = p.diagram.dimension(Dimension::H1).count() as i64;
        let expected = edges.len() as i64 - vertex_count(&edges) as i64 + component_count(&edges) as i64;
        prop_assert_eq!(h1, expected);
    }

    #[test]
    fn one_point_per_vertex_and_one_survivor_per_component(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        let h0: Vec<_> = p.diagram.dimension(Dimension::H0).collect();
        prop_assert_eq!(h0.len(), vertex_count(&edges));
        let floor = p.diagram.min_weight;
        let survivors = (0..p.generators.len()).filter(|&id| p.generators.parent(id).is_none()).count();
        prop_assert_eq!(survivors, component_count(&edges));
        for pt in h0 {
            prop_assert!(pt.birth >= pt.death);
            prop_assert!(pt.birth <= p.diagram.omega);
            prop_assert!(pt.death >= floor);
        }
    }

    #[test]
    fn filtration_matches_sort_oracle(edges in tied_graphs()) {
        prop_assume!(!edges.is_empty());
        let f = build_filtration(&graph_of(&edges));
        let mut expected = edges.clone();
        expected.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let got: Vec<(usize, usize, f64)> =
            f.edges.iter().map(|fe| (fe.edge.src.0, fe.edge.dst.0, fe.edge.weight)).collect();
        prop_assert_eq!(got, expected);

        // each vertex enters at its heaviest incident weight, before any incident edge
        let mut heaviest: BTreeMap<usize, f64> = BTreeMap::new();
        for &(s, d, w) in &edges {
            for v in [s, d] {
                let e = heaviest.entry(v).or_insert(w);
                *e = e.max(w);
            }
        }
        let mut entered = BTreeSet::new();
        for entry in &f.entries {
            match entry.simplex {
                Simplex::Vertex(VertexId(v)) => {
                    prop_assert_eq!(entry.value, heaviest[&v]);
                    prop_assert!(entered.insert(v));
                }
                Simplex::Edge(k) => {
                    let e = f.edges[k].edge;
                    prop_assert!(entered.contains(&e.src.0) && entered.contains(&e.dst.0));
                    prop_assert_eq!(entry.value, e.weight);
                }
            }
        }
        prop_assert_eq!(entered.len(), heaviest.len());
    }

    #[test]
    fn generators_are_connected_and_above_death(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        for pt in p.diagram.dimension(Dimension::H0) {
            let g = p.generators.generator(pt.generator_id);
            prop_assert_eq!(g.birth, pt.birth);
            prop_assert!(g.edges.iter().all(|e| e.weight >= pt.death));
            let verts: BTreeSet<usize> = g.vertices.iter().map(|v| v.0).collect();
            for e in &g.edges {
                prop_assert!(verts.contains(&e.src.0) && verts.contains(&e.dst.0));
            }
            if pt.lifetime() > 0.0 {
                prop_assert!(g.edges.iter().any(|e| e.weight == pt.birth));
            }
            let sub: EdgeList = g.edges.iter().map(|e| (e.src.0, e.dst.0, e.weight)).collect();
            if verts.len() > 1 {
                prop_assert_eq!(component_count(&sub), 1);
                prop_assert_eq!(vertex_count(&sub), verts.len());
            }
        }
    }

    #[test]
    fn subgraph_shrinks_as_lambda_grows(edges in graphs(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let p = compute_persistence(&graph_of(&edges));
        let small = extract_persistent_subgraph(&p.diagram, &p.generators, hi);
        let large = extract_persistent_subgraph(&p.diagram, &p.generators, lo);
        let key = |e: &topodetect::Edge| (e.src, e.dst, e.weight.to_bits());
        let large_edges: BTreeSet<_> = large.edges.iter().map(key).collect();
        prop_assert!(small.edges.iter().all(|e| large_edges.contains(&key(e))));
        let large_vertices: BTreeSet<_> = large.vertices.iter().collect();
        prop_assert!(small.vertices.iter().all(|v| large_vertices.contains(v)));
    }

    #[test]
    fn members_recount_at_median_lifetime(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        let mut lifetimes: Vec<f64> = p.diagram.dimension(Dimension::H0).map(|q| q.lifetime()).collect();
        lifetimes.sort_by(f64::total_cmp);
        let lambda = lifetimes[lifetimes.len() / 2];
        let sub = extract_persistent_subgraph(&p.diagram, &p.generators, lambda);
        let above = lifetimes.iter().filter(|&&l| l > lambda).count();
        prop_assert_eq!(sub.members.len(), above);

        // edges are unique and come from the graph
        let all: BTreeSet<_> = edges.iter().map(|&(s, d, w)| (s, d, w.to_bits())).collect();
        let got: Vec<_> = sub.edges.iter().map(|e| (e.src.0, e.dst.0, e.weight.to_bits())).collect();
        let unique: BTreeSet<_> = got.iter().copied().collect();
        prop_assert_eq!(unique.len(), got.len());
        prop_assert!(unique.is_subset(&all));
    }

    #[test]
    fn full_range_lambda_gives_empty_subgraph(edges in graphs()) {
        let p = compute_persistence(&graph_of(&edges));
        let lambda = p.diagram.omega - p.diagram.min_weight;
        let sub = extract_persistent_subgraph(&p.diagram, &p.generators, lambda);
        prop_assert!(sub.is_empty());
        prop_assert_eq!(sub.edge_count(), 0);
    }

    #[test]
    fn tied_multiset_does_not_depend_on_edge_order(edges in tied_graphs(), seed in any::<u64>()) {
        prop_assume!(!edges.is_empty());
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut shuffled = edges.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = compute_persistence(&graph_of(&edges));
        let b = compute_persistence(&graph_of(&shuffled));
        prop_assert_eq!(diagram_pairs(&a.diagram, Dimension::H0), diagram_pairs(&b.diagram, Dimension::H0));
        prop_assert_eq!(diagram_pairs(&a.diagram, Dimension::H1), diagram_pairs(&b.diagram, Dimension::H1));
    }
}
