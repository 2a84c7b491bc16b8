//! Persistent homology of induced graphs under the descending edge-weight
//! filtration.
//!
//! Heavier edges enter first. A vertex enters at the weight of its heaviest
//! incident edge, immediately before that edge. Because the complex never
//! contains 2-simplices, H0 reduces to a union-find sweep with the elder rule
//! and H1 to counting cycle-closing edges. Features that never die are
//! truncated at the smallest edge weight.

mod assignment;
mod interpolate;
mod wasserstein;

use std::fmt;

use crate::graph::{Edge, InducedGraph, VertexId};

pub use assignment::min_cost_assignment;
pub use interpolate::{interpolation_distance_curve, CurvePoint};
pub use wasserstein::{wasserstein_distance, WassersteinParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Dimension {
    H0,
    H1,
}

impl Dimension {
    pub fn index(self) -> usize {
        match self {
            Dimension::H0 => 0,
            Dimension::H1 => 1,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.index().fmt(f)
    }
}

/// One birth/death pair. Births are never below deaths.
///
/// For H0 points `generator_id` indexes the [`GeneratorTable`]; for H1 points
/// it is the position of the cycle-closing edge in the filtration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagramPoint {
    pub birth: f64,
    pub death: f64,
    pub dimension: Dimension,
    pub generator_id: usize,
}

impl DiagramPoint {
    pub fn lifetime(&self) -> f64 {
        self.birth - self.death
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceDiagram {
    pub points: Vec<DiagramPoint>,
    pub omega: f64,
    pub min_weight: f64,
}

impl PersistenceDiagram {
    pub fn empty() -> Self {
        Self {
            points: Vec::new(),
            omega: 0.0,
            min_weight: 0.0,
        }
    }

    pub fn dimension(&self, dim: Dimension) -> impl Iterator<Item = &DiagramPoint> + '_ {
        self.points.iter().filter(move |p| p.dimension == dim)
    }

    /// `(birth, death)` pairs of one dimension.
    pub fn pairs(&self, dim: Dimension) -> Vec<(f64, f64)> {
        self.dimension(dim).map(|p| (p.birth, p.death)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Simplex {
    Vertex(VertexId),
    /// Index into [`Filtration::edges`].
    Edge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiltrationEntry {
    pub simplex: Simplex,
    pub value: f64,
}

/// Edge with endpoints renumbered to vertex entry order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiltrationEdge {
    pub edge: Edge,
    pub src_local: usize,
    pub dst_local: usize,
}

/// Ordered simplex list of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Filtration {
    pub entries: Vec<FiltrationEntry>,
    /// Edges in insertion order.
    pub edges: Vec<FiltrationEdge>,
    /// Vertex ids in insertion order; position is the local index.
    pub vertices: Vec<VertexId>,
    pub omega: f64,
    pub min_weight: f64,
}

/// Orders edges by (weight desc, src asc, dst asc) and inserts each vertex
/// right before its heaviest incident edge.
pub fn build_filtration(graph: &InducedGraph) -> Filtration {
    let mut order: Vec<&Edge> = graph.edges().iter().collect();
    order.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.src.cmp(&b.src))
            .then(a.dst.cmp(&b.dst))
    });
    let mut local = std::collections::HashMap::with_capacity(graph.vertices().len());
    let mut vertices = Vec::with_capacity(graph.vertices().len());
    let mut entries = Vec::with_capacity(graph.vertices().len() + order.len());
    let mut edges = Vec::with_capacity(order.len());
    for e in order {
        let mut enter = |v: VertexId, entries: &mut Vec<FiltrationEntry>| -> usize {
            *local.entry(v).or_insert_with(|| {
                vertices.push(v);
                entries.push(FiltrationEntry {
                    simplex: Simplex::Vertex(v),
                    value: e.weight,
                });
                vertices.len() - 1
            })
        };
        let src_local = enter(e.src, &mut entries);
        let dst_local = enter(e.dst, &mut entries);
        entries.push(FiltrationEntry {
            simplex: Simplex::Edge(edges.len()),
            value: e.weight,
        });
        edges.push(FiltrationEdge {
            edge: *e,
            src_local,
            dst_local,
        });
    }
    Filtration {
        entries,
        edges,
        vertices,
        omega: graph.omega(),
        min_weight: graph.min_weight(),
    }
}

/// Union-find over local vertex indices with path halving.
struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }
}

/// Subgraph realizing one H0 point.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSubgraph {
    pub vertices: Vec<VertexId>,
    pub edges: Vec<Edge>,
    pub birth: f64,
    pub death: f64,
}

/// Maps each H0 point back to its subgraph.
///
/// Every vertex founds a component when it enters; the component's id is the
/// vertex's local index. When a component dies it is absorbed into the
/// survivor, which becomes its parent in a merge forest. A component's
/// generator is everything in its merge subtree: the founding vertices of all
/// descendants, plus every edge processed while one of them was the live
/// component containing that edge.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorTable {
    vertices: Vec<VertexId>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    edges: Vec<Edge>,
    edge_owner: Vec<usize>,
    owned_edges: Vec<Vec<usize>>,
    birth: Vec<f64>,
    death: Vec<f64>,
}

impl GeneratorTable {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Component that `id` merged into, if it died before the end.
    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn founding_vertex(&self, id: usize) -> VertexId {
        self.vertices[id]
    }

    fn subtree(&self, id: usize) -> Vec<usize> {
        let mut out = vec![id];
        let mut i = 0;
        while i < out.len() {
            out.extend_from_slice(&self.children[out[i]]);
            i += 1;
        }
        out
    }

    pub fn generator(&self, id: usize) -> GeneratorSubgraph {
        let members = self.subtree(id);
        let mut vertices: Vec<VertexId> = members.iter().map(|&c| self.vertices[c]).collect();
        vertices.sort_unstable();
        let mut edge_idx: Vec<usize> = members
            .iter()
            .flat_map(|&c| self.owned_edges[c].iter().copied())
            .collect();
        edge_idx.sort_unstable();
        GeneratorSubgraph {
            vertices,
            edges: edge_idx.into_iter().map(|e| self.edges[e]).collect(),
            birth: self.birth[id],
            death: self.death[id],
        }
    }
}

/// H0 diagram plus generator table.
#[derive(Debug, Clone, PartialEq)]
pub struct H0Result {
    pub diagram: PersistenceDiagram,
    pub generators: GeneratorTable,
}

/// Elder-rule union-find sweep. Point `i` of the returned diagram belongs to
/// the component founded by the `i`-th vertex to enter.
pub fn compute_h0(filtration: &Filtration) -> H0Result {
    let n = filtration.vertices.len();
    let mut ds = DisjointSet::new(n);
    // roots are always linked under the elder root, so a root's id is its component id
    let component: Vec<usize> = (0..n).collect();
    let mut birth = vec![f64::NAN; n];
    let mut death = vec![filtration.min_weight; n];
    let mut parent = vec![None; n];
    let mut edge_owner = Vec::with_capacity(filtration.edges.len());

    // local ids are assigned in entry order
    let mut next_vertex = 0usize;
    for entry in &filtration.entries {
        match entry.simplex {
            Simplex::Vertex(_) => {
                birth[next_vertex] = entry.value;
                next_vertex += 1;
            }
            Simplex::Edge(k) => {
                let fe = &filtration.edges[k];
                let ra = ds.find(fe.src_local);
                let rb = ds.find(fe.dst_local);
                if ra != rb {
                    let (ca, cb) = (component[ra], component[rb]);
                    // the younger component (smaller birth) dies; equal births
                    // kill the one with the larger founding vertex id
                    let a_dies = match birth[ca].total_cmp(&birth[cb]) {
                        std::cmp::Ordering::Less => true,
                        std::cmp::Ordering::Greater => false,
                        std::cmp::Ordering::Equal => {
                            filtration.vertices[ca] > filtration.vertices[cb]
                        }
                    };
                    let (dying_root, surviving_root) = if a_dies { (ra, rb) } else { (rb, ra) };
                    let (dying, surviving) = (component[dying_root], component[surviving_root]);
                    death[dying] = fe.edge.weight;
                    parent[dying] = Some(surviving);
                    ds.parent[dying_root] = surviving_root;
                }
                let root = ds.find(fe.src_local);
                edge_owner.push(component[root]);
            }
        }
    }

    let points = (0..n)
        .map(|id| DiagramPoint {
            birth: birth[id],
            death: death[id],
            dimension: Dimension::H0,
            generator_id: id,
        })
        .collect();

    let mut children = vec![Vec::new(); n];
    for (id, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(id);
        }
    }
    let mut owned_edges = vec![Vec::new(); n];
    for (e, &owner) in edge_owner.iter().enumerate() {
        owned_edges[owner].push(e);
    }

    H0Result {
        diagram: PersistenceDiagram {
            points,
            omega: filtration.omega,
            min_weight: filtration.min_weight,
        },
        generators: GeneratorTable {
            vertices: filtration.vertices.clone(),
            parent,
            children,
            edges: filtration.edges.iter().map(|fe| fe.edge).collect(),
            edge_owner,
            owned_edges,
            birth,
            death,
        },
    }
}

/// Every edge whose endpoints are already connected opens a cycle that is
/// never filled; its point is `(weight, min_weight)`.
pub fn compute_h1_births(filtration: &Filtration) -> Vec<DiagramPoint> {
    let mut ds = DisjointSet::new(filtration.vertices.len());
    let mut points = Vec::new();
    for (k, fe) in filtration.edges.iter().enumerate() {
        let ra = ds.find(fe.src_local);
        let rb = ds.find(fe.dst_local);
        if ra == rb {
            points.push(DiagramPoint {
                birth: fe.edge.weight,
                death: filtration.min_weight,
                dimension: Dimension::H1,
                generator_id: k,
            });
        } else {
            ds.parent[ra] = rb;
        }
    }
    points
}

/// H0 and H1 of a graph in one call.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphPersistence {
    pub filtration: Filtration,
    pub diagram: PersistenceDiagram,
    pub generators: GeneratorTable,
}

pub fn compute_persistence(graph: &InducedGraph) -> GraphPersistence {
    let filtration = build_filtration(graph);
    let H0Result {
        mut diagram,
        generators,
    } = compute_h0(&filtration);
    diagram.points.extend(compute_h1_births(&filtration));
    GraphPersistence {
        filtration,
        diagram,
        generators,
    }
}

/// Union of the generator subgraphs of all H0 points living longer than `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistentSubgraph {
    pub lambda: f64,
    /// Largest edge weight of the whole induced graph.
    pub omega: f64,
    /// Generator ids whose lifetime exceeds `lambda`.
    pub members: Vec<usize>,
    pub vertices: Vec<VertexId>,
    pub edges: Vec<Edge>,
}

impl PersistentSubgraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Mean edge weight; 0 for an empty subgraph.
    pub fn average_edge_weight(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.edges.iter().map(|e| e.weight).sum::<f64>() / self.edges.len() as f64
    }

    /// Mean of `omega - weight`, the edge lengths of the distance embedding; 0 when empty.
    pub fn average_edge_distance(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.omega - self.average_edge_weight()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

pub fn extract_persistent_subgraph(
    diagram: &PersistenceDiagram,
    generators: &GeneratorTable,
    lambda: f64,
) -> PersistentSubgraph {
    let mut members: Vec<usize> = diagram
        .dimension(Dimension::H0)
        .filter(|p| p.lifetime() > lambda)
        .map(|p| p.generator_id)
        .collect();
    members.sort_unstable();
    members.dedup();

    // a component is covered when it or a merge-forest ancestor is a member
    let n = generators.len();
    let mut covered = vec![false; n];
    for &m in &members {
        if !covered[m] {
            for c in generators.subtree(m) {
                covered[c] = true;
            }
        }
    }
    let mut vertices: Vec<VertexId> = (0..n)
        .filter(|&c| covered[c])
        .map(|c| generators.vertices[c])
        .collect();
    vertices.sort_unstable();
    let edges = generators
        .edge_owner
        .iter()
        .enumerate()
        .filter(|(_, &owner)| covered[owner])
        .map(|(e, _)| generators.edges[e])
        .collect();
    PersistentSubgraph {
        lambda,
        omega: diagram.omega,
        members,
        vertices,
        edges,
    }
}
