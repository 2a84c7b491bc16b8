//! Input-induced computation graphs.
//!
//! Feeding an input through the network realizes one edge per (source
//! neuron, weight) pair whose product is nonzero. Edge weights are the
//! absolute products, and each layer keeps only its heaviest `1 - rho`
//! fraction of edges.
//!
//! Vertex ids are global: input pixels first (row-major), then the outputs of
//! each layer in order, conv outputs channel-major.

use std::fmt;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::nn::{ConvGeometry, ForwardTrace, LayerKind, NetworkModel, Padding};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexId(pub usize);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Signed edge between layer-local neuron indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawEdge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Edge of an induced graph; `weight` is always strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneConfig {
    pub rho: f64,
}

impl PruneConfig {
    pub fn new(rho: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidInput(format!("rho {rho} outside [0, 1)")));
        }
        Ok(Self { rho })
    }

    pub fn none() -> Self {
        Self { rho: 0.0 }
    }
}

/// Absolute-valued, pruned graph induced by one input.
#[derive(Debug, Clone, PartialEq)]
pub struct InducedGraph {
    vertices: Vec<VertexId>,
    edges: Vec<Edge>,
    layer_of_edge: Vec<usize>,
    omega: f64,
    min_weight: f64,
}

impl InducedGraph {
    /// Assembles a graph from `(src, dst, weight, layer)` tuples. Weights must
    /// be finite and strictly positive.
    pub fn from_edges(
        edges: impl IntoIterator<Item = (VertexId, VertexId, f64, usize)>,
    ) -> Result<Self> {
        let mut out = Vec::new();
        let mut layers = Vec::new();
        for (src, dst, weight, layer) in edges {
            if !(weight.is_finite() && weight > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "edge {src}->{dst} has non-positive weight {weight}"
                )));
            }
            out.push(Edge { src, dst, weight });
            layers.push(layer);
        }
        if out.is_empty() {
            return Err(Error::DegenerateGraph);
        }
        let mut vertices: Vec<VertexId> = out.iter().flat_map(|e| [e.src, e.dst]).collect();
        vertices.sort_unstable();
        vertices.dedup();
        let omega = out.iter().map(|e| e.weight).fold(f64::MIN, f64::max);
        let min_weight = out.iter().map(|e| e.weight).fold(f64::MAX, f64::min);
        Ok(Self {
            vertices,
            edges: out,
            layer_of_edge: layers,
            omega,
            min_weight,
        })
    }

    /// Sorted, de-duplicated endpoints of all edges.
    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn layer_of_edge(&self) -> &[usize] {
        &self.layer_of_edge
    }

    /// Largest edge weight.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Smallest retained edge weight; truncated deaths land here.
    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }

    pub fn edge_count_in_layer(&self, layer: usize) -> usize {
        self.layer_of_edge.iter().filter(|&&l| l == layer).count()
    }

    /// Writes the `src dst weight layer` text dump.
    pub fn write_dump(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "# omega {}", self.omega)?;
        writeln!(w, "# min_weight {}", self.min_weight)?;
        writeln!(w, "# src dst weight layer")?;
        for (e, layer) in self.edges.iter().zip(&self.layer_of_edge) {
            writeln!(w, "{} {} {} {}", e.src, e.dst, e.weight, layer)?;
        }
        Ok(())
    }

    /// Parses a dump written by [`InducedGraph::write_dump`]. Lines starting
    /// with `#` are ignored; omega and min weight are recomputed.
    pub fn read_dump(r: impl BufRead, origin: &std::path::Path) -> Result<Self> {
        let mut edges = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: origin.to_path_buf(),
                line: n + 1,
                msg,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(parse_err(format!(
                    "expected 4 fields, found {}",
                    fields.len()
                )));
            }
            let src = fields[0]
                .parse()
                .map_err(|e| parse_err(format!("src: {e}")))?;
            let dst = fields[1]
                .parse()
                .map_err(|e| parse_err(format!("dst: {e}")))?;
            let weight = fields[2]
                .parse()
                .map_err(|e| parse_err(format!("weight: {e}")))?;
            let layer = fields[3]
                .parse()
                .map_err(|e| parse_err(format!("layer: {e}")))?;
            edges.push((VertexId(src), VertexId(dst), weight, layer));
        }
        Self::from_edges(edges)
    }
}

/// Fully-connected induced edges: `i -> j` carries `a_i * W[i][j]`.
/// `weight_matrix` has shape `[in, out]`; zero products are omitted.
pub fn induce_fc_edges(prev_activations: &Tensor, weight_matrix: &Tensor) -> Result<Vec<RawEdge>> {
    let (n_in, n_out) = match weight_matrix.shape() {
        [i, o] => (*i, *o),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![prev_activations.len(), 0],
                found: s.to_vec(),
            })
        }
    };
    if prev_activations.len() != n_in {
        return Err(Error::ShapeMismatch {
            expected: vec![n_in],
            found: prev_activations.shape().to_vec(),
        });
    }
    let mut edges = Vec::new();
    fc_edges_into(
        prev_activations.data(),
        weight_matrix.data(),
        n_out,
        &mut edges,
    );
    Ok(edges)
}

fn fc_edges_into(activations: &[f64], weights: &[f64], n_out: usize, out: &mut Vec<RawEdge>) {
    for (i, &a) in activations.iter().enumerate() {
        if a == 0.0 {
            continue;
        }
        let row = &weights[i * n_out..(i + 1) * n_out];
        for (j, &w) in row.iter().enumerate() {
            let weight = a * w;
            if weight != 0.0 {
                out.push(RawEdge {
                    src: i,
                    dst: j,
                    weight,
                });
            }
        }
    }
}

/// Convolutional induced edges: every input neuron in an output neuron's
/// receptive field contributes `activation × filter coefficient`. Padding
/// positions produce no edges.
///
/// `prev_activations` has shape `[channels, h, w]` (or `[h, w]` for one
/// channel); `filters` has shape `[filters, channels, k, k]`.
pub fn induce_conv_edges(
    prev_activations: &Tensor,
    filters: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Vec<RawEdge>> {
    let input = match prev_activations.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, 0, 0],
                found: s.to_vec(),
            })
        }
    };
    let (n_filters, size) = match filters.shape() {
        [f, c, k, k2] if *c == input.0 && k == k2 => (*f, *k),
        s => {
            return Err(Error::ShapeMismatch {
                expected: vec![0, input.0, 0, 0],
                found: s.to_vec(),
            })
        }
    };
    if stride == 0 || size == 0 {
        return Err(Error::InvalidInput(
            "stride and filter size must be positive".into(),
        ));
    }
    let geom = match padding {
        Padding::Same => ConvGeometry::same(input, n_filters, size, stride),
    };
    let mut edges = Vec::new();
    conv_edges_into(&geom, prev_activations.data(), filters.data(), &mut edges);
    Ok(edges)
}

fn conv_edges_into(
    geom: &ConvGeometry,
    activations: &[f64],
    filters: &[f64],
    out: &mut Vec<RawEdge>,
) {
    geom.for_each_tap(|o, i, w| {
        let weight = activations[i] * filters[w];
        if weight != 0.0 {
            out.push(RawEdge {
                src: i,
                dst: o,
                weight,
            });
        }
    });
}

/// Raw signed edges of layer `idx` for a recorded trace, in layer-local ids.
pub fn layer_raw_edges(model: &NetworkModel, trace: &ForwardTrace, idx: usize) -> Vec<RawEdge> {
    let layer = &model.layers()[idx];
    let x = trace.layer_input(idx);
    let mut edges = Vec::new();
    match layer.spec.kind {
        LayerKind::Conv { .. } => {
            let geom = layer.conv_geometry().expect("conv layer");
            conv_edges_into(&geom, x, &layer.weights, &mut edges);
        }
        LayerKind::FullyConnected { out_dim, .. } => {
            fc_edges_into(x, &layer.weights, out_dim, &mut edges);
        }
    }
    edges
}

/// Linear-interpolation empirical quantile of `values` at `q ∈ [0, 1]`.
/// Reorders `values`.
pub fn quantile_in_place(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    let (_, &mut lo_val, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return lo_val;
    }
    let hi_val = rest.iter().copied().fold(f64::INFINITY, f64::min);
    (lo_val + frac * (hi_val - lo_val)).min(hi_val)
}

/// Builds `G*_x`: per layer, absolute induced weights at or above that
/// layer's `rho` quantile.
pub fn build_induced_graph(
    model: &NetworkModel,
    trace: &ForwardTrace,
    prune: PruneConfig,
) -> Result<InducedGraph> {
    if trace.layers.len() != model.layers().len() || trace.input.len() != model.input_len() {
        return Err(Error::InvalidInput(
            "trace was not produced by this model".into(),
        ));
    }
    let offsets = model.vertex_offsets();
    let mut edges = Vec::new();
    for idx in 0..model.layers().len() {
        let raw = layer_raw_edges(model, trace, idx);
        if raw.is_empty() {
            continue;
        }
        let mut magnitudes: Vec<f64> = raw.iter().map(|e| e.weight.abs()).collect();
        let cutoff = quantile_in_place(&mut magnitudes, prune.rho);
        let (src_off, dst_off) = (offsets[idx], offsets[idx + 1]);
        edges.extend(
            raw.into_iter()
                .filter(|e| e.weight.abs() >= cutoff)
                .map(|e| {
                    (
                        VertexId(src_off + e.src),
                        VertexId(dst_off + e.dst),
                        e.weight.abs(),
                        idx,
                    )
                }),
        );
    }
    InducedGraph::from_edges(edges)
}
