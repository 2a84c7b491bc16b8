//! Forward pass → induced graph → persistence → persistent subgraph.

use crate::error::{Error, Result};
use crate::graph::{build_induced_graph, InducedGraph, PruneConfig};
use crate::nn::{ForwardTrace, NetworkModel};
use crate::persistence::{
    compute_persistence, extract_persistent_subgraph, GraphPersistence, PersistentSubgraph,
};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TopologyConfig {
    pub prune: PruneConfig,
    pub lambda: f64,
}

impl TopologyConfig {
    pub fn new(rho: f64, lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "lambda {lambda} must be finite and non-negative"
            )));
        }
        Ok(Self {
            prune: PruneConfig::new(rho)?,
            lambda,
        })
    }
}

impl Default for TopologyConfig {
    fn default() -> Self {
        Self {
            prune: PruneConfig { rho: 0.99 },
            lambda: 0.1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InputTopology {
    pub trace: ForwardTrace,
    pub graph: InducedGraph,
    pub persistence: GraphPersistence,
    pub subgraph: PersistentSubgraph,
}

impl InputTopology {
    pub fn predicted(&self) -> usize {
        self.trace.predicted
    }
}

pub fn analyze(
    model: &NetworkModel,
    input: &Tensor,
    config: TopologyConfig,
) -> Result<InputTopology> {
    let trace = model.forward(input)?;
    analyze_trace(model, trace, config)
}

pub fn analyze_trace(
    model: &NetworkModel,
    trace: ForwardTrace,
    config: TopologyConfig,
) -> Result<InputTopology> {
    let graph = build_induced_graph(model, &trace, config.prune)?;
    let persistence = compute_persistence(&graph);
    let subgraph =
        extract_persistent_subgraph(&persistence.diagram, &persistence.generators, config.lambda);
    Ok(InputTopology {
        trace,
        graph,
        persistence,
        subgraph,
    })
}
