//! Adversarial-input detection for feed-forward networks from the persistent
//! homology of input-induced computation graphs.
//!
//! A forward pass induces a weighted graph on the network's neurons
//! ([`graph`]). Its zero-dimensional persistence under a descending
//! edge-weight filtration ([`persistence`]) yields long-lived components whose
//! union is the input's persistent subgraph. [`detection`] compares those
//! subgraphs against statistics gathered from clean training inputs.

pub mod adversary;
pub mod detection;
pub mod error;
pub mod formats;
pub mod graph;
pub mod idx;
pub mod nn;
pub mod persistence;
pub mod pipeline;
pub mod tensor;
pub mod topology;

pub use adversary::{AdversarialExample, AdversarySet, AttackConfig};
pub use detection::{
    ClassSignature, DetectionMethod, DetectionVerdict, Detector, DetectorStats, Metrics, RankMode,
    WeightView,
};
pub use error::{Error, Result};
pub use graph::{Edge, InducedGraph, PruneConfig, VertexId};
pub use idx::DatasetHandle;
pub use nn::{ForwardTrace, NetworkModel};
pub use persistence::{DiagramPoint, Dimension, PersistenceDiagram, PersistentSubgraph};
pub use tensor::Tensor;
pub use topology::{InputTopology, TopologyConfig};
