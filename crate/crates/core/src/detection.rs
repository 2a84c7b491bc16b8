//! Detectors built on persistent subgraphs.
//!
//! Per class, the vertices of the training subgraphs are counted and ranked
//! into a signature. An input is scored against the signatures (node
//! matching) or against summary statistics of the training subgraphs (edge
//! count and average edge weight).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{quantile_in_place, VertexId};
use crate::nn::NetworkModel;
use crate::persistence::PersistentSubgraph;
use crate::tensor::{argmax, Tensor};
use crate::topology::{analyze, TopologyConfig};

/// How a signature turns occurrence counts into match values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankMode {
    /// Dense ascending rank: least frequent count is 1, ties share a rank.
    #[default]
    Dense,
    /// The raw occurrence count.
    RawCount,
}

/// Which per-edge value the average-edge-weight detector averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightView {
    /// `|activation × weight|`.
    Magnitude,
    /// `omega - |activation × weight|`, the edge length in the distance embedding.
    #[default]
    Distance,
}

impl WeightView {
    pub fn average(self, subgraph: &PersistentSubgraph) -> f64 {
        match self {
            WeightView::Magnitude => subgraph.average_edge_weight(),
            WeightView::Distance => subgraph.average_edge_distance(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            WeightView::Magnitude => "magnitude",
            WeightView::Distance => "distance",
        }
    }
}

impl FromStr for WeightView {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magnitude" => Ok(WeightView::Magnitude),
            "distance" => Ok(WeightView::Distance),
            _ => Err(Error::InvalidInput(format!("unknown weight view '{s}'"))),
        }
    }
}

impl RankMode {
    pub fn name(self) -> &'static str {
        match self {
            RankMode::Dense => "dense",
            RankMode::RawCount => "raw",
        }
    }
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(RankMode::Dense),
            "raw" => Ok(RankMode::RawCount),
            _ => Err(Error::InvalidInput(format!("unknown rank mode '{s}'"))),
        }
    }
}

/// Ranked vertex occurrences for one class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassSignature {
    pub class: usize,
    pub vertex_counts: BTreeMap<VertexId, usize>,
    pub rank: BTreeMap<VertexId, usize>,
}

impl ClassSignature {
    pub fn from_counts(
        class: usize,
        vertex_counts: BTreeMap<VertexId, usize>,
        mode: RankMode,
    ) -> Self {
        let rank = match mode {
            RankMode::RawCount => vertex_counts.clone(),
            RankMode::Dense => {
                let mut levels: Vec<usize> = vertex_counts.values().copied().collect();
                levels.sort_unstable();
                levels.dedup();
                vertex_counts
                    .iter()
                    .map(|(&v, c)| (v, levels.binary_search(c).unwrap() + 1))
                    .collect()
            }
        };
        Self {
            class,
            vertex_counts,
            rank,
        }
    }

    /// `|𝒱_i|`, the number of distinct vertices.
    pub fn size(&self) -> usize {
        self.vertex_counts.len()
    }
}

/// Counts vertices of labelled subgraphs into one signature per class.
pub fn signatures_from_subgraphs<'a>(
    class_count: usize,
    subgraphs: impl IntoIterator<Item = (usize, &'a PersistentSubgraph)>,
    mode: RankMode,
) -> Result<Vec<ClassSignature>> {
    let mut counts: Vec<BTreeMap<VertexId, usize>> = vec![BTreeMap::new(); class_count];
    let mut seen = vec![false; class_count];
    for (label, sub) in subgraphs {
        if label >= class_count {
            return Err(Error::LabelOutOfRange { label, class_count });
        }
        seen[label] = true;
        for &v in &sub.vertices {
            *counts[label].entry(v).or_default() += 1;
        }
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::MissingClass(missing));
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ClassSignature::from_counts(i, c, mode))
        .collect())
}

/// Persistent subgraph of every image, computed in parallel.
pub fn persistent_subgraphs(
    model: &NetworkModel,
    images: &[Tensor],
    config: TopologyConfig,
) -> Result<Vec<(usize, PersistentSubgraph)>> {
    images
        .par_iter()
        .map(|x| analyze(model, x, config).map(|t| (t.predicted(), t.subgraph)))
        .collect()
}

pub fn build_signatures(
    model: &NetworkModel,
    images: &[Tensor],
    labels: &[usize],
    config: TopologyConfig,
    mode: RankMode,
) -> Result<Vec<ClassSignature>> {
    if images.len() != labels.len() {
        return Err(Error::InvalidInput(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let subs = persistent_subgraphs(model, images, config)?;
    signatures_from_subgraphs(
        model.class_count(),
        labels.iter().copied().zip(subs.iter().map(|(_, s)| s)),
        mode,
    )
}

/// `s_i = Σ_{v ∈ V^λ_x} r_i(v) / |𝒱_i|`.
pub fn similarity(sig: &ClassSignature, subgraph: &PersistentSubgraph) -> f64 {
    if sig.size() == 0 {
        log::warn!("signature for class {} is empty", sig.class);
        return 0.0;
    }
    let total: usize = subgraph
        .vertices
        .iter()
        .filter_map(|v| sig.rank.get(v))
        .sum();
    total as f64 / sig.size() as f64
}

pub fn similarities(signatures: &[ClassSignature], subgraph: &PersistentSubgraph) -> Vec<f64> {
    signatures.iter().map(|s| similarity(s, subgraph)).collect()
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolation percentile, `q` in `[0, 1]`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptySet("percentile input"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!(
            "percentile {q} outside [0, 1]"
        )));
    }
    Ok(quantile_in_place(&mut values.to_vec(), q))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorStats {
    pub mu_match: f64,
    pub sigma_match: f64,
    pub median_edges: f64,
    pub percentile_edges: f64,
    pub pi: f64,
    pub mu_weight: f64,
    pub sigma_weight: f64,
    pub weight_view: WeightView,
}

impl DetectorStats {
    /// `val_scores` are average-match scores of the validation images;
    /// `train` are the persistent subgraphs of the training images.
    pub fn fit(
        val_scores: &[f64],
        train: &[&PersistentSubgraph],
        pi: f64,
        weight_view: WeightView,
    ) -> Result<Self> {
        if val_scores.is_empty() {
            return Err(Error::EmptySet("validation scores"));
        }
        if train.is_empty() {
            return Err(Error::EmptySet("training subgraphs"));
        }
        let edges: Vec<f64> = train.iter().map(|s| s.edge_count() as f64).collect();
        let weights: Vec<f64> = train.iter().map(|s| weight_view.average(s)).collect();
        Ok(Self {
            mu_match: mean(val_scores),
            sigma_match: sample_std(val_scores),
            median_edges: percentile(&edges, 0.5)?,
            percentile_edges: percentile(&edges, pi)?,
            pi,
            mu_weight: mean(&weights),
            sigma_weight: sample_std(&weights),
            weight_view,
        })
    }

    pub fn match_threshold(&self) -> f64 {
        self.mu_match + self.sigma_match
    }

    pub fn edge_threshold(&self) -> f64 {
        self.median_edges + self.percentile_edges
    }

    pub fn weight_threshold(&self) -> f64 {
        self.mu_weight + self.sigma_weight
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DetectionMethod {
    MaxNodeMatch,
    AvgNodeMatch,
    EdgeCount,
    AvgEdgeWeight,
}

impl DetectionMethod {
    pub const ALL: [DetectionMethod; 4] = [
        DetectionMethod::MaxNodeMatch,
        DetectionMethod::AvgNodeMatch,
        DetectionMethod::EdgeCount,
        DetectionMethod::AvgEdgeWeight,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectionMethod::MaxNodeMatch => "max_node_match",
            DetectionMethod::AvgNodeMatch => "avg_node_match",
            DetectionMethod::EdgeCount => "edge_count",
            DetectionMethod::AvgEdgeWeight => "avg_edge_weight",
        }
    }
}

impl fmt::Display for DetectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DetectionMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown detection method '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionVerdict {
    pub method: DetectionMethod,
    pub flagged: bool,
    pub score: f64,
    pub predicted_class: usize,
    /// Best-matching class, for [`DetectionMethod::MaxNodeMatch`] only.
    pub signature_class: Option<usize>,
}

/// Flags when the best-matching signature class differs from the prediction.
/// Ties go to the smallest class index.
pub fn max_node_match_verdict(
    predicted: usize,
    subgraph: &PersistentSubgraph,
    signatures: &[ClassSignature],
) -> DetectionVerdict {
    let scores = similarities(signatures, subgraph);
    let best = argmax(&scores);
    DetectionVerdict {
        method: DetectionMethod::MaxNodeMatch,
        flagged: best != predicted,
        score: scores.get(best).copied().unwrap_or(0.0),
        predicted_class: predicted,
        signature_class: Some(best),
    }
}

/// Mean over classes of `s_i`.
pub fn average_match_score(signatures: &[ClassSignature], subgraph: &PersistentSubgraph) -> f64 {
    if signatures.is_empty() {
        return 0.0;
    }
    mean(&similarities(signatures, subgraph))
}

pub fn avg_node_match_verdict(
    predicted: usize,
    subgraph: &PersistentSubgraph,
    signatures: &[ClassSignature],
    stats: &DetectorStats,
) -> DetectionVerdict {
    let score = average_match_score(signatures, subgraph);
    DetectionVerdict {
        method: DetectionMethod::AvgNodeMatch,
        flagged: score > stats.match_threshold(),
        score,
        predicted_class: predicted,
        signature_class: None,
    }
}

pub fn detect_edge_count(
    predicted: usize,
    subgraph: &PersistentSubgraph,
    stats: &DetectorStats,
) -> DetectionVerdict {
    let score = subgraph.edge_count() as f64;
    DetectionVerdict {
        method: DetectionMethod::EdgeCount,
        flagged: score > stats.edge_threshold(),
        score,
        predicted_class: predicted,
        signature_class: None,
    }
}

pub fn detect_avg_edge_weight(
    predicted: usize,
    subgraph: &PersistentSubgraph,
    stats: &DetectorStats,
) -> DetectionVerdict {
    if subgraph.edges.is_empty() {
        log::warn!("empty persistent subgraph; average edge weight reported as 0");
        return DetectionVerdict {
            method: DetectionMethod::AvgEdgeWeight,
            flagged: false,
            score: 0.0,
            predicted_class: predicted,
            signature_class: None,
        };
    }
    let score = stats.weight_view.average(subgraph);
    DetectionVerdict {
        method: DetectionMethod::AvgEdgeWeight,
        flagged: score > stats.weight_threshold(),
        score,
        predicted_class: predicted,
        signature_class: None,
    }
}

pub fn detect_max_node_match(
    model: &NetworkModel,
    x: &Tensor,
    signatures: &[ClassSignature],
    config: TopologyConfig,
) -> Result<DetectionVerdict> {
    let topo = analyze(model, x, config)?;
    Ok(max_node_match_verdict(
        topo.predicted(),
        &topo.subgraph,
        signatures,
    ))
}

pub fn detect_avg_node_match(
    model: &NetworkModel,
    x: &Tensor,
    signatures: &[ClassSignature],
    stats: &DetectorStats,
    config: TopologyConfig,
) -> Result<DetectionVerdict> {
    let topo = analyze(model, x, config)?;
    Ok(avg_node_match_verdict(
        topo.predicted(),
        &topo.subgraph,
        signatures,
        stats,
    ))
}

/// Signatures and statistics fitted on clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: TopologyConfig,
    pub signatures: Vec<ClassSignature>,
    pub stats: DetectorStats,
}

impl Detector {
    /// Builds signatures from `train` and fits statistics: match scores on
    /// `val`, edge and weight statistics on `train`.
    pub fn fit(
        model: &NetworkModel,
        train: (&[Tensor], &[usize]),
        val: &[Tensor],
        config: TopologyConfig,
        pi: f64,
        mode: RankMode,
        weight_view: WeightView,
    ) -> Result<Self> {
        let (images, labels) = train;
        if images.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        let train_subs = persistent_subgraphs(model, images, config)?;
        let signatures = signatures_from_subgraphs(
            model.class_count(),
            labels
                .iter()
                .copied()
                .zip(train_subs.iter().map(|(_, s)| s)),
            mode,
        )?;
        let val_subs = persistent_subgraphs(model, val, config)?;
        let val_scores: Vec<f64> = val_subs
            .iter()
            .map(|(_, s)| average_match_score(&signatures, s))
            .collect();
        let train_refs: Vec<&PersistentSubgraph> = train_subs.iter().map(|(_, s)| s).collect();
        let stats = DetectorStats::fit(&val_scores, &train_refs, pi, weight_view)?;
        Ok(Self {
            config,
            signatures,
            stats,
        })
    }

    /// All four verdicts, in [`DetectionMethod::ALL`] order.
    pub fn verdicts_for(
        &self,
        predicted: usize,
        subgraph: &PersistentSubgraph,
    ) -> [DetectionVerdict; 4] {
        [
            max_node_match_verdict(predicted, subgraph, &self.signatures),
            avg_node_match_verdict(predicted, subgraph, &self.signatures, &self.stats),
            detect_edge_count(predicted, subgraph, &self.stats),
            detect_avg_edge_weight(predicted, subgraph, &self.stats),
        ]
    }

    pub fn detect(&self, model: &NetworkModel, x: &Tensor) -> Result<[DetectionVerdict; 4]> {
        let topo = analyze(model, x, self.config)?;
        Ok(self.verdicts_for(topo.predicted(), &topo.subgraph))
    }

    pub fn detect_batch(
        &self,
        model: &NetworkModel,
        inputs: &[Tensor],
    ) -> Result<Vec<[DetectionVerdict; 4]>> {
        inputs.par_iter().map(|x| self.detect(model, x)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub true_positives: usize,
    pub true_negatives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub f1: f64,
}

/// Adversarial inputs are the positives.
pub fn evaluate(clean_flags: &[bool], adversarial_flags: &[bool]) -> Result<Metrics> {
    if clean_flags.is_empty() {
        return Err(Error::EmptySet("clean"));
    }
    if adversarial_flags.is_empty() {
        return Err(Error::EmptySet("adversarial"));
    }
    let fp = clean_flags.iter().filter(|&&f| f).count();
    let tn = clean_flags.len() - fp;
    let tp = adversarial_flags.iter().filter(|&&f| f).count();
    let fn_ = adversarial_flags.len() - tp;
    let total = clean_flags.len() + adversarial_flags.len();
    let f1 = if tp == 0 {
        0.0
    } else {
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fn_) as f64;
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Metrics {
        accuracy: 1.0 - (fp + fn_) as f64 / total as f64,
        true_positives: tp,
        true_negatives: tn,
        false_positives: fp,
        false_negatives: fn_,
        f1,
    })
}
