//! End-to-end experiment: train, attack, fit detectors, score clean and
//! adversarial inputs.
//!
//! The dataset is shuffled once from the seed and cut into consecutive
//! blocks: network training images, the clean pool `U` (validation, signature
//! and test parts) and the pool attack sources are drawn from.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::adversary::{build_adversary_sets, AdversarySet, AttackConfig, Optimizer};
use crate::detection::{
    average_match_score, evaluate, persistent_subgraphs, signatures_from_subgraphs, ClassSignature,
    DetectionMethod, Detector, DetectorStats, RankMode, WeightView,
};
use crate::error::{Error, Result};
use crate::formats::{
    write_adversary_set, write_metrics, write_signatures, write_stats, write_summaries,
    write_verdicts, MetricsRow, RunHeader, SubgraphSummary, VerdictRow,
};
use crate::idx::DatasetHandle;
use crate::nn::{accuracy, save_model, train, NetworkModel, TrainConfig, TrainReport};
use crate::persistence::PersistentSubgraph;
use crate::tensor::Tensor;
use crate::topology::TopologyConfig;

/// One adversary set to build and score, with its edge-count percentile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaSetting {
    pub kappa: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub filters: usize,
    pub hidden: usize,
    pub train_size: usize,
    /// Size of the clean pool `U`.
    pub u_size: usize,
    /// Leading part of `U` used for signatures and statistics; the rest is test data.
    pub u_train: usize,
    /// Part of the `U` training block held out for the average-match statistics.
    pub u_val: usize,
    pub clean_test: usize,
    pub adversarial_test: usize,
    pub attack_sources: usize,
    pub kappas: Vec<KappaSetting>,
    pub topology: TopologyConfig,
    pub rank_mode: RankMode,
    pub weight_view: WeightView,
    pub train: TrainConfig,
    pub attack: AttackConfig,
}

impl Default for PipelineConfig {
    /// Desk-scale run on the bundled 5000-image subset.
    fn default() -> Self {
        Self {
            seed: 7,
            filters: 8,
            hidden: 128,
            train_size: 2000,
            u_size: 1000,
            u_train: 550,
            u_val: 100,
            clean_test: 100,
            adversarial_test: 100,
            attack_sources: 12,
            kappas: vec![
                KappaSetting {
                    kappa: 0.0,
                    pi: 0.9,
                },
                KappaSetting {
                    kappa: 20.0,
                    pi: 0.95,
                },
            ],
            topology: TopologyConfig::default(),
            rank_mode: RankMode::Dense,
            weight_view: WeightView::Distance,
            train: TrainConfig {
                epochs: 10,
                batch_size: 32,
                learning_rate: 0.05,
                seed: 7,
            },
            attack: AttackConfig {
                optimizer: Optimizer::Adam,
                learning_rate: 0.05,
                iterations: 300,
                ..AttackConfig::default()
            },
        }
    }
}

impl PipelineConfig {
    /// The reference network and experiment sizes. Needs the full MNIST
    /// training file and hours of CPU time.
    pub fn full_scale() -> Self {
        Self {
            filters: 32,
            hidden: 1024,
            train_size: 55_000,
            u_size: 1000,
            u_train: 550,
            u_val: 100,
            clean_test: 450,
            adversarial_test: 450,
            attack_sources: 50,
            train: TrainConfig {
                epochs: 50,
                batch_size: 50,
                learning_rate: 0.01,
                seed: 7,
            },
            attack: AttackConfig {
                optimizer: Optimizer::Adam,
                ..AttackConfig::default()
            },
            ..Self::default()
        }
    }

    fn validate(&self, available: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.u_val >= self.u_train {
            return bad(format!(
                "u_val ({}) must be smaller than u_train ({})",
                self.u_val, self.u_train
            ));
        }
        if self.u_train >= self.u_size {
            return bad(format!(
                "u_train ({}) must be smaller than u_size ({})",
                self.u_train, self.u_size
            ));
        }
        if self.clean_test > self.u_size - self.u_train {
            return bad(format!(
                "clean_test ({}) exceeds the U test block",
                self.clean_test
            ));
        }
        if self.train_size + self.u_size + self.attack_sources > available {
            return bad(format!(
                "dataset has {available} images; configuration needs at least {}",
                self.train_size + self.u_size + self.attack_sources
            ));
        }
        if self.kappas.is_empty() {
            return bad("no kappa settings".into());
        }
        Ok(())
    }

    /// Every parameter, in a fixed order, for artifact headers.
    pub fn header(&self) -> RunHeader {
        let kappas: Vec<String> = self
            .kappas
            .iter()
            .map(|k| format!("{}:{}", k.kappa, k.pi))
            .collect();
        let optimizer = match self.attack.optimizer {
            Optimizer::GradientDescent => "gd",
            Optimizer::Adam => "adam",
        };
        RunHeader::new()
            .with("seed", self.seed)
            .with("filters", self.filters)
            .with("hidden", self.hidden)
            .with("train_size", self.train_size)
            .with("u_size", self.u_size)
            .with("u_train", self.u_train)
            .with("u_val", self.u_val)
            .with("clean_test", self.clean_test)
            .with("adversarial_test", self.adversarial_test)
            .with("attack_sources", self.attack_sources)
            .with("kappa:pi", kappas.join(" "))
            .with("rho", self.topology.prune.rho)
            .with("lambda", self.topology.lambda)
            .with("rank_mode", self.rank_mode.name())
            .with("weight_view", self.weight_view.name())
            .with("epochs", self.train.epochs)
            .with("batch_size", self.train.batch_size)
            .with("train_learning_rate", self.train.learning_rate)
            .with("train_seed", self.train.seed)
            .with("attack_optimizer", optimizer)
            .with("attack_learning_rate", self.attack.learning_rate)
            .with("attack_iterations", self.attack.iterations)
            .with("attack_initial_c", self.attack.initial_c)
            .with("attack_c_steps", self.attack.c_search_steps)
            .with("attack_abort_early", self.attack.abort_early)
            .with("attack_starts", self.attack.starts)
            .with("attack_seed", self.attack.seed)
    }
}

/// Results for one adversary set.
#[derive(Debug, Clone)]
pub struct KappaRun {
    pub setting: KappaSetting,
    pub adversaries: AdversarySet,
    pub stats: DetectorStats,
    pub verdicts: Vec<VerdictRow>,
    pub metrics: Vec<MetricsRow>,
    pub summaries: Vec<SubgraphSummary>,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub model: NetworkModel,
    pub train_report: TrainReport,
    /// Accuracy on every image not used for network training.
    pub holdout_accuracy: f64,
    pub signatures: Vec<ClassSignature>,
    pub kappas: Vec<KappaRun>,
}

impl PipelineRun {
    pub fn detector(&self, kappa_index: usize, topology: TopologyConfig) -> Detector {
        Detector {
            config: topology,
            signatures: self.signatures.clone(),
            stats: self.kappas[kappa_index].stats,
        }
    }
}

fn summary(id: String, is_adversarial: bool, sub: &PersistentSubgraph) -> SubgraphSummary {
    SubgraphSummary {
        input_id: id,
        is_adversarial,
        edge_count: sub.edge_count(),
        average_edge_weight: sub.average_edge_weight(),
        average_edge_distance: sub.average_edge_distance(),
    }
}

pub fn run_pipeline(data: &DatasetHandle, config: &PipelineConfig) -> Result<PipelineRun> {
    config.validate(data.len())?;
    let shape = match data.images.first().map(|t| t.shape()) {
        Some([h, w]) => (*h, *w),
        _ => {
            return Err(Error::InvalidInput(
                "dataset images must be two-dimensional".into(),
            ))
        }
    };
    let order = data.shuffled_indices(config.seed);
    let (train_idx, rest) = order.split_at(config.train_size);
    let (u_idx, pool_idx) = rest.split_at(config.u_size);
    let images =
        |idx: &[usize]| -> Vec<Tensor> { idx.iter().map(|&i| data.images[i].clone()).collect() };
    let labels = |idx: &[usize]| -> Vec<usize> { idx.iter().map(|&i| data.labels[i]).collect() };

    let classes = data.labels.iter().max().map_or(0, |m| m + 1);
    let specs = NetworkModel::conv_mlp_specs(shape, config.filters, config.hidden, classes);
    let mut model = NetworkModel::initialized(shape, &specs, config.seed)?;
    let train_report = train(
        &mut model,
        &images(train_idx),
        &labels(train_idx),
        &config.train,
    )?;
    let holdout_accuracy = accuracy(&model, &images(rest), &labels(rest));

    let val_idx = &u_idx[..config.u_val];
    let sig_idx = &u_idx[config.u_val..config.u_train];
    let test_idx = &u_idx[config.u_train..config.u_train + config.clean_test];

    let topo = config.topology;
    let sig_subs = persistent_subgraphs(&model, &images(sig_idx), topo)?;
    let signatures = signatures_from_subgraphs(
        model.class_count(),
        labels(sig_idx)
            .into_iter()
            .zip(sig_subs.iter().map(|(_, s)| s)),
        config.rank_mode,
    )?;
    let val_scores: Vec<f64> = persistent_subgraphs(&model, &images(val_idx), topo)?
        .iter()
        .map(|(_, s)| average_match_score(&signatures, s))
        .collect();
    let sig_refs: Vec<&PersistentSubgraph> = sig_subs.iter().map(|(_, s)| s).collect();
    let clean_subs = persistent_subgraphs(&model, &images(test_idx), topo)?;

    let sources: Vec<(usize, &Tensor, usize)> = pool_idx
        .iter()
        .filter(|&&i| {
            model
                .predict(&data.images[i])
                .is_ok_and(|p| p == data.labels[i])
        })
        .take(config.attack_sources)
        .map(|&i| (i, &data.images[i], data.labels[i]))
        .collect();
    let kappa_values: Vec<f64> = config.kappas.iter().map(|k| k.kappa).collect();
    let sets = build_adversary_sets(&model, &sources, &kappa_values, &config.attack)?;

    let mut kappas = Vec::new();
    for (setting, set) in config.kappas.iter().zip(sets) {
        let stats = DetectorStats::fit(&val_scores, &sig_refs, setting.pi, config.weight_view)?;
        let detector = Detector {
            config: topo,
            signatures: signatures.clone(),
            stats,
        };
        let chosen: Vec<_> = set.examples.iter().take(config.adversarial_test).collect();
        let adv_images: Vec<Tensor> = chosen.iter().map(|r| r.example.perturbed.clone()).collect();
        let adv_subs = persistent_subgraphs(&model, &adv_images, topo)?;

        let mut inputs: Vec<(String, bool, &(usize, PersistentSubgraph))> = Vec::new();
        for (&i, s) in test_idx.iter().zip(&clean_subs) {
            inputs.push((format!("clean-{i}"), false, s));
        }
        for (r, s) in chosen.iter().zip(&adv_subs) {
            let id = format!(
                "adv-k{}-{}-t{}",
                setting.kappa, r.source_index, r.example.target
            );
            inputs.push((id, true, s));
        }

        let mut verdicts = Vec::new();
        let mut summaries = Vec::new();
        for (id, is_adv, (predicted, sub)) in &inputs {
            for v in detector.verdicts_for(*predicted, sub) {
                verdicts.push(VerdictRow {
                    input_id: id.clone(),
                    is_adversarial: *is_adv,
                    method: v.method,
                    flagged: v.flagged,
                    score: v.score,
                });
            }
            summaries.push(summary(id.clone(), *is_adv, sub));
        }

        let mut metrics = Vec::new();
        for method in DetectionMethod::ALL {
            let flags = |adv: bool| -> Vec<bool> {
                verdicts
                    .iter()
                    .filter(|r| r.method == method && r.is_adversarial == adv)
                    .map(|r| r.flagged)
                    .collect()
            };
            metrics.push(MetricsRow {
                kappa: setting.kappa,
                lambda: topo.lambda,
                pi: (method == DetectionMethod::EdgeCount).then_some(setting.pi),
                method,
                metrics: evaluate(&flags(false), &flags(true))?,
            });
        }
        kappas.push(KappaRun {
            setting: *setting,
            adversaries: set,
            stats,
            verdicts,
            metrics,
            summaries,
        });
    }

    Ok(PipelineRun {
        model,
        train_report,
        holdout_accuracy,
        signatures,
        kappas,
    })
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Writes every artifact of a run into `dir`. File names:
/// `model.tdnn`, `signatures.txt`, `metrics.csv`, and per kappa
/// `adversaries_k<κ>.csv`, `stats_k<κ>.txt`, `verdicts_k<κ>.csv`, `subgraphs_k<κ>.csv`.
pub fn write_outputs(
    dir: &Path,
    run: &PipelineRun,
    config: &PipelineConfig,
    data: &DatasetHandle,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    let model_path = dir.join("model.tdnn");
    save_model(&run.model, &model_path)?;

    let mut header = config.header();
    for p in &data.provenance {
        let name = p.path.file_name().map_or_else(
            || p.path.display().to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        header.push(format!("sha256:{name}"), &p.sha256);
    }
    header.push_checksum("model.tdnn", &model_path)?;
    header.push("holdout_accuracy", run.holdout_accuracy);

    let mut w = create(dir, "signatures.txt")?;
    write_signatures(&mut w, &header, &run.signatures)?;
    w.flush()?;

    let mut all_metrics = Vec::new();
    for k in &run.kappas {
        let tag = k.setting.kappa;
        let mut w = create(dir, &format!("adversaries_k{tag}.csv"))?;
        write_adversary_set(&mut w, &header, &k.adversaries)?;
        w.flush()?;
        let mut w = create(dir, &format!("stats_k{tag}.txt"))?;
        write_stats(&mut w, &header, &k.stats)?;
        w.flush()?;
        let mut w = create(dir, &format!("verdicts_k{tag}.csv"))?;
        write_verdicts(&mut w, &header, &k.verdicts)?;
        w.flush()?;
        let mut w = create(dir, &format!("subgraphs_k{tag}.csv"))?;
        write_summaries(&mut w, &header, &k.summaries)?;
        w.flush()?;
        all_metrics.extend(k.metrics.iter().cloned());
    }
    let mut w = create(dir, "metrics.csv")?;
    write_metrics(&mut w, &header, &all_metrics)?;
    w.flush()?;
    Ok(())
}

/// Parses `0:0.9 20:0.95`-style kappa settings.
pub fn parse_kappas(s: &str) -> Result<Vec<KappaSetting>> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let (k, p) = t
                .split_once(':')
                .ok_or_else(|| Error::InvalidInput(format!("expected kappa:pi, found '{t}'")))?;
            let num = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| Error::InvalidInput(format!("'{v}': {e}")))
            };
            Ok(KappaSetting {
                kappa: num(k)?,
                pi: num(p)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_settings_parse() {
        let k = parse_kappas("0:0.9, 20:0.95").unwrap();
        assert_eq!(
            k,
            vec![
                KappaSetting {
                    kappa: 0.0,
                    pi: 0.9
                },
                KappaSetting {
                    kappa: 20.0,
                    pi: 0.95
                }
            ]
        );
        assert!(parse_kappas("20").is_err());
    }

    #[test]
    fn sizes_are_validated() {
        let cfg = PipelineConfig::default();
        assert!(cfg.validate(5000).is_ok());
        assert!(cfg.validate(3000).is_err());
        let cfg = PipelineConfig {
            u_val: 600,
            ..PipelineConfig::default()
        };
        assert!(cfg.validate(5000).is_err());
    }

    #[test]
    fn header_lists_core_parameters() {
        let h = PipelineConfig::default().header();
        assert_eq!(h.get("rho"), Some("0.99"));
        assert_eq!(h.get("lambda"), Some("0.1"));
        assert_eq!(h.get("kappa:pi"), Some("0:0.9 20:0.95"));
    }
}
