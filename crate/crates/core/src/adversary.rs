//! Targeted L2 adversarial examples via the tanh change of variables.
//!
//! For a source image `x` and target `t` the attack optimizes `w` in
//!
//! ```text
//! ‖½(tanh(w) + 1) − x‖₂² + c · max(max_{i≠t} z_i − z_t, −κ)
//! ```
//!
//! where `z` are the logits of the perturbed image. The box constraint
//! `x' ∈ [0, 1]` holds by construction. The trade-off constant `c` is tuned by
//! a bisection that doubles `c` until an attack succeeds and then halves the
//! bracket, keeping the lowest-distortion success.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{margin, Loss, NetworkModel};
use crate::tensor::Tensor;

/// Inputs are clamped to `[ε, 1 − ε]` before `atanh`.
pub const ATANH_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    /// Fixed-step descent. Pixels near 0 or 1 barely move, since the tanh
    /// map is flat there.
    GradientDescent,
    /// Adam with β₁ = 0.9, β₂ = 0.999.
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub target: usize,
    pub kappa: f64,
    pub initial_c: f64,
    pub c_search_steps: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    /// Stop a `c` round once the objective stalls (checked every tenth of
    /// the iteration budget).
    pub abort_early: bool,
    /// Number of starting points; extra starts jitter the source image.
    pub starts: usize,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            target: 0,
            kappa: 0.0,
            initial_c: 1.0,
            c_search_steps: 5,
            iterations: 1000,
            learning_rate: 1e-2,
            optimizer: Optimizer::Adam,
            abort_early: true,
            starts: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub original: Tensor,
    pub perturbed: Tensor,
    pub distortion: f64,
    pub predicted_class: usize,
    pub target: usize,
    pub kappa: f64,
    pub success: bool,
}

/// `max(max_{i≠t} z_i − z_t, −κ)`.
pub fn attack_objective(logits: &[f64], target: usize, kappa: f64) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label: target,
            class_count: logits.len(),
        });
    }
    Ok(margin(logits, target, kappa).0)
}

fn to_box(w: f64) -> f64 {
    0.5 * (w.tanh() + 1.0)
}

fn from_box(x: f64) -> f64 {
    (2.0 * x.clamp(ATANH_GUARD, 1.0 - ATANH_GUARD) - 1.0).atanh()
}

struct Round {
    /// Best successful image this round, with its squared distortion.
    best: Option<(Vec<f64>, f64)>,
}

fn run_round(model: &NetworkModel, x: &[f64], w0: &[f64], c: f64, cfg: &AttackConfig) -> Round {
    let n = x.len();
    let mut w = w0.to_vec();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let loss = Loss::AttackMargin {
        target: cfg.target,
        kappa: cfg.kappa,
    };
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let check_every = (cfg.iterations / 10).max(1);
    let mut prev_objective = f64::INFINITY;
    let mut xp = vec![0.0; n];

    for iter in 0..cfg.iterations {
        for (p, &wi) in xp.iter_mut().zip(&w) {
            *p = to_box(wi);
        }
        let trace = model.forward_unchecked(&xp);
        let (f, grad_logits) = loss
            .evaluate(&trace.logits, &trace.probabilities)
            .expect("target validated");
        let dist2: f64 = xp.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
        let objective = dist2 + c * f;

        let (_, other) = margin(&trace.logits, cfg.target, cfg.kappa);
        let reached = trace.predicted == cfg.target
            && (other == cfg.target || trace.logits[cfg.target] - trace.logits[other] >= cfg.kappa);
        if reached && best.as_ref().is_none_or(|(_, d)| dist2 < *d) {
            best = Some((xp.clone(), dist2));
        }

        if cfg.abort_early && iter > 0 && iter % check_every == 0 {
            if objective > prev_objective * 0.9999 {
                break;
            }
            prev_objective = objective;
        }

        let (g_margin, _) = model.backward(&trace, &grad_logits, false);
        let t = (iter + 1) as i32;
        for i in 0..n {
            let tanh = 2.0 * xp[i] - 1.0;
            let g = (2.0 * (xp[i] - x[i]) + c * g_margin[i]) * 0.5 * (1.0 - tanh * tanh);
            match cfg.optimizer {
                Optimizer::GradientDescent => w[i] -= cfg.learning_rate * g,
                Optimizer::Adam => {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    let mh = m[i] / (1.0 - beta1.powi(t));
                    let vh = v[i] / (1.0 - beta2.powi(t));
                    w[i] -= cfg.learning_rate * mh / (vh.sqrt() + eps);
                }
            }
        }
    }
    Round { best }
}

/// Runs the attack. Failure to reach the target is reported through
/// `success = false`, with the source image returned unchanged.
pub fn generate(
    model: &NetworkModel,
    x: &Tensor,
    config: &AttackConfig,
) -> Result<AdversarialExample> {
    if x.len() != model.input_len() {
        return Err(Error::ShapeMismatch {
            expected: vec![model.input_shape().0, model.input_shape().1],
            found: x.shape().to_vec(),
        });
    }
    if let Some(v) = x.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidInput(format!(
            "pixel value {v} outside [0, 1]"
        )));
    }
    if config.target >= model.class_count() {
        return Err(Error::LabelOutOfRange {
            label: config.target,
            class_count: model.class_count(),
        });
    }
    if !config.kappa.is_finite() || config.kappa < 0.0 {
        return Err(Error::InvalidInput(format!(
            "kappa {} must be finite and non-negative",
            config.kappa
        )));
    }
    if !(config.initial_c > 0.0) {
        return Err(Error::InvalidInput("c must be positive".into()));
    }

    let src = x.data();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..config.starts.max(1))
        .map(|s| {
            src.iter()
                .map(|&p| {
                    let jitter = if s == 0 {
                        0.0
                    } else {
                        rng.random_range(-0.1..0.1)
                    };
                    from_box(p + jitter)
                })
                .collect()
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for w0 in &starts {
        let (mut lower, mut upper) = (0.0f64, f64::INFINITY);
        let mut c = config.initial_c;
        for _ in 0..config.c_search_steps.max(1) {
            let round = run_round(model, src, w0, c, config);
            match round.best {
                Some((img, d)) => {
                    if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                        best = Some((img, d));
                    }
                    upper = upper.min(c);
                    c = 0.5 * (lower + upper);
                }
                None => {
                    lower = lower.max(c);
                    c = if upper.is_finite() {
                        0.5 * (lower + upper)
                    } else {
                        2.0 * c
                    };
                }
            }
        }
    }

    let perturbed = match best {
        Some((img, _)) => img,
        None => src.to_vec(),
    };
    let perturbed = Tensor::new(x.shape().to_vec(), perturbed)?;
    let predicted_class = model.forward_unchecked(perturbed.data()).predicted;
    Ok(AdversarialExample {
        distortion: perturbed.l2_distance(x),
        original: x.clone(),
        perturbed,
        predicted_class,
        target: config.target,
        kappa: config.kappa,
        success: predicted_class == config.target,
    })
}

/// One attack of an adversary set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversaryRecord {
    pub source_index: usize,
    pub source_label: usize,
    pub example: AdversarialExample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdversarySet {
    pub kappa: f64,
    /// Successful attacks only.
    pub examples: Vec<AdversaryRecord>,
    /// `(source_index, target)` pairs the attack could not reach.
    pub failures: Vec<(usize, usize)>,
}

impl AdversarySet {
    pub fn attempted(&self) -> usize {
        self.examples.len() + self.failures.len()
    }

    pub fn success_rate(&self) -> f64 {
        if self.attempted() == 0 {
            return 0.0;
        }
        self.examples.len() as f64 / self.attempted() as f64
    }

    pub fn mean_distortion(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples
            .iter()
            .map(|r| r.example.distortion)
            .sum::<f64>()
            / self.examples.len() as f64
    }
}

/// Attacks every source toward every class other than its label, once per
/// `kappa`. Sources must be classified correctly by `model`. Each attack is
/// seeded from `(template.seed, source, target)`, so results do not depend
/// on scheduling.
pub fn build_adversary_sets(
    model: &NetworkModel,
    sources: &[(usize, &Tensor, usize)],
    kappas: &[f64],
    template: &AttackConfig,
) -> Result<Vec<AdversarySet>> {
    for &(idx, x, label) in sources {
        let predicted = model.predict(x)?;
        if predicted != label {
            return Err(Error::InvalidInput(format!(
                "source {idx} (label {label}) is classified as {predicted}"
            )));
        }
    }
    let classes = model.class_count();
    kappas
        .iter()
        .map(|&kappa| {
            let jobs: Vec<(usize, &Tensor, usize, usize)> = sources
                .iter()
                .flat_map(|&(idx, x, label)| {
                    (0..classes)
                        .filter(move |&t| t != label)
                        .map(move |t| (idx, x, label, t))
                })
                .collect();
            let results: Vec<Result<AdversaryRecord>> = jobs
                .par_iter()
                .map(|&(idx, x, label, target)| {
                    let cfg = AttackConfig {
                        target,
                        kappa,
                        seed: template
                            .seed
                            .wrapping_add((idx as u64) << 8)
                            .wrapping_add(target as u64),
                        ..template.clone()
                    };
                    Ok(AdversaryRecord {
                        source_index: idx,
                        source_label: label,
                        example: generate(model, x, &cfg)?,
                    })
                })
                .collect();
            let mut set = AdversarySet {
                kappa,
                examples: Vec::new(),
                failures: Vec::new(),
            };
            for r in results {
                let r = r?;
                if r.example.success {
                    set.examples.push(r);
                } else {
                    set.failures.push((r.source_index, r.example.target));
                }
            }
            Ok(set)
        })
        .collect()
}
