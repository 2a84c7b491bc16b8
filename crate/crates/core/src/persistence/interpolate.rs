use super::wasserstein::wasserstein_pairs;
use super::{compute_persistence, Dimension, PersistenceDiagram};
use crate::error::{Error, Result};
use crate::graph::{build_induced_graph, PruneConfig};
use crate::nn::NetworkModel;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub t: f64,
    pub distance: f64,
}

fn h0_diagram(
    model: &NetworkModel,
    input: &Tensor,
    prune: PruneConfig,
) -> Result<PersistenceDiagram> {
    let trace = model.forward(input)?;
    let graph = build_induced_graph(model, &trace, prune)?;
    Ok(compute_persistence(&graph).diagram)
}

/// W₂ distance from the diagram of `x_a` to the diagram of
/// `(1 - t)·x_a + t·x_b` for `steps` evenly spaced `t ∈ [0, 1]`. Only H0
/// points living longer than `lambda` take part (`lambda = 0` keeps every
/// off-diagonal point).
pub fn interpolation_distance_curve(
    model: &NetworkModel,
    x_a: &Tensor,
    x_b: &Tensor,
    steps: usize,
    prune: PruneConfig,
    lambda: f64,
) -> Result<Vec<CurvePoint>> {
    if x_a.shape() != x_b.shape() {
        return Err(Error::ShapeMismatch {
            expected: x_a.shape().to_vec(),
            found: x_b.shape().to_vec(),
        });
    }
    if steps < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 steps, got {steps}"
        )));
    }
    let select = |d: &PersistenceDiagram| -> Vec<(f64, f64)> {
        d.dimension(Dimension::H0)
            .filter(|p| p.lifetime() > lambda)
            .map(|p| (p.birth, p.death))
            .collect()
    };
    let base = select(&h0_diagram(model, x_a, prune)?);
    (0..steps)
        .map(|k| {
            let t = k as f64 / (steps - 1) as f64;
            let data: Vec<f64> = x_a
                .data()
                .iter()
                .zip(x_b.data())
                .map(|(a, b)| ((1.0 - t) * a + t * b).clamp(0.0, 1.0))
                .collect();
            let x = Tensor::new(x_a.shape().to_vec(), data)?;
            let pts = select(&h0_diagram(model, &x, prune)?);
            Ok(CurvePoint {
                t,
                distance: wasserstein_pairs(&base, &pts, 2.0, 2.0),
            })
        })
        .collect()
}
