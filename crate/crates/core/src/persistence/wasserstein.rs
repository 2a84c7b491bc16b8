use super::assignment::min_cost_assignment;
use super::{Dimension, PersistenceDiagram};

/// `p` is the outer exponent, `q` the ground norm in the (birth, death) plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinParams {
    pub p: f64,
    pub q: f64,
    pub dimension: Dimension,
}

impl Default for WassersteinParams {
    fn default() -> Self {
        Self {
            p: 2.0,
            q: 2.0,
            dimension: Dimension::H0,
        }
    }
}

fn ground(a: (f64, f64), b: (f64, f64), q: f64) -> f64 {
    let (dx, dy) = ((a.0 - b.0).abs(), (a.1 - b.1).abs());
    if q.is_infinite() {
        dx.max(dy)
    } else if q == 2.0 {
        dx.hypot(dy)
    } else {
        (dx.powf(q) + dy.powf(q)).powf(1.0 / q)
    }
}

/// Distance from `(b, d)` to its projection `((b+d)/2, (b+d)/2)`.
pub(crate) fn to_diagonal(pt: (f64, f64), q: f64) -> f64 {
    let mid = 0.5 * (pt.0 + pt.1);
    ground(pt, (mid, mid), q)
}

/// p-Wasserstein distance between the selected dimension of two diagrams.
/// Points may match across diagrams or to their diagonal projection; the
/// optimal matching is found exactly on the augmented square cost matrix.
pub fn wasserstein_distance(
    x: &PersistenceDiagram,
    d: &PersistenceDiagram,
    params: WassersteinParams,
) -> f64 {
    // points on the diagonal match it at zero cost and never help elsewhere
    let off_diagonal = |diag: &PersistenceDiagram| -> Vec<(f64, f64)> {
        diag.pairs(params.dimension)
            .into_iter()
            .filter(|(b, d)| b != d)
            .collect()
    };
    wasserstein_pairs(&off_diagonal(x), &off_diagonal(d), params.p, params.q)
}

pub(crate) fn wasserstein_pairs(xs: &[(f64, f64)], ds: &[(f64, f64)], p: f64, q: f64) -> f64 {
    let (n, m) = (xs.len(), ds.len());
    if n + m == 0 {
        return 0.0;
    }
    let size = n + m;
    let mut costs = vec![vec![0.0; size]; size];
    for (i, row) in costs.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = match (i < n, j < m) {
                (true, true) => ground(xs[i], ds[j], q).powf(p),
                (true, false) => to_diagonal(xs[i], q).powf(p),
                (false, true) => to_diagonal(ds[j], q).powf(p),
                (false, false) => 0.0,
            };
        }
    }
    let (_, total) = min_cost_assignment(&costs);
    total.max(0.0).powf(1.0 / p)
}
