mod common;

use common::{brute_wasserstein, diagram};
use proptest::prelude::*;
use topodetect::persistence::{wasserstein_distance, WassersteinParams};

fn points(max: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    proptest::collection::vec(
        (0.0f64..5.0, 0.01f64..5.0).prop_map(|(d, l)| (d + l, d)),
        0..=max,
    )
}

fn w(x: &[(f64, f64)], y: &[(f64, f64)], p: f64) -> f64 {
    let params = WassersteinParams {
        p,
        ..WassersteinParams::default()
    };
    wasserstein_distance(&diagram(x), &diagram(y), params)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matches_exhaustive_matching(x in points(5), y in points(5)) {
        let got = w(&x, &y, 2.0);
        let want = brute_wasserstein(&x, &y, 2.0);
        prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }

    #[test]
    fn matches_exhaustive_matching_for_p1(x in points(4), y in points(4)) {
        let got = w(&x, &y, 1.0);
        let want = brute_wasserstein(&x, &y, 1.0);
        prop_assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
    }

    #[test]
    fn pseudometric_axioms(x in points(5), y in points(5), z in points(5)) {
        let (xy, yx) = (w(&x, &y, 2.0), w(&y, &x, 2.0));
        prop_assert!(w(&x, &x, 2.0).abs() <= 1e-9);
        prop_assert!(xy >= 0.0);
        prop_assert!((xy - yx).abs() <= 1e-9);
        prop_assert!(xy <= w(&x, &z, 2.0) + w(&z, &y, 2.0) + 1e-9);
    }

    #[test]
    fn diagonal_points_never_change_the_distance(x in points(4), y in points(4), t in 0.0f64..5.0) {
        let mut padded = x.clone();
        padded.push((t, t));
        prop_assert!((w(&padded, &y, 2.0) - w(&x, &y, 2.0)).abs() <= 1e-12);
    }
}

#[test]
fn single_point_against_empty_is_root_two() {
    assert!((w(&[(3.0, 1.0)], &[], 2.0) - std::f64::consts::SQRT_2).abs() < 1e-12);
}
