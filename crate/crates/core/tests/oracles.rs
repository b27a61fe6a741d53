//! Independent oracles and randomized properties for the analysis code.

use proptest::prelude::*;

use sal_core::align::{feature_distances, partial_spearman, pose_distance};
use sal_core::data::{dagger, ActionRow};

/// Straight from the definition: rank by counting, regress on the control
/// rank with a 2x2 solve, correlate the residuals.
fn brute_force(feat: &[f64], pose: &[f64], pix: &[f64]) -> f64 {
    let rank = |x: &[f64]| -> Vec<f64> {
        x.iter()
            .map(|v| {
                let below = x.iter().filter(|u| *u < v).count();
                let tied = x.iter().filter(|u| *u == v).count();
                below as f64 + (tied as f64 + 1.0) / 2.0
            })
            .collect()
    };
    let residual = |y: &[f64], x: &[f64]| -> Vec<f64> {
        let n = y.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let slope = if sxx == 0.0 {
            0.0
        } else {
            x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / sxx
        };
        x.iter().zip(y).map(|(a, b)| b - my - slope * (a - mx)).collect()
    };
    let c = rank(pix);
    let (a, b) = (residual(&rank(feat), &c), residual(&rank(pose), &c));
    let dot = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).sum::<f64>();
    // residuals of an intercept model have zero mean
    dot(&a, &b) / (dot(&a, &a) * dot(&b, &b)).sqrt()
}

#[test]
fn spec_examples() {
    let up = [1.0, 2.0, 3.0, 4.0, 5.0];
    let flat = [7.0; 5];
    assert!((partial_spearman(&up, &up, &flat).unwrap() - 1.0).abs() < 1e-12);
    let down: Vec<f64> = up.iter().map(|v| -v).collect();
    assert!((partial_spearman(&down, &up, &flat).unwrap() + 1.0).abs() < 1e-12);
    assert!(partial_spearman(&flat, &up, &up).is_err());
    assert!(partial_spearman(&up, &flat, &up).is_err());
}

fn triple(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    let v = || prop::collection::vec(-5.0f64..5.0, n);
    (v(), v(), prop::collection::vec(0u8..6, n).prop_map(|x| x.into_iter().map(f64::from).collect()))
}

proptest! {
    #[test]
    fn six_element_triples_match_brute_force((f, p, x) in triple(6)) {
        if let Ok(rho) = partial_spearman(&f, &p, &x) {
            prop_assert!((rho - brute_force(&f, &p, &x)).abs() <= 1e-10);
        }
    }

    #[test]
    fn larger_triples_match_brute_force((f, p, x) in triple(60)) {
        let rho = partial_spearman(&f, &p, &x).unwrap();
        prop_assert!((rho - brute_force(&f, &p, &x)).abs() <= 1e-10);
        prop_assert!((-1.0..=1.0).contains(&rho));
    }

    #[test]
    fn rank_invariance((f, p, x) in triple(30)) {
        let rho = partial_spearman(&f, &p, &x).unwrap();
        let g: Vec<f64> = f.iter().map(|v| v.exp() + 3.0).collect();
        prop_assert_eq!(partial_spearman(&g, &p, &x).unwrap(), rho);
        let q: Vec<f64> = p.iter().map(|v| v.powi(3)).collect();
        prop_assert_eq!(partial_spearman(&f, &q, &x).unwrap(), rho);
    }

    #[test]
    fn feature_distances_are_symmetric_and_bounded(
        a in prop::collection::vec(-3.0f64..3.0, 8),
        b in prop::collection::vec(-3.0f64..3.0, 8),
    ) {
        let (c_ab, s_ab) = feature_distances(&a, &b).unwrap();
        let (c_ba, s_ba) = feature_distances(&b, &a).unwrap();
        prop_assert_eq!(s_ab, s_ba);
        prop_assert!(s_ab >= 0.0);
        match (c_ab, c_ba) {
            (Some(x), Some(y)) => {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=2.0).contains(&x));
            }
            (None, None) => {}
            _ => prop_assert!(false, "cosine defined one way only"),
        }
    }

    #[test]
    fn pose_distance_is_a_metric(
        a in prop::array::uniform6(-1.0f64..1.0),
        b in prop::array::uniform6(-1.0f64..1.0),
        c in prop::array::uniform6(-1.0f64..1.0),
        s in prop::array::uniform6(0.01f64..2.0),
    ) {
        let d = |x: &[f64; 6], y: &[f64; 6]| pose_distance(x, y, &s).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert_eq!(d(&a, &b), d(&b, &a));
        prop_assert!(d(&a, &b) >= 0.0);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
    }

    #[test]
    fn dagger_is_an_involution(a in prop::array::uniform7(-1.0f32..1.0)) {
        let a: ActionRow = a;
        prop_assert_eq!(dagger(&dagger(&a)), a);
        prop_assert_eq!(dagger(&a)[6], a[6]);
    }
}
