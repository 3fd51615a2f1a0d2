use gpr_anomaly::eval::{auc_oracle, roc};
use gpr_anomaly::ScanLabels;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn instance() -> impl Strategy<Value = (Vec<f64>, ScanLabels)> {
    (2usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(prop_oneof![(0u8..6).prop_map(|q| q as f64 / 5.0), 0.0f64..1.0], n),
                prop::collection::vec(0u8..=1, n),
            )
        })
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
        .prop_map(|(s, l)| (s, ScanLabels::new(l).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn trapezoid_equals_pairwise((scores, truth) in instance()) {
        let a = roc(&scores, &truth).unwrap().auc;
        let b = auc_oracle(&scores, &truth).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn curve_is_monotone((scores, truth) in instance()) {
        let r = roc(&scores, &truth).unwrap();
        prop_assert_eq!((r.points[0].fpr, r.points[0].tpr), (0.0, 0.0));
        let last = r.points.last().unwrap();
        prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in r.points.windows(2) {
            prop_assert!(w[0].fpr <= w[1].fpr && w[0].tpr <= w[1].tpr);
            prop_assert!(w[0].threshold > w[1].threshold);
        }
        prop_assert!((0.0..=1.0).contains(&r.auc));
    }

    #[test]
    fn invariant_under_increasing_maps((scores, truth) in instance()) {
        let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        let a = roc(&scores, &truth).unwrap().auc;
        let b = roc(&warped, &truth).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn relabeling_complements((scores, truth) in instance()) {
        let flipped = ScanLabels::from_bools(truth.values().iter().map(|&l| l == 0));
        let a = roc(&scores, &truth).unwrap().auc;
        let b = roc(&scores, &flipped).unwrap().auc;
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }
}

#[test]
fn random_scores_give_chance_auc() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let truth = ScanLabels::from_bools((0..n).map(|_| rng.random_bool(0.5)));
    let a = roc(&scores, &truth).unwrap().auc;
    assert!((a - 0.5).abs() < 0.05, "{a}");
}

#[test]
fn separated_fixtures() {
    let truth = ScanLabels::new(vec![0, 0, 1, 1, 0, 1]).unwrap();
    let good = [0.1, 0.2, 0.8, 0.9, 0.3, 0.7];
    assert_eq!(roc(&good, &truth).unwrap().auc, 1.0);
    let bad: Vec<f64> = good.iter().map(|s| 1.0 - s).collect();
    assert_eq!(roc(&bad, &truth).unwrap().auc, 0.0);
}
