use proptest::prelude::*;

use wslln::metrics::{mean_iou, recall_at_k, temporal_iou, EvalReport, GroundTruth, Interval, Predictions};

fn iv(a: f64, b: f64) -> Interval {
    Interval::new(a, b).unwrap()
}

fn span() -> impl Strategy<Value = Interval> {
    (0.0f64..100.0, 0.01f64..50.0).prop_map(|(s, len)| iv(s, s + len))
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in span(), b in span()) {
        let ab = temporal_iou(a, b).unwrap();
        prop_assert_eq!(ab, temporal_iou(b, a).unwrap());
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(temporal_iou(a, a).unwrap(), 1.0);
    }

    #[test]
    fn iou_survives_shift_and_scale(a in span(), b in span(), shift in -50.0f64..50.0, scale in 0.1f64..10.0) {
        let t = |x: Interval| iv(x.start * scale + shift, x.end * scale + shift);
        let before = temporal_iou(a, b).unwrap();
        let after = temporal_iou(t(a), t(b)).unwrap();
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn recall_is_monotone_in_k_and_threshold(
        cases in prop::collection::vec((span(), prop::collection::vec(span(), 5)), 1..12),
    ) {
        let mut preds = Predictions::new();
        let mut gts = Vec::new();
        for (i, (gt, ranked)) in cases.into_iter().enumerate() {
            preds.insert(format!("q{i}"), ranked);
            gts.push(GroundTruth { query: format!("q{i}"), span: gt });
        }
        let ths = [0.1, 0.3, 0.5, 0.7];
        for th in ths {
            let r1 = recall_at_k(&preds, &gts, 1, th).unwrap();
            let r5 = recall_at_k(&preds, &gts, 5, th).unwrap();
            prop_assert!(r5 >= r1);
        }
        for k in [1, 5] {
            for w in ths.windows(2) {
                prop_assert!(recall_at_k(&preds, &gts, k, w[0]).unwrap() >= recall_at_k(&preds, &gts, k, w[1]).unwrap());
            }
        }
        let miou = mean_iou(&preds, &gts).unwrap();
        prop_assert!((0.0..=1.0).contains(&miou));
    }
}

#[test]
fn hand_computed_fixture() {
    assert!((temporal_iou(iv(0.0, 10.0), iv(5.0, 15.0)).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    // Top-1 IoUs 1.0, 0.4 and 0.6.
    let mut preds = Predictions::new();
    preds.insert("a".into(), vec![iv(0.0, 10.0)]);
    preds.insert("b".into(), vec![iv(0.0, 4.0)]);
    preds.insert("c".into(), vec![iv(0.0, 6.0)]);
    let gts = vec![
        GroundTruth { query: "a".into(), span: iv(0.0, 10.0) },
        GroundTruth { query: "b".into(), span: iv(0.0, 10.0) },
        GroundTruth { query: "c".into(), span: iv(0.0, 10.0) },
    ];
    let report = EvalReport::from_predictions(&preds, &gts, &[1], &[0.5]).unwrap();
    assert!((report.recall(1, 0.5).unwrap() - 200.0 / 3.0).abs() < 1e-9);
    assert!((report.miou - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(report.top1_iou, vec![1.0, 0.4, 0.6]);
}
