use mammocascade::evalstat::{
    auc, cv_aggregate, eer_metrics, hanley_mcneil_se, read_scores_csv, roc_curve, trapezoid_area, write_scores_csv, ScoreSet,
};
use mammocascade::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(n²) pair count, independent of the sorted sweep.
fn pair_count_auc(s: &ScoreSet) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in s.scores.iter().enumerate() {
        if s.labels[i] != 1 {
            continue;
        }
        for (j, &sj) in s.scores.iter().enumerate() {
            if s.labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn random_set(rng: &mut ChaCha8Rng) -> ScoreSet {
    let n = rng.random_range(2..60);
    let levels = rng.random_range(1..12);
    let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
    labels[0] = 0;
    labels[1] = 1;
    // coarse levels force plenty of ties
    let scores = (0..n).map(|_| rng.random_range(0..levels) as f64 / levels as f64).collect();
    ScoreSet::new(scores, labels).unwrap()
}

#[test]
fn auc_matches_pair_counting_on_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let s = random_set(&mut rng);
        let a = auc(&s).unwrap();
        assert!((a - pair_count_auc(&s)).abs() < 1e-12);
        assert!((a - trapezoid_area(&roc_curve(&s).unwrap())).abs() < 1e-12);
    }
}

#[test]
fn small_fixtures() {
    let s = ScoreSet::new(vec![0.9, 0.6, 0.7, 0.2], vec![1, 1, 0, 0]).unwrap();
    assert_eq!(auc(&s).unwrap(), 0.75);
    let perfect = ScoreSet::from_pos_neg(&[0.6, 0.7], &[0.1, 0.59]).unwrap();
    assert_eq!(auc(&perfect).unwrap(), 1.0);
    assert_eq!(auc(&perfect.flipped()).unwrap(), 0.0);
    let constant = ScoreSet::from_pos_neg(&[0.3; 4], &[0.3; 7]).unwrap();
    assert_eq!(auc(&constant).unwrap(), 0.5);
}

#[test]
fn one_class_is_an_error() {
    let s = ScoreSet::from_pos_neg(&[0.1, 0.2], &[]).unwrap();
    assert!(matches!(auc(&s), Err(Error::InvalidInput(_))));
    assert!(roc_curve(&s).is_err());
    assert!(eer_metrics(&s).is_err());
}

#[test]
fn roc_curve_is_a_staircase_from_origin_to_corner() {
    let s = ScoreSet::new(vec![0.9, 0.8, 0.7, 0.4, 0.3, 0.2], vec![1, 1, 0, 1, 0, 0]).unwrap();
    let r = roc_curve(&s).unwrap();
    let pts: Vec<(f64, f64)> = r.iter().map(|p| (p.fpr, p.tpr)).collect();
    let t = 1.0 / 3.0;
    let expect = [(0.0, 0.0), (0.0, t), (0.0, 2.0 * t), (t, 2.0 * t), (t, 1.0), (2.0 * t, 1.0), (1.0, 1.0)];
    assert_eq!(pts.len(), expect.len());
    for (a, b) in pts.iter().zip(expect) {
        assert!((a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    }
    assert!(r[0].threshold.is_infinite());
}

#[test]
fn equal_error_point_by_hand() {
    // Crossing falls exactly on the vertex at threshold 0.7: sensitivity
    // 2/3, specificity 2/3.
    let s = ScoreSet::new(vec![0.9, 0.8, 0.7, 0.4, 0.3, 0.2], vec![1, 1, 0, 1, 0, 0]).unwrap();
    let e = eer_metrics(&s).unwrap();
    assert!((e.sensitivity - 2.0 / 3.0).abs() < 1e-12);
    assert!((e.specificity - 2.0 / 3.0).abs() < 1e-12);
    assert!((e.accuracy - 2.0 / 3.0).abs() < 1e-12);
    assert!((e.threshold - 0.7).abs() < 1e-12);

    // Crossing inside a diagonal tie segment: one positive and one
    // negative share 0.5, halfway point has tpr = 1 - fpr = 0.5.
    let s = ScoreSet::from_pos_neg(&[0.5], &[0.5]).unwrap();
    let e = eer_metrics(&s).unwrap();
    assert!((e.sensitivity - 0.5).abs() < 1e-12 && (e.specificity - 0.5).abs() < 1e-12);
}

#[test]
fn hanley_mcneil_closed_forms() {
    // A = 1/2 gives Q1 = Q2 = 1/3, so var = (1/4 + (np + nn - 2)/12) / (np nn).
    for (np, nn) in [(1usize, 1usize), (10, 30), (71, 139)] {
        let want = ((0.25 + (np + nn - 2) as f64 / 12.0) / (np * nn) as f64).sqrt();
        assert!((hanley_mcneil_se(0.5, np, nn).unwrap() - want).abs() < 1e-15);
    }
    assert_eq!(hanley_mcneil_se(1.0, 20, 20).unwrap(), 0.0);
    // A = 0.8, 50 + 50: Q1 = 0.8/1.2, Q2 = 1.28/1.8.
    let (q1, q2) = (0.8 / 1.2, 1.28 / 1.8);
    let want = ((0.16 + 49.0 * (q1 - 0.64) + 49.0 * (q2 - 0.64)) / 2500.0f64).sqrt();
    assert!((hanley_mcneil_se(0.8, 50, 50).unwrap() - want).abs() < 1e-15);
    assert!((want - 0.0441).abs() < 5e-4);
    assert!(hanley_mcneil_se(1.2, 5, 5).is_err());
    assert!(hanley_mcneil_se(0.7, 0, 5).is_err());
}

#[test]
fn fold_aggregation_uses_population_std() {
    let a = cv_aggregate(&[0.8891, 0.8880, 0.9486, 0.9882, 0.9350]).unwrap();
    assert!((a.mean - 0.9298).abs() < 5e-5);
    assert!((a.std - 0.0379).abs() < 5e-5);
    let b = cv_aggregate(&[0.7, 0.7]).unwrap();
    assert_eq!((b.mean, b.std), (0.7, 0.0));
    assert!(cv_aggregate(&[0.7]).is_err());
    assert!(cv_aggregate(&[]).is_err());
}

#[test]
fn score_csv_round_trip_keeps_auc_bits() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let labels: Vec<u8> = (0..200).map(|i| (i % 3 == 0) as u8).collect();
    let ids = (0..200).map(|i| format!("P_{i:05}")).collect();
    let s = ScoreSet::with_ids(ids, scores, labels).unwrap();
    let mut buf = Vec::new();
    write_scores_csv(&s, &mut buf).unwrap();
    let back = read_scores_csv(buf.as_slice()).unwrap();
    assert_eq!(back, s);
    assert_eq!(auc(&back).unwrap().to_bits(), auc(&s).unwrap().to_bits());
}

#[test]
fn bad_score_rows_report_their_line() {
    for (text, line) in [
        ("exam_id,score,label\na,0.5,1\nb,0.4,2\n", 3),
        ("exam_id,score,label\na,0.5,1\nb,0.4,0\nc,abc,1\n", 4),
        ("exam_id,score,label\na,NaN,1\n", 2),
    ] {
        match read_scores_csv(text.as_bytes()) {
            Err(Error::CsvRow { line: l, .. }) => assert_eq!(l, line, "{text}"),
            other => panic!("expected a row error, got {other:?}"),
        }
    }
    assert!(matches!(read_scores_csv("id,score,label\n".as_bytes()), Err(Error::CsvRow { line: 1, .. })));
}

fn arb_set() -> impl Strategy<Value = ScoreSet> {
    (2usize..40).prop_flat_map(|n| {
        (prop::collection::vec(0u32..20, n), prop::collection::vec(0u8..2, n)).prop_map(|(s, mut l)| {
            l[0] = 0;
            l[1] = 1;
            ScoreSet::new(s.into_iter().map(|v| v as f64 / 20.0).collect(), l).unwrap()
        })
    })
}

proptest! {
    #[test]
    fn flipping_labels_mirrors_auc(s in arb_set()) {
        let a = auc(&s).unwrap();
        prop_assert!((auc(&s.flipped()).unwrap() - (1.0 - a)).abs() < 1e-12);
    }

    #[test]
    fn strictly_monotone_maps_keep_auc(s in arb_set(), k in 0.1f64..5.0, c in -3.0f64..3.0) {
        let mut t = s.clone();
        for v in &mut t.scores {
            *v = (k * *v + c).exp();
        }
        prop_assert_eq!(auc(&t).unwrap(), auc(&s).unwrap());
    }

    #[test]
    fn order_of_rows_is_irrelevant(s in arb_set(), rot in 0usize..40) {
        let mut t = s.clone();
        let r = rot % t.len();
        t.scores.rotate_left(r);
        t.labels.rotate_left(r);
        t.ids.rotate_left(r);
        prop_assert_eq!(auc(&t).unwrap(), auc(&s).unwrap());
        prop_assert_eq!(eer_metrics(&t).unwrap(), eer_metrics(&s).unwrap());
    }

    #[test]
    fn equal_error_point_is_balanced(s in arb_set()) {
        let e = eer_metrics(&s).unwrap();
        prop_assert!((e.sensitivity - e.specificity).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&e.accuracy));
    }
}
