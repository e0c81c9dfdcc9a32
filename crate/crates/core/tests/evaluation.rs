use approx::assert_relative_eq;
use proptest::prelude::*;
use stan::evaluation::*;

/// Fraction of (abnormal, normal) pairs ranked correctly, ties counted half.
fn pair_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &a) in scores.iter().enumerate() {
        for (j, &b) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                den += 1.0;
                num += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

fn labeled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    prop::collection::vec((0u8..8, 0u8..2), 2..60)
        .prop_map(|v| v.into_iter().map(|(s, l)| (s as f64 / 7.0, l)).unzip::<_, _, Vec<_>, Vec<_>>())
        .prop_filter("both classes", |(_, l)| l.contains(&0) && l.contains(&1))
}

proptest! {
    #[test]
    fn auc_matches_pair_counting((s, l) in labeled()) {
        prop_assert!((roc_auc(&s, &l).unwrap() - pair_auc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn auc_is_invariant_to_monotone_transforms((s, l) in labeled()) {
        let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 1.0).collect();
        prop_assert_eq!(roc_auc(&s, &l).unwrap(), roc_auc(&t, &l).unwrap());
    }

    #[test]
    fn flipping_scores_gives_complement((s, l) in labeled()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((roc_auc(&s, &l).unwrap() + roc_auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn detections_are_disjoint_and_above_threshold(
        s in prop::collection::vec(0.0f64..1.0, 1..80), thr in 0.0f64..1.0, gap in 0usize..6
    ) {
        let ev = detect_events(&s, thr, gap);
        for w in ev.windows(2) {
            prop_assert!(w[1].0 >= w[0].1 + 1 + gap);
        }
        for &(a, b) in &ev {
            prop_assert!(a <= b && b < s.len());
            prop_assert!(s[a] >= thr && s[b] >= thr);
        }
        let above = s.iter().filter(|&&v| v >= thr).count();
        let covered: usize = ev.iter().map(|&(a, b)| (a..=b).filter(|&t| s[t] >= thr).count()).sum();
        prop_assert_eq!(above, covered);
    }
}

#[test]
fn auc_examples() {
    assert_eq!(roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
    assert_eq!(roc_auc(&[0.0, 1.0], &[0, 1]).unwrap(), 1.0);
    assert_eq!(roc_auc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
    assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
    assert!(roc_auc(&[0.1], &[0, 1]).is_err());
}

#[test]
fn threshold_separates_perfect_scores() {
    let s = [0.1, 0.2, 0.7, 0.9, 0.3];
    let l = [0, 0, 1, 1, 0];
    let thr = optimal_threshold(&s, &l).unwrap();
    let pred: Vec<u8> = s.iter().map(|&v| (v >= thr) as u8).collect();
    assert_eq!(pred, l);
}

#[test]
fn merging_follows_the_gap_rule() {
    let s = [0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    assert_eq!(detect_events(&s, 0.5, 0), vec![(1, 2), (5, 5), (9, 9)]);
    assert_eq!(detect_events(&s, 0.5, 2), vec![(1, 2), (5, 5), (9, 9)]);
    assert_eq!(detect_events(&s, 0.5, 3), vec![(1, 5), (9, 9)]);
    assert_eq!(detect_events(&s, 0.5, 4), vec![(1, 9)]);
    assert!(detect_events(&s, 2.0, 10).is_empty());
}

#[test]
fn event_matching_credits_each_event_once() {
    let gt = [(10, 20), (40, 50)];
    let r = event_metrics(&[(12, 14), (16, 18), (30, 32), (45, 60)], &gt);
    assert_eq!(r.correct_detections, 2);
    assert_eq!(r.false_alarms, 1);
    assert_eq!(r.events_detected, 2);
    assert_eq!(r.events_total, 2);
    assert_relative_eq!(r.precision().unwrap(), 2.0 / 3.0);
    assert_eq!(r.recall(), Some(1.0));

    let none = event_metrics(&[], &gt);
    assert_eq!(none.precision(), None);
    assert_eq!(none.recall(), Some(0.0));
}

#[test]
fn pooled_clips_in_id_order() {
    let mut c = LabeledClips::default();
    c.insert("b", vec![0.9, 0.1], vec![1, 0]).unwrap();
    c.insert("a", vec![0.2, 0.3], vec![0, 0]).unwrap();
    assert!(c.insert("x", vec![0.2], vec![0, 1]).is_err());
    assert_eq!(c.pooled(), (vec![0.2, 0.3, 0.9, 0.1], vec![0, 0, 1, 0]));
    assert_eq!(c.auc().unwrap(), 1.0);
    let per = c.per_clip_auc();
    assert_eq!(per["a"], None);
    assert_eq!(per["b"], Some(1.0));
}
