use proptest::prelude::*;

use knowddi::eval::{auprc, auroc, average_precision_at, classification_metrics, ranking_metrics};

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..80).prop_flat_map(|n| {
        (
            prop::collection::vec((0u8..12).prop_map(|x| x as f64 / 11.0), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = true;
                l[1] = false;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn auroc_is_the_pairwise_win_rate((s, l) in scored()) {
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    pairs += 1.0;
                    wins += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        prop_assert!((auroc(&s, &l).unwrap() - wins / pairs).abs() < 1e-12);
    }

    #[test]
    fn auroc_flips_with_scores((s, l) in scored()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        prop_assert!((auroc(&s, &l).unwrap() + auroc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_metrics_are_order_invariant((s, l) in scored(), rot in 0usize..80) {
        // tie order matters for AP@k only, so use distinct scores there
        let distinct: Vec<f64> = s.iter().enumerate().map(|(i, x)| x + i as f64 * 1e-6).collect();
        let k = rot % s.len();
        let rs: Vec<f64> = s.iter().cycle().skip(k).take(s.len()).copied().collect();
        let rd: Vec<f64> = distinct.iter().cycle().skip(k).take(s.len()).copied().collect();
        let rl: Vec<bool> = l.iter().cycle().skip(k).take(s.len()).copied().collect();
        prop_assert!((auroc(&s, &l).unwrap() - auroc(&rs, &rl).unwrap()).abs() < 1e-12);
        prop_assert!((auprc(&s, &l).unwrap() - auprc(&rs, &rl).unwrap()).abs() < 1e-12);
        prop_assert!((average_precision_at(&distinct, &l, 50).unwrap() - average_precision_at(&rd, &rl, 50).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one((_, l) in scored()) {
        let s: Vec<f64> = l.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        prop_assert_eq!(auroc(&s, &l), Some(1.0));
        prop_assert!((auprc(&s, &l).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((average_precision_at(&s, &l, 50).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classification_metrics_bounds(
        pairs in prop::collection::vec((0usize..5, 0usize..5), 1..200),
    ) {
        let (truth, pred): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let m = classification_metrics(&truth, &pred, 5).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.macro_f1));
        prop_assert!((0.0..=1.0).contains(&m.accuracy));
        prop_assert!(m.kappa <= 1.0);
        prop_assert_eq!(m.support.iter().sum::<usize>(), truth.len());
        let same = classification_metrics(&truth, &truth, 5).unwrap();
        prop_assert_eq!(same.accuracy, 1.0);
        prop_assert_eq!(same.kappa, 1.0);
    }
}

#[test]
fn relations_without_both_labels_are_excluded() {
    let m = ranking_metrics(&[
        (vec![0.9, 0.1], vec![true, false]),
        (vec![0.5, 0.4], vec![true, true]),
    ])
    .unwrap();
    assert_eq!(m.auroc, 1.0);
    assert_eq!(m.excluded, 1);
}
