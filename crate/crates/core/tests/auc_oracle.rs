use gin_core::eval::{auc, bucket_report, Bucket};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// O(P·N) pair counting, ties worth one half.
fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
    let mut credit = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                credit += 1.0;
            } else if scores[i] == scores[j] {
                credit += 0.5;
            }
        }
    }
    credit / pairs
}

/// Scores drawn from a small grid so ties are common.
fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2..1000usize).prop_flat_map(|n| {
        (
            prop::collection::vec((0..40u32).prop_map(|k| f64::from(k) / 40.0), n),
            prop::collection::vec(0..2u8, n),
        )
            .prop_filter("needs both classes", |(_, l)| l.contains(&0) && l.contains(&1))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn rank_sum_equals_pair_counting((scores, labels) in arb_instance()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_force(&scores, &labels));
    }

    #[test]
    fn invariant_under_increasing_maps((scores, labels) in arb_instance()) {
        let base = auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 7.0).collect();
        prop_assert_eq!(auc(&mapped, &labels).unwrap(), base);
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        prop_assert_eq!(auc(&negated, &flipped).unwrap(), base);
    }
}

#[test]
fn worked_example() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
}

#[test]
fn bucket_aucs_match_per_bucket_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 500;
    let lens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=20)).collect();
    let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
    let a: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..50u32)) / 50.0).collect();
    let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let report = bucket_report(&lens, &labels, &[("a".into(), a.clone()), ("b".into(), b.clone())]).unwrap();
    assert_eq!(report.total, n);
    assert_eq!(report.buckets.iter().map(|r| r.count).sum::<usize>(), n);
    assert_eq!(report.buckets.len(), 5);
    for row in &report.buckets {
        let idx: Vec<usize> = (0..n).filter(|&i| Bucket::of_len(lens[i]) == row.bucket).collect();
        let sub_labels: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        for (k, scores) in [&a, &b].into_iter().enumerate() {
            let sub: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            assert_eq!(row.auc[k], Some(brute_force(&sub, &sub_labels)));
        }
    }
    assert_eq!(report.models[0].auc, brute_force(&a, &labels));
}
