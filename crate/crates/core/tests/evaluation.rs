mod common;

use common::*;
use lpr_core::evaluation::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

type Run = (Vec<Vec<u32>>, Vec<Option<(u32, f64)>>, GroundTruth);

fn random_run(seed: u64, queries: usize, db: u32) -> Run {
    let mut r = rng(seed);
    let positives: Vec<Vec<u32>> = (0..queries)
        .map(|_| (0..r.random_range(0..4)).map(|_| r.random_range(0..db)).collect())
        .collect();
    let gt = GroundTruth::from_positives(
        positives,
        GroundTruthParams { gt_radius: 10.0, exclusion_frames: 0, same_sequence: false },
    );
    let mut ids: Vec<u32> = (0..db).collect();
    let results: Vec<Vec<u32>> = (0..queries)
        .map(|_| {
            ids.shuffle(&mut r);
            ids[..25].to_vec()
        })
        .collect();
    let top1 = results.iter().map(|l| Some((l[0], r.random_range(0.0..5.0)))).collect();
    (results, top1, gt)
}

#[test]
fn recall_is_monotone_over_random_runs() {
    for seed in 0..100 {
        let (results, _, gt) = random_run(seed, 30, 60);
        let ar: Vec<f64> = AR_AT.iter().map(|&n| recall_at_n(&results, &gt, n)).collect();
        assert!(ar[0] <= ar[1] && ar[1] <= ar[2], "seed {seed}: {ar:?}");
        assert!(ar.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn pr_sweep_invariants() {
    for seed in 0..50 {
        let (results, top1, gt) = random_run(seed, 40, 50);
        let curve = precision_recall_curve(&top1, &gt);
        assert!(curve.windows(2).all(|w| w[0].recall <= w[1].recall));
        let last = curve.last().unwrap();
        let correct = (0..results.len())
            .filter(|&q| gt.is_evaluable(q) && gt.is_positive(q, results[q][0]))
            .count();
        assert_eq!(last.recall, correct as f64 / gt.evaluable_count() as f64);
        let area = auc(&curve).unwrap();
        assert!((0.0..=1.0).contains(&area));
        assert!((0.0..=1.0).contains(&f1max(&curve).unwrap()));
    }
}

proptest! {
    #[test]
    fn query_order_does_not_matter(seed in any::<u64>()) {
        let (results, top1, gt) = random_run(seed, 20, 40);
        let mut order: Vec<usize> = (0..20).collect();
        order.shuffle(&mut rng(seed.wrapping_mul(31)));
        let positives: Vec<Vec<u32>> = order.iter().map(|&q| gt.positives(q).to_vec()).collect();
        let gt2 = GroundTruth::from_positives(positives, gt.params);
        let r2: Vec<Vec<u32>> = order.iter().map(|&q| results[q].clone()).collect();
        let t2: Vec<Option<(u32, f64)>> = order.iter().map(|&q| top1[q]).collect();
        for n in [1, 5, 20] {
            prop_assert_eq!(recall_at_n(&results, &gt, n), recall_at_n(&r2, &gt2, n));
        }
        let (c1, c2) = (precision_recall_curve(&top1, &gt), precision_recall_curve(&t2, &gt2));
        prop_assert_eq!(auc(&c1).unwrap(), auc(&c2).unwrap());
        prop_assert_eq!(f1max(&c1).unwrap(), f1max(&c2).unwrap());
    }
}
