//! Property suites: partition laws, distribution-output laws, KL and
//! delta-alike invariants, consistency metric laws, and a brute-force AUC
//! oracle.

use std::collections::BTreeSet;

use proptest::prelude::*;

use etid::dataset::{
    build_subset, generate_synthetic, group_by_part, partition, UnlearnRequest,
};
use etid::eval::{accuracy, auc, consistency_outputs};
use etid::matrix::Matrix;
use etid::nn::{mean_kl, MlpModel};
use etid::roel::{delta_alike, DeltaAlike};

fn id_set(v: &[u64]) -> BTreeSet<u64> {
    v.iter().copied().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(250))]

    // Partition laws over random (N, K): disjoint parts covering every id,
    // sizes within 1 of each other, and D_{-i} equal to the brute-force set
    // difference D \ d_i. Four suites at 250 cases each give 1,000 total.
    #[test]
    fn partition_parts_are_disjoint_and_cover(
        n in 6usize..220,
        k in 3usize..8,
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= k);
        let data = generate_synthetic(n, 3, 2, 1.0, seed).unwrap();
        let p = partition(&data, k, seed).unwrap();
        let mut seen = BTreeSet::new();
        let mut sizes = Vec::new();
        for i in 0..k {
            let part = p.part_ids(i);
            for id in &part {
                prop_assert!(seen.insert(*id), "id {id} in two parts");
            }
            sizes.push(part.len());
        }
        prop_assert_eq!(seen.len(), n);
        let min = sizes.iter().min().unwrap();
        let max = sizes.iter().max().unwrap();
        prop_assert!(max - min <= 1, "sizes {:?}", sizes);
    }

    #[test]
    fn build_subset_is_set_difference(
        n in 6usize..220,
        k in 3usize..8,
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= k);
        let data = generate_synthetic(n, 3, 2, 1.0, seed).unwrap();
        let p = partition(&data, k, seed.wrapping_add(1)).unwrap();
        let all: BTreeSet<u64> = data.ids().iter().copied().collect();
        for i in 0..k {
            let expected: BTreeSet<u64> =
                all.difference(&p.part_ids(i)).copied().collect();
            prop_assert_eq!(build_subset(&p, i).unwrap(), expected);
        }
    }

    #[test]
    fn group_by_part_conserves_the_request(
        n in 10usize..220,
        k in 3usize..8,
        picks in proptest::collection::btree_set(0usize..220, 1..30),
        seed in any::<u64>(),
    ) {
        prop_assume!(n >= k);
        let data = generate_synthetic(n, 3, 2, 1.0, seed).unwrap();
        let p = partition(&data, k, seed).unwrap();
        let ids: BTreeSet<u64> = picks
            .into_iter()
            .filter(|&i| i < n)
            .map(|i| data.ids()[i])
            .collect();
        prop_assume!(!ids.is_empty());
        let req = UnlearnRequest::new(ids.clone());
        let groups = group_by_part(&req, &p).unwrap();
        let mut union = BTreeSet::new();
        for (i, g) in groups.iter().enumerate() {
            prop_assert!(g.is_subset(&p.part_ids(i)), "group {i} escapes its part");
            union.extend(g.iter().copied());
        }
        prop_assert_eq!(union, ids);
    }

    #[test]
    fn forward_rows_are_distributions(
        seed in any::<u64>(),
        rows in 1usize..10,
        input in 1usize..5,
        classes in 2usize..5,
    ) {
        let model = MlpModel::new(&[input, 6, classes], seed).unwrap();
        let data: Vec<f64> = (0..rows * input)
            .map(|i| ((seed.wrapping_add(i as u64) % 1000) as f64) / 100.0 - 5.0)
            .collect();
        let x = Matrix::from_vec(rows, input, data).unwrap();
        let out = model.forward(&x).unwrap();
        for r in 0..rows {
            let row = out.row(r);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
            prop_assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn kl_is_nonnegative_and_zero_iff_equal(
        raw_p in proptest::collection::vec(0.01f64..1.0, 3),
        raw_q in proptest::collection::vec(0.01f64..1.0, 3),
    ) {
        let norm = |raw: &[f64]| {
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect::<Vec<f64>>()
        };
        let p = Matrix::from_vec(1, 3, norm(&raw_p)).unwrap();
        let q = Matrix::from_vec(1, 3, norm(&raw_q)).unwrap();
        let kl = mean_kl(&p, &q);
        prop_assert!(kl >= -1e-12, "negative KL {kl}");
        prop_assert!(mean_kl(&p, &p) < 1e-12);
        let same = p
            .data()
            .iter()
            .zip(q.data())
            .all(|(a, b)| (a - b).abs() < 1e-12);
        if kl < 1e-12 {
            prop_assert!(
                p.data()
                    .iter()
                    .zip(q.data())
                    .all(|(a, b)| (a - b).abs() < 1e-5),
                "KL ~ 0 but rows differ"
            );
        }
        if same {
            prop_assert!(kl < 1e-12);
        }
    }

    #[test]
    fn delta_alike_is_symmetric(
        a in proptest::collection::btree_set(0u64..200, 1..60),
        b in proptest::collection::btree_set(0u64..200, 1..60),
    ) {
        let ab = delta_alike(&a, &b).unwrap();
        let ba = delta_alike(&b, &a).unwrap();
        match (ab, ba) {
            (DeltaAlike::Identical, DeltaAlike::Identical) => {}
            (DeltaAlike::Finite(x), DeltaAlike::Finite(y)) => {
                prop_assert!((x - y).abs() < 1e-15);
            }
            other => prop_assert!(false, "asymmetric variants {other:?}"),
        }
    }

    #[test]
    fn consistency_laws(
        raw_a in proptest::collection::vec(0.01f64..1.0, 6),
        raw_b in proptest::collection::vec(0.01f64..1.0, 6),
        raw_c in proptest::collection::vec(0.01f64..1.0, 6),
    ) {
        let mat = |raw: &[f64]| {
            let mut data = Vec::with_capacity(6);
            for row in raw.chunks(3) {
                let s: f64 = row.iter().sum();
                data.extend(row.iter().map(|v| v / s));
            }
            Matrix::from_vec(2, 3, data).unwrap()
        };
        let a = mat(&raw_a);
        let b = mat(&raw_b);
        let c = mat(&raw_c);
        let ab = consistency_outputs(&a, &b).unwrap();
        let ba = consistency_outputs(&b, &a).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12, "not symmetric");
        prop_assert!(consistency_outputs(&a, &a).unwrap() < 1e-15);
        // Summed per-row L2 distances obey the triangle inequality.
        let ac = consistency_outputs(&a, &c).unwrap();
        let cb = consistency_outputs(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn rank_auc_matches_brute_force(
        pos in proptest::collection::vec(-10.0f64..10.0, 1..50),
        neg in proptest::collection::vec(-10.0f64..10.0, 1..50),
        ties in any::<bool>(),
    ) {
        // Coarse rounding forces frequent ties to exercise the midrank path.
        let quant = |v: &f64| if ties { (v / 2.0).round() * 2.0 } else { *v };
        let pos: Vec<f64> = pos.iter().map(quant).collect();
        let neg: Vec<f64> = neg.iter().map(quant).collect();
        let fast = auc(&pos, &neg).unwrap();
        let mut wins = 0.0;
        for p in &pos {
            for n in &neg {
                if p > n {
                    wins += 1.0;
                } else if p == n {
                    wins += 0.5;
                }
            }
        }
        let brute = wins / (pos.len() * neg.len()) as f64;
        prop_assert!((fast - brute).abs() < 1e-12, "fast {fast} brute {brute}");
    }

    #[test]
    fn accuracy_matches_argmax_count(
        raw in proptest::collection::vec(0.01f64..1.0, 12),
        labels in proptest::collection::vec(0usize..3, 4),
    ) {
        let mut data = Vec::with_capacity(12);
        for row in raw.chunks(3) {
            let s: f64 = row.iter().sum();
            data.extend(row.iter().map(|v| v / s));
        }
        let probs = Matrix::from_vec(4, 3, data).unwrap();
        let acc = accuracy(&probs, &labels).unwrap();
        let mut hits = 0usize;
        for (r, &y) in labels.iter().enumerate() {
            let row = probs.row(r);
            let best = (0..3)
                .max_by(|&a, &b| row[a].partial_cmp(&row[b]).unwrap())
                .unwrap();
            if best == y {
                hits += 1;
            }
        }
        prop_assert!((acc - hits as f64 / 4.0).abs() < 1e-12);
    }
}

#[test]
fn delta_alike_empty_sets_error() {
    assert!(delta_alike(&BTreeSet::new(), &id_set(&[1])).is_err());
    assert!(delta_alike(&id_set(&[1]), &BTreeSet::new()).is_err());
}
