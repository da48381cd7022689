use nalgebra::{DMatrix, DVector, Rotation2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use ron_gauss::dataset::{self, Dataset, LabelKind, Labels};
use ron_gauss::evaluation;
use ron_gauss::mechanism::{
    self, aug_cov_sensitivity_entrywise, cov_sensitivity_entrywise, BudgetLedger, Composition,
    Query,
};
use ron_gauss::preprocess;
use ron_gauss::projection::generate_ron;
use ron_gauss::synthesis::{estimate_aug_cov, estimate_cov};

fn entry_sum(a: &DMatrix<f64>) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

/// Random matrix with entries in [-1, 1] and at least one nonzero per column.
fn matrix(m: usize, n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-1.0..1.0_f64, m * n).prop_map(move |v| {
        let mut x = DMatrix::from_vec(m, n, v);
        for mut col in x.column_iter_mut() {
            if col.norm() < 1e-3 {
                col[0] = 1.0;
            }
        }
        x
    })
}

fn neighbour_pair() -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, usize, u64)> {
    (2usize..12, 1usize..25).prop_flat_map(|(m, n)| {
        (matrix(m, n), matrix(m, 1), 0..n, 0..m - 1, any::<u64>()).prop_map(
            |(x, replacement, j, p_minus_1, seed)| {
                let mut x2 = x.clone();
                x2.set_column(j, &replacement.column(0));
                (x, x2, p_minus_1 + 1, seed)
            },
        )
    })
}

fn projected(x: &DMatrix<f64>, mu: &DVector<f64>, p: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let w = generate_ron(x.nrows(), p, &mut rng).unwrap();
    w.project(&preprocess::apply_released_mean(x, mu).unwrap())
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn entrywise_covariance_bound_holds((x, x2, p, seed) in neighbour_pair(), a in 0.05..3.0_f64) {
        let n = x.ncols();
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 1);
        let normalized = preprocess::sample_normalize(&x).unwrap();
        let mu = preprocess::dp_mean(&normalized, 1.0, &mut rng).unwrap().0;
        let (t, t2) = (projected(&x, &mu, p, seed), projected(&x2, &mu, p, seed));

        let change = entry_sum(&(estimate_cov(&t).unwrap() - estimate_cov(&t2).unwrap()));
        prop_assert!(change <= cov_sensitivity_entrywise(p, n).unwrap() * (1.0 + 1e-12));

        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { a } else { -a / 2.0 }).collect();
        let mut y2 = y.clone();
        let j = (0..n).find(|&j| x.column(j) != x2.column(j)).unwrap_or(0);
        y2[j] = -y[j].signum() * a;
        let aug = entry_sum(
            &(estimate_aug_cov(&t, &y, Some(a)).unwrap() - estimate_aug_cov(&t2, &y2, Some(a)).unwrap()),
        );
        prop_assert!(aug <= aug_cov_sensitivity_entrywise(p, n, a).unwrap() * (1.0 + 1e-12));
    }

    #[test]
    fn mean_bound_holds((x, x2, _p, _seed) in neighbour_pair()) {
        let n = x.ncols();
        let a = preprocess::sample_normalize(&x).unwrap().column_mean();
        let b = preprocess::sample_normalize(&x2).unwrap().column_mean();
        let bound = mechanism::mean_sensitivity(x.nrows(), n).unwrap();
        prop_assert!((a - b).abs().sum() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn ledger_total_ignores_entry_order(
        spends in proptest::collection::vec((1u32..64, 0usize..4, 0usize..3), 1..20),
        seed in any::<u64>(),
    ) {
        // Dyadic spends keep every partial sum exact, so totals compare bit for bit.
        let record = |order: &[usize]| {
            let mut ledger = BudgetLedger::new();
            for &i in order {
                let (k, kind, part) = spends[i];
                let composition = if kind == 0 {
                    Composition::Serial
                } else {
                    Composition::Parallel {
                        group: format!("g{kind}"),
                        partition: format!("p{part}"),
                    }
                };
                ledger.record(Query::Mean, 1.0, k as f64 / 64.0, composition).unwrap();
            }
            ledger
        };
        let order: Vec<usize> = (0..spends.len()).collect();
        let mut shuffled = order.clone();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
        let (a, b) = (record(&order), record(&shuffled));
        prop_assert_eq!(a.total(), b.total());
        prop_assert_eq!(a.group_totals(), b.group_totals());
        prop_assert!(a.total() <= spends.iter().map(|s| s.0 as f64 / 64.0).sum::<f64>());
    }

    #[test]
    fn rmse_triangle_inequality(
        v in proptest::collection::vec((-100.0..100.0_f64, -100.0..100.0_f64, -100.0..100.0_f64), 1..50),
    ) {
        let a: Vec<f64> = v.iter().map(|t| t.0).collect();
        let b: Vec<f64> = v.iter().map(|t| t.1).collect();
        let c: Vec<f64> = v.iter().map(|t| t.2).collect();
        let ab = evaluation::rmse(&a, &b).unwrap();
        let bc = evaluation::rmse(&b, &c).unwrap();
        let ac = evaluation::rmse(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(evaluation::rmse(&a, &a).unwrap(), 0.0);
        prop_assert!((ab - evaluation::rmse(&b, &a).unwrap()).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn silhouette_invariant_to_relabeling_and_rotation(
        x in matrix(2, 12),
        raw in proptest::collection::vec(0usize..3, 12),
        angle in 0.0..std::f64::consts::TAU,
        shift in (-5.0..5.0_f64, -5.0..5.0_f64),
    ) {
        let mut labels = raw;
        labels[0] = 0;
        labels[1] = 1;
        let s = evaluation::silhouette(&x, &labels).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));

        let relabeled: Vec<usize> = labels.iter().map(|&l| [2, 0, 1][l]).collect();
        let s_relabeled = evaluation::silhouette(&x, &relabeled).unwrap();
        prop_assert!((s - s_relabeled).abs() <= 1e-12);

        let rot = Rotation2::new(angle);
        let r = DMatrix::from_iterator(2, 2, rot.matrix().iter().copied());
        let mut moved = r * &x;
        for mut col in moved.column_iter_mut() {
            col[0] += shift.0;
            col[1] += shift.1;
        }
        let s_moved = evaluation::silhouette(&moved, &labels).unwrap();
        prop_assert!((s - s_moved).abs() <= 1e-9);
    }

    #[test]
    fn csv_round_trip_is_exact(
        x in proptest::collection::vec(-1e6..1e6_f64, 12),
        y in proptest::collection::vec(-1e3..1e3_f64, 4),
    ) {
        let ds = Dataset::new(DMatrix::from_vec(3, 4, x))
            .unwrap()
            .with_labels(Labels::Real(y.clone()))
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.csv");
        dataset::write_dataset_csv(&ds, &path).unwrap();
        let back = dataset::load_csv(&path, Some("label"), Some(LabelKind::Real)).unwrap();
        prop_assert_eq!(back.features(), ds.features());
        prop_assert_eq!(back.real_labels().unwrap(), &y[..]);
    }
}
