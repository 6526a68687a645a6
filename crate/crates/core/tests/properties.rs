use cevae_core::data::{load_csv_with_sidecar, save_csv, split, Dataset, SplitSpec, VarKind};
use cevae_core::metrics::{auc, pehe, sqrt_pehe};
use cevae_core::nn::dist::elu;
use cevae_core::nn::{AdamaxConfig, AdamaxState, ParamStore};
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #[test]
    fn elu_is_one_lipschitz(a in -10.0f64..10.0, b in -10.0f64..10.0) {
        prop_assert!((elu(a) - elu(b)).abs() <= (a - b).abs() + 1e-15);
    }

    #[test]
    fn auc_ignores_monotone_rescaling(
        pairs in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..40),
        shift in -3.0f64..3.0,
    ) {
        let labels: Vec<u8> = pairs.iter().map(|p| u8::from(p.1)).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let warped: Vec<f64> = s.iter().map(|v| (v + shift).exp() * 2.0 + v.powi(3)).collect();
        let a = auc(&s, &labels).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!((a - auc(&warped, &labels).unwrap()).abs() < 1e-12);
        let flipped: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((a + auc(&flipped, &labels).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pehe_is_permutation_invariant(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..30),
        rot in 0usize..30,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let mut p = pairs.clone();
        let r = rot % p.len();
        p.rotate_left(r);
        p.reverse();
        let (pa, pb): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
        let x = pehe(&a, &b).unwrap();
        prop_assert!((x - pehe(&pa, &pb).unwrap()).abs() <= 1e-12 * x.max(1.0));
        prop_assert!((sqrt_pehe(&a, &b).unwrap().powi(2) - x).abs() <= 1e-9 * x.max(1.0));
        prop_assert_eq!(pehe(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn splits_partition_the_units(n in 10usize..300, seed in any::<u64>(), rep in 0u64..20) {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| i as f64);
        let ds = Dataset::new(x, vec![0; n], vec![0.0; n], vec![VarKind::Continuous], VarKind::Continuous).unwrap();
        let s = split(&ds, &SplitSpec::new(0.63, 0.27, 0.1).with_seed(seed, rep)).unwrap();
        let mut all: Vec<usize> = s.indices.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), n);
        for (part, idx) in [&s.train, &s.validation, &s.test].into_iter().zip(&s.indices) {
            let ids: Vec<usize> = part.x.column(0).iter().map(|v| *v as usize).collect();
            prop_assert_eq!(&ids, idx);
        }
    }

    #[test]
    fn adamax_steps_are_bounded(g in -100.0f64..100.0, lr in 1e-4f64..1.0, steps in 1usize..60) {
        prop_assume!(g != 0.0);
        let mut store = ParamStore::new();
        let id = store.add("w", Array2::zeros((1, 1)));
        let cfg = AdamaxConfig { lr, weight_decay: 0.0, ..AdamaxConfig::default() };
        let mut opt = AdamaxState::new(cfg, &store).unwrap();
        let grad = vec![Array2::from_elem((1, 1), g)];
        for _ in 0..steps {
            let before = store.value(id)[[0, 0]];
            opt.step(&mut store, &grad).unwrap();
            let moved = (store.value(id)[[0, 0]] - before).abs();
            prop_assert!(moved <= lr / (1.0 - cfg.beta1) + 1e-12);
        }
    }
}

fn dataset_strategy() -> impl Strategy<Value = Dataset> {
    (1usize..25, 1usize..5).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(-1e6f64..1e6, n * d),
            prop::collection::vec(any::<bool>(), n * d),
            prop::collection::vec(any::<bool>(), d),
            prop::collection::vec((any::<bool>(), -50.0f64..50.0, -50.0f64..50.0), n),
            any::<bool>(),
        )
            .prop_map(move |(vals, bits, kinds, units, with_cf)| {
                let kinds: Vec<VarKind> = kinds
                    .into_iter()
                    .map(|b| if b { VarKind::Binary } else { VarKind::Continuous })
                    .collect();
                let x = Array2::from_shape_fn((n, d), |(i, j)| match kinds[j] {
                    VarKind::Binary => f64::from(u8::from(bits[i * d + j])),
                    VarKind::Continuous => vals[i * d + j] / 7.0,
                });
                let t = units.iter().map(|u| u8::from(u.0)).collect();
                let y = units.iter().map(|u| u.1).collect();
                let mut ds = Dataset::new(x, t, y, kinds, VarKind::Continuous).unwrap();
                if with_cf {
                    ds.y_cf = Some(units.iter().map(|u| u.2).collect());
                    ds.mu0 = Some(units.iter().map(|u| u.1 * 0.5).collect());
                    ds.mu1 = Some(units.iter().map(|u| u.2 * 0.25).collect());
                }
                ds
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn csv_round_trip_is_exact(ds in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path).unwrap();
        prop_assert_eq!(load_csv_with_sidecar(&path).unwrap(), ds);
    }
}
