use proptest::prelude::*;

use ate_harness::estimation::{ate_hat, ate_interval, ege_hat, paired_ites, EffectSample, IntervalMethod};
use ate_harness::execution::{builtin_registry, execute_system, DataPool, MetricSpec, RunRecord, SyntheticSurfaceParams};
use ate_harness::inference::{independent_system_test, paired_system_test, PairedMode, TestConfig};
use ate_harness::numeric::mean;
use ate_harness::population::{
    cross_product, expand_broad_method, Arm, BroadMethodSpec, DataSource, MethodVariable, PopulationSpec,
    TreatmentContrast,
};
use ate_harness::sampling::{assign_arms, draw_split, sample_systems, Design, SplitPolicy};
use ate_harness::seed::derive_seed;
use ate_harness::seed_path;

fn spec(pool_size: usize, fraction: f64) -> PopulationSpec {
    PopulationSpec {
        contrast: TreatmentContrast::simple(MethodVariable::uniform("v1", ["A", "B"]), "A", "B"),
        nuisance: vec![
            MethodVariable::uniform("v2", ["C", "G", "H"]),
            MethodVariable::uniform("v3", ["D", "I"]),
        ],
        data_source: DataSource::Indexed { pool_size },
        split_policy: SplitPolicy::fraction(fraction),
        executor_id: "synthetic_surface".into(),
        exclusions: vec![],
    }
}

fn surface_records(s: usize, seed: u64, noise: f64, arm_noise: f64) -> (Vec<RunRecord>, Vec<RunRecord>) {
    let spec = spec(30, 0.7);
    let mut p = SyntheticSurfaceParams::new(0.3);
    p.treatment_effect = 0.04;
    p.instance_noise_sd = noise;
    p.arm_noise_sd = arm_noise;
    let reg = builtin_registry(p);
    let pool = DataPool::index_only(30);
    let metric = MetricSpec::zero_one_error();
    let armed = assign_arms(&sample_systems(&spec, s, seed).unwrap(), Design::Paired, &spec.contrast, seed);
    armed
        .iter()
        .map(|a| execute_system(a, &pool, &reg, "synthetic_surface", &metric).unwrap())
        .partition(|r| r.arm == Arm::Treatment)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn splits_are_valid(seed in any::<u64>(), pool in 2usize..200, fraction in 0.05f64..0.95) {
        let policy = SplitPolicy::fraction(fraction);
        if let Ok((n, m)) = policy.sizes(pool) {
            let split = draw_split(pool, &policy, seed).unwrap();
            prop_assert!(split.is_valid_for(pool));
            prop_assert_eq!((split.n_train(), split.n_test()), (n, m));
            prop_assert!(split.train_indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(split.train_indices.iter().all(|i| split.test_indices.binary_search(i).is_err()));
        }
    }
}

proptest! {
    #[test]
    fn broad_expansion_is_the_product(sizes in prop::collection::vec(1usize..5, 1..5)) {
        let components: Vec<MethodVariable> = sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| MethodVariable::uniform(format!("c{i}"), (0..n).map(|j| format!("x{j}"))))
            .collect();
        let broad = BroadMethodSpec::new("broad", components.clone());
        let expanded = expand_broad_method(&broad);
        prop_assert_eq!(expanded.len(), sizes.iter().product::<usize>());
        let unique: std::collections::BTreeSet<_> = expanded.iter().collect();
        prop_assert_eq!(unique.len(), expanded.len());
        prop_assert_eq!(expanded, cross_product(&components));
    }

    #[test]
    fn derived_seeds_are_pure(master in any::<u64>(), a in any::<u64>(), b in "[a-z]{0,8}") {
        prop_assert_eq!(derive_seed(master, seed_path![a, &b]), derive_seed(master, seed_path![a, &b]));
        prop_assert_ne!(derive_seed(master, seed_path![a, &b]), derive_seed(master, seed_path![&b, a]));
    }

    #[test]
    fn sampling_prefix_is_stable(seed in any::<u64>(), s in 1usize..30, extra in 1usize..30) {
        let spec = spec(20, 0.75);
        let short = sample_systems(&spec, s, seed).unwrap();
        let long = sample_systems(&spec, s + extra, seed).unwrap();
        prop_assert_eq!(&short[..], &long[..s]);
    }

    #[test]
    fn estimator_identities(seed in any::<u64>(), s in 2usize..25) {
        let (t, c) = surface_records(s, seed, 0.1, 0.05);
        let ege_t = ege_hat(&t, "A").unwrap();
        let ege_c = ege_hat(&c, "B").unwrap();
        let ate = ate_hat(&ege_t, &ege_c);
        prop_assert!((ate + ate_hat(&ege_c, &ege_t)).abs() <= 1e-12);
        let ites = paired_ites(&t, &c).unwrap();
        prop_assert!((mean(&ites) - ate).abs() <= 1e-12);
    }

    #[test]
    fn ege_ignores_record_order(seed in any::<u64>(), s in 2usize..25, rot in 0usize..25) {
        let (mut t, _) = surface_records(s, seed, 0.2, 0.0);
        let before = ege_hat(&t, "A").unwrap().value;
        let k = rot % t.len();
        t.rotate_left(k);
        t.reverse();
        prop_assert_eq!(before, ege_hat(&t, "A").unwrap().value);
    }

    #[test]
    fn arm_noise_free_ites_equal_tau(seed in any::<u64>(), s in 2usize..25) {
        let (t, c) = surface_records(s, seed, 0.3, 0.0);
        for ite in paired_ites(&t, &c).unwrap() {
            prop_assert!((ite - 0.04).abs() <= 1e-12);
        }
    }

    #[test]
    fn p_values_are_probabilities(ites in prop::collection::vec(-1.0f64..1.0, 2..30), seed in any::<u64>()) {
        let cfg = TestConfig::new(seed).with_resamples(200);
        for mode in [PairedMode::SignFlipPermutation, PairedMode::Bootstrap] {
            let r = paired_system_test(&ites, mode, &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value), "{:?}", r);
            // An exhaustive relabeling always contains the observed labeling.
            if r.exhaustive && mode == PairedMode::SignFlipPermutation {
                prop_assert!(r.p_value > 0.0);
            }
            prop_assert_eq!(r.reject, r.p_value < cfg.alpha);
        }
        let half = ites.len() / 2;
        if ites.len() >= 3 {
            let r = independent_system_test(&ites[..half], &ites[half..], &cfg).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            if r.exhaustive {
                prop_assert!(r.p_value > 0.0);
            }
        }
    }

    #[test]
    fn sign_flip_is_symmetric(ites in prop::collection::vec(-1.0f64..1.0, 2..12)) {
        let cfg = TestConfig::new(0);
        let negated: Vec<f64> = ites.iter().map(|x| -x).collect();
        let a = paired_system_test(&ites, PairedMode::SignFlipPermutation, &cfg).unwrap();
        let b = paired_system_test(&negated, PairedMode::SignFlipPermutation, &cfg).unwrap();
        prop_assert_eq!(a.p_value, b.p_value);
    }

    #[test]
    fn intervals_are_ordered(ites in prop::collection::vec(-1.0f64..1.0, 2..40), seed in any::<u64>()) {
        for method in [IntervalMethod::Normal, IntervalMethod::BootstrapOverSystems] {
            let i = ate_interval(EffectSample::Paired(&ites), 0.9, method, 300, seed).unwrap();
            prop_assert!(i.lo <= i.hi);
            if method == IntervalMethod::Normal {
                let m = mean(&ites);
                prop_assert!(i.lo <= m + 1e-12 && m <= i.hi + 1e-12);
            }
        }
    }
}
