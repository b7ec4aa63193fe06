use fedsurrogate_core::data::{
    apply_trigger, dirichlet_partition, generate_synthetic, poison_partition, triggered_test_set, Dataset, TriggerSpec,
};
use fedsurrogate_core::model::{Mlp, TrainConfig};
use fedsurrogate_core::DataError;
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn uniform_classes(classes: usize, per_class: usize) -> Dataset {
    generate_synthetic(classes, 4, per_class, 0.1, 1).unwrap()
}

#[test]
fn synthetic_is_deterministic_and_collapses_without_spread() {
    let a = generate_synthetic(4, 64, 100, 0.1, 7).unwrap();
    let b = generate_synthetic(4, 64, 100, 0.1, 7).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, generate_synthetic(4, 64, 100, 0.1, 8).unwrap());
    let flat = generate_synthetic(3, 16, 20, 0.0, 7).unwrap();
    for class in 0..3 {
        let members: Vec<_> = flat.samples().iter().filter(|s| s.label == class).collect();
        assert!(members.iter().all(|s| s.features == members[0].features));
    }
    assert!(a.samples().iter().all(|s| s.features.iter().all(|v| (0.0..=1.0).contains(v))));
}

#[test]
fn a_small_model_separates_the_synthetic_classes() {
    let (train, test) = generate_synthetic(4, 64, 200, 0.1, 3).unwrap().split_per_class(100);
    let mlp = Mlp::new(&[64, 16, 4]).unwrap();
    let cfg = TrainConfig { epochs: 5, learning_rate: 0.1, batch_size: 16, seed: 1 };
    let trained = mlp.local_train(&mlp.init(1), train.samples(), &cfg, None).unwrap();
    assert!(mlp.evaluate(&trained, test.samples()).unwrap() >= 0.95);
}

#[test]
fn near_uniform_partition_for_large_alpha() {
    let ds = uniform_classes(10, 400);
    let clients = 20;
    let mut mean_share = vec![vec![0.0; 10]; clients];
    let seeds = 20;
    for seed in 0..seeds {
        let plan = dirichlet_partition(&ds, clients, 1000.0, seed).unwrap();
        for (c, idx) in plan.client_indices.iter().enumerate() {
            let hist = ds.class_histogram(idx);
            let total: usize = hist.iter().sum();
            for k in 0..10 {
                mean_share[c][k] += hist[k] as f64 / total as f64 / seeds as f64;
            }
        }
    }
    for shares in &mean_share {
        for &s in shares {
            assert!((s - 0.1).abs() / 0.1 <= 0.10, "{shares:?}");
        }
    }
}

#[test]
fn small_alpha_concentrates_clients_on_one_class() {
    let ds = uniform_classes(10, 100);
    for seed in 0..20 {
        let plan = dirichlet_partition(&ds, 20, 0.05, seed).unwrap();
        let dominated = plan.client_indices.iter().any(|idx| {
            let hist = ds.class_histogram(idx);
            let total: usize = hist.iter().sum();
            *hist.iter().max().unwrap() as f64 >= 0.8 * total as f64
        });
        assert!(dominated, "seed {seed}");
    }
}

#[test]
fn partition_rejects_bad_inputs() {
    let ds = uniform_classes(2, 5);
    assert!(dirichlet_partition(&ds, 1, 0.5, 0).is_err());
    assert!(dirichlet_partition(&ds, 4, 0.0, 0).is_err());
    assert!(dirichlet_partition(&ds, 11, 0.5, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 1000,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn partition_is_a_disjoint_cover(seed in any::<u64>(), alpha in 0.05f64..50.0, clients in 2usize..12) {
        let ds = uniform_classes(3, 30);
        // Very skewed draws on a small dataset can keep leaving a client empty.
        let plan = match dirichlet_partition(&ds, clients, alpha, seed) {
            Ok(plan) => plan,
            Err(DataError::PartitionExhausted(_)) => return Ok(()),
            Err(e) => panic!("{e}"),
        };
        let mut all: Vec<usize> = plan.client_indices.iter().flatten().copied().collect();
        prop_assert!(plan.client_indices.iter().all(|c| !c.is_empty()));
        all.sort_unstable();
        prop_assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn poisoning_touches_exactly_floor_pdr_samples(pdr in 0.0f64..=1.0, seed in any::<u64>()) {
        let ds = uniform_classes(4, 10);
        let spec = TriggerSpec { patch_coords: vec![3], patch_value: 1.0, target_label: 1, fragments: 1 };
        let out = poison_partition(ds.samples(), pdr, &spec, None, seed).unwrap();
        let changed = out.iter().zip(ds.samples()).filter(|(a, b)| a != b).count();
        let stamped = out.iter().filter(|s| s.features[3] == 1.0 && s.label == 1).count();
        let k = (pdr * 40.0 + 1e-9).floor() as usize;
        prop_assert!(changed <= k);
        prop_assert!(stamped >= k);
    }
}

#[test]
fn fragments_partition_the_patch() {
    let spec = TriggerSpec::lower_right_square(8, 3, 1.0, 1, 4);
    let mut joined: Vec<usize> = (0..4).flat_map(|f| spec.fragment_coords(f).unwrap()).collect();
    joined.sort_unstable();
    let mut full = spec.patch_coords.clone();
    full.sort_unstable();
    assert_eq!(joined, full);
    assert!(spec.fragment_coords(4).is_err());
    let sample = fedsurrogate_core::data::Sample { features: vec![0.0; 64], label: 0 };
    let one = apply_trigger(&sample, &spec, Some(0)).unwrap();
    assert_eq!(one.features.iter().filter(|&&v| v == 1.0).count(), spec.fragment_coords(0).unwrap().len());
}

#[test]
fn triggered_test_set_skips_the_target_class() {
    let ds = uniform_classes(3, 5);
    let spec = TriggerSpec { patch_coords: vec![0], patch_value: 1.0, target_label: 2, fragments: 1 };
    let t = triggered_test_set(ds.samples(), &spec).unwrap();
    assert_eq!(t.len(), 10);
    assert!(t.iter().all(|s| s.label == 2 && s.features[0] == 1.0));
}
