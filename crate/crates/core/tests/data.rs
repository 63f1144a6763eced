use std::collections::{BTreeMap, BTreeSet};

use loadbench::curation::{curate, CuratedDataset, CurationMode, CurationSpec};
use loadbench::data::{split_len, NormScope, SplitKind, SplitSpec, WindowSpec};
use loadbench::synth::{generate, SynthSpec};
use loadbench::Error;
use proptest::prelude::*;

fn pool(n_buildings: usize, n_types: usize, n_steps: usize, seed: u64) -> Vec<loadbench::data::BuildingRecord> {
    generate(&SynthSpec { n_buildings, n_types, n_steps, seed, ..Default::default() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn splits_partition_the_series(n in 10usize..100_000, train in 0.5f64..0.9) {
        let rest = 1.0 - train;
        let spec = SplitSpec::new(train, rest / 2.0, 1.0 - train - rest / 2.0).unwrap();
        let b = split_len(n, &spec).unwrap();
        prop_assert_eq!(b.train.start, 0);
        prop_assert_eq!(b.train.end, b.val.start);
        prop_assert_eq!(b.val.end, b.test.start);
        prop_assert_eq!(b.test.end, n);
        prop_assert_eq!(b.train.len(), (n as f64 * train + 1e-9).floor() as usize);
    }

    #[test]
    fn window_count_matches_enumeration(n in 0usize..400, l in 1usize..64, t in 1usize..16) {
        let spec = WindowSpec::new(l, t).unwrap();
        let brute = (0..n).filter(|s| s + l + t <= n).count();
        match spec.count(n) {
            Ok(c) => prop_assert_eq!(c, brute),
            Err(Error::InsufficientData(_)) => prop_assert_eq!(brute, 0),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn curation_keeps_the_type_mix(n_types in 1usize..6, per_type in 2usize..6, frac in 0.2f64..1.0, seed in 0u64..1000) {
        let records = pool(n_types * per_type, n_types, 96, 1);
        let target = ((records.len() as f64 * frac).round() as usize).max(1);
        let spec = CurationSpec { target_count: target, mode: CurationMode::Heterogeneous, random_seed: seed };
        let a = curate(&records, &spec, "x").unwrap();
        prop_assert_eq!(a.buildings.len(), target);
        let ids: BTreeSet<_> = a.buildings.iter().map(|b| b.building_id().to_string()).collect();
        prop_assert_eq!(ids.len(), target);
        let mut mix: BTreeMap<_, usize> = BTreeMap::new();
        for b in &a.buildings {
            *mix.entry(b.building_type()).or_default() += 1;
        }
        for n in mix.values() {
            let exact = target as f64 / n_types as f64;
            prop_assert!((*n as f64 - exact).abs() < 1.0);
        }
        prop_assert_eq!(curate(&records, &spec, "x").unwrap(), a);
    }
}

#[test]
fn homogeneous_curation_and_pool_limits() {
    let records = pool(12, 3, 96, 2);
    let ty = records[0].building_type();
    let spec = CurationSpec { target_count: 3, mode: CurationMode::Homogeneous(ty), random_seed: 0 };
    let d = curate(&records, &spec, "one").unwrap();
    assert!(d.buildings.iter().all(|b| b.building_type() == ty));
    let too_many = CurationSpec { target_count: 5, ..spec };
    assert!(matches!(curate(&records, &too_many, "x"), Err(Error::PoolTooSmall(_))));
    let big = CurationSpec { target_count: 13, mode: CurationMode::Heterogeneous, random_seed: 0 };
    assert!(matches!(curate(&records, &big, "x"), Err(Error::PoolTooSmall(_))));
}

#[test]
fn dataset_round_trips_through_disk() {
    let records = pool(6, 3, 96 * 3, 4);
    let spec = CurationSpec { target_count: 4, mode: CurationMode::Heterogeneous, random_seed: 7 };
    let d = curate(&records, &spec, "disk").unwrap();
    let tmp = tempfile::tempdir().unwrap();
    d.write(tmp.path()).unwrap();
    let back = CuratedDataset::read(tmp.path()).unwrap();
    assert_eq!(back, d);
}

#[test]
fn normalization_uses_only_training_data() {
    let mut records = pool(3, 3, 96 * 10, 5);
    let reference = CuratedDataset::new("a", records.clone()).prepare(NormScope::Global, WindowSpec::new(8, 4).unwrap()).unwrap();
    let n = records[0].len();
    for r in &mut records {
        for v in &mut r.load.load[n * 9 / 10..] {
            *v *= 100.0;
        }
    }
    let shifted = CuratedDataset::new("a", records).prepare(NormScope::Global, WindowSpec::new(8, 4).unwrap()).unwrap();
    assert_eq!(reference.normalizer, shifted.normalizer);

    let set = reference.window_set(SplitKind::Train).unwrap();
    let loads: Vec<f64> = (0..set.len()).map(|i| set.sample(i).y_target[0]).collect();
    let mean = loads.iter().sum::<f64>() / loads.len() as f64;
    assert!(mean.abs() < 0.1, "{mean}");
}
