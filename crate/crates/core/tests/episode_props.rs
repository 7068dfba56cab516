use std::collections::HashSet;

use episodic_core::datagen::{generate_synthetic, sample_episode, BaseDataset, Episode, GeneratorParams};
use episodic_core::rng::Stream;
use proptest::prelude::*;

fn dataset(classes: usize, per_class: usize, seed: u64) -> BaseDataset {
    generate_synthetic(&GeneratorParams {
        num_classes: classes,
        samples_per_class: per_class,
        feature_dim: 3,
        class_separation: 1.0,
        noise_scale: 1.0,
        seed,
    })
    .unwrap()
}

fn check_episode(ep: &Episode, ds: &BaseDataset) -> Result<(), String> {
    let distinct: HashSet<_> = ep.classes.iter().collect();
    if distinct.len() != ep.way || ep.classes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("classes not distinct and sorted: {:?}", ep.classes));
    }
    if ep.support.len() != ep.way * ep.shot || ep.query.len() != ep.way * ep.query_shot {
        return Err("wrong set sizes".into());
    }
    for (pos, &class) in ep.classes.iter().enumerate() {
        let s = &ep.support[pos * ep.shot..(pos + 1) * ep.shot];
        let q = &ep.query[pos * ep.query_shot..(pos + 1) * ep.query_shot];
        if s.iter().chain(q).any(|r| r.class_id != class) {
            return Err(format!("label block {pos} mixes classes"));
        }
        let n = ds.class(class).unwrap().samples.len();
        let idx: HashSet<_> = s.iter().chain(q).map(|r| r.index).collect();
        if idx.len() != ep.shot + ep.query_shot || idx.iter().any(|&i| i >= n) {
            return Err(format!("class {class}: duplicate or out-of-range sample"));
        }
    }
    Ok(())
}

#[test]
fn ten_thousand_episodes_satisfy_invariants() {
    let ds = dataset(12, 25, 5);
    let mut rng = Stream::new(17);
    for i in 0..10_000 {
        let (way, shot, q) = (2 + i % 5, 1 + i % 3, 1 + i % 4);
        let ep = sample_episode(&ds, way, shot, q, &mut rng).unwrap();
        check_episode(&ep, &ds).unwrap_or_else(|e| panic!("episode {i}: {e}"));
        let data = ep.materialize(&ds).unwrap();
        assert_eq!(data.support_labels, ep.support_labels());
        let labels: HashSet<_> = data.query_labels.iter().collect();
        assert_eq!(labels.len(), way);
    }
}

#[test]
fn class_marginal_is_uniform() {
    // 100k 5-way episodes over 20 classes; chi-square with 19 degrees of
    // freedom against the 0.1% critical value 43.82
    let ds = dataset(20, 6, 2);
    let mut rng = Stream::new(99);
    let mut counts = vec![0u64; 20];
    let episodes = 100_000;
    for _ in 0..episodes {
        for c in sample_episode(&ds, 5, 1, 1, &mut rng).unwrap().classes {
            counts[c] += 1;
        }
    }
    let expected = episodes as f64 * 5.0 / 20.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 43.82, "chi2 = {chi2}, counts {counts:?}");
}

proptest! {
    #[test]
    fn sampled_episodes_are_well_formed(
        classes in 2usize..15,
        extra in 0usize..5,
        way_frac in 0.0f64..1.0,
        shot in 1usize..4,
        q in 1usize..4,
        seed in any::<u64>(),
    ) {
        let ds = dataset(classes, shot + q + extra, seed);
        let way = 1 + ((classes - 1) as f64 * way_frac) as usize;
        let mut rng = Stream::new(seed);
        let ep = sample_episode(&ds, way, shot, q, &mut rng).unwrap();
        prop_assert!(check_episode(&ep, &ds).is_ok(), "{:?}", check_episode(&ep, &ds));
        let again = sample_episode(&ds, way, shot, q, &mut Stream::new(seed)).unwrap();
        prop_assert_eq!(ep, again);
    }
}
