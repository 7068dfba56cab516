use episodic_core::rng::Stream;
use episodic_core::stats::{normality_rejection_rate, shapiro_wilk, spearman};
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    x: Vec<f64>,
    y: Vec<f64>,
    w: f64,
    p: f64,
    rho: f64,
}

#[derive(Deserialize)]
struct Reference {
    cases: Vec<Case>,
}

fn reference() -> Reference {
    let text = include_str!("data/stats_reference.json");
    serde_json::from_str(text).unwrap()
}

#[test]
fn shapiro_matches_reference_implementation() {
    for (i, c) in reference().cases.iter().enumerate() {
        let r = shapiro_wilk(&c.x).unwrap();
        assert!((r.w - c.w).abs() < 1e-3, "case {i}: W {} vs {}", r.w, c.w);
        assert!((r.p - c.p).abs() < 1e-3, "case {i}: p {} vs {}", r.p, c.p);
    }
}

#[test]
fn spearman_matches_reference_implementation() {
    for (i, c) in reference().cases.iter().enumerate() {
        let rho = spearman(&c.x, &c.y).unwrap();
        assert!((rho - c.rho).abs() < 1e-9, "case {i}: {rho} vs {}", c.rho);
    }
}

#[test]
fn uniform_samples_are_rejected_often() {
    let mut rejected = 0;
    for rep in 0..100 {
        let mut rng = Stream::new(1000 + rep);
        let xs: Vec<f64> = (0..50).map(|_| rng.next_f64()).collect();
        if shapiro_wilk(&xs).unwrap().p < 0.05 {
            rejected += 1;
        }
    }
    assert!(rejected > 20, "{rejected}");
}

#[test]
fn normal_pool_rejects_near_alpha() {
    for seed in 0..5 {
        let mut rng = Stream::new(seed);
        let xs: Vec<f64> = (0..10_000).map(|_| rng.standard_normal()).collect();
        let r = normality_rejection_rate(&xs, 50, 100, 0.05, &mut rng.split(1)).unwrap();
        assert!(r.rate < 0.15, "seed {seed}: {}", r.rate);
    }
}

#[test]
fn rejection_rate_is_a_pure_function_of_the_seed() {
    let mut rng = Stream::new(3);
    let xs: Vec<f64> = (0..500).map(|_| rng.standard_normal().exp()).collect();
    let a = normality_rejection_rate(&xs, 50, 100, 0.05, &mut Stream::new(77)).unwrap();
    let b = normality_rejection_rate(&xs, 50, 100, 0.05, &mut Stream::new(77)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn spearman_ignores_monotone_transforms(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 3..60),
        scale in 0.01f64..100.0,
        shift in -50f64..50.0,
    ) {
        let xs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assume!(spearman(&xs, &ys).is_ok());
        let base = spearman(&xs, &ys).unwrap();
        let tx: Vec<f64> = xs.iter().map(|x| (x / 1e3).exp() * scale + shift).collect();
        let ty: Vec<f64> = ys.iter().map(|y| y * y * y + 2.0 * y).collect();
        prop_assume!(spearman(&tx, &ty).is_ok());
        prop_assert!((spearman(&tx, &ty).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn shapiro_is_affine_invariant(
        xs in prop::collection::vec(-10f64..10.0, 3..200),
        a in 0.1f64..10.0,
        b in -100f64..100.0,
    ) {
        prop_assume!(shapiro_wilk(&xs).is_ok());
        let w = shapiro_wilk(&xs).unwrap().w;
        let ys: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let w2 = shapiro_wilk(&ys).unwrap().w;
        prop_assert!(w <= 1.0 && w > 0.0);
        prop_assert!((w - w2).abs() < 1e-9, "{} vs {}", w, w2);
    }
}
