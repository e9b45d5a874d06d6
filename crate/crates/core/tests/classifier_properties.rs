mod common;

use common::*;
use defect_edf::classifier::{
    build_reference, classify_batch, log_posterior_from_log_distances, min_class_distance, posterior,
    posterior_from_log_distances, shannon_entropy,
};
use defect_edf::features::ClassLabel;
use defect_edf::synth::{synthesize_patch, GenerationConfig};
use proptest::prelude::*;
use rand::Rng;

fn random_reference(r: &mut rand_chacha::ChaCha8Rng, n: usize, k: usize, dim: usize) -> Vec<(Vec<f64>, usize)> {
    (0..n)
        .map(|i| {
            let class = if i < k { i } else { r.random_range(0..k) };
            let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0) + class as f64).collect();
            (v, class)
        })
        .collect()
}

#[test]
fn distances_match_brute_force_scan() {
    let mut r = rng(31);
    let points = random_reference(&mut r, 200, 3, 7);
    let reference = build_reference(points.iter().map(|(v, c)| (v.clone(), *c))).unwrap();
    for _ in 0..50 {
        let q: Vec<f64> = (0..7).map(|_| r.random_range(-1.0..3.0)).collect();
        let ours = min_class_distance(&reference, &q).unwrap();
        let oracle = brute_force_distances(&points, 3, &q);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!(rel_err(*a, *b) <= 1e-12);
        }
    }
}

#[test]
fn log_posterior_matches_extended_precision() {
    let mut r = rng(32);
    let mut cases = vec![vec![1e-3, 1e3]];
    for _ in 0..40 {
        let k = r.random_range(2..=4);
        cases.push((0..k).map(|_| log_uniform(&mut r, 1e-6, 1e3)).collect());
    }
    for d in cases {
        let logs: Vec<f64> = d.iter().map(|x| x.ln()).collect();
        let ours = log_posterior_from_log_distances(&logs, 91);
        let oracle = extended_log_posterior(&d, 91);
        for (a, b) in ours.iter().zip(&oracle) {
            assert!(a.is_finite());
            assert!(rel_err(*a, *b) <= 1e-10, "{d:?}: {a} vs {b}");
        }
        let p = posterior_from_log_distances(&logs, 91);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn hand_cases() {
    let p = posterior_from_log_distances(&[0.0, 2f64.ln()], 2);
    assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] - 0.2).abs() < 1e-15);
    let p = posterior_from_log_distances(&[0.7; 3], 91);
    assert!(p.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
    assert!((shannon_entropy(&p) - 3f64.ln()).abs() < 1e-12);
}

fn log_distances(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((1e-6f64).ln()..(1e3f64).ln(), k)
}

proptest! {
    #[test]
    fn posteriors_are_normalized(logs in log_distances(3), m in prop::sample::select(vec![31usize, 91, 171])) {
        let p = posterior_from_log_distances(&logs, m);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|x| *x >= 0.0));
        let h = shannon_entropy(&p);
        prop_assert!(h >= 0.0 && h <= 3f64.ln() + 1e-12);
    }

    #[test]
    fn shrinking_a_distance_never_lowers_its_probability(logs in log_distances(3), j in 0usize..3, step in 0.0f64..2.0) {
        let before = posterior_from_log_distances(&logs, 31)[j];
        let mut closer = logs.clone();
        closer[j] -= step;
        prop_assert!(posterior_from_log_distances(&closer, 31)[j] >= before);
    }

    #[test]
    fn larger_dimension_sharpens(a in 0.01f64..10.0, ratio in 1.0001f64..5.0, m in 1usize..100) {
        let logs = [a.ln(), (a * ratio).ln()];
        let p_small = posterior_from_log_distances(&logs, m)[0];
        let p_large = posterior_from_log_distances(&logs, m + 1)[0];
        prop_assert!(p_large >= p_small);
    }

    #[test]
    fn class_order_is_equivariant(logs in log_distances(4), shift in 1usize..4) {
        let p = posterior_from_log_distances(&logs, 91);
        let mut rotated = logs.clone();
        rotated.rotate_left(shift);
        let q = posterior_from_log_distances(&rotated, 91);
        for i in 0..4 {
            prop_assert!((q[i] - p[(i + shift) % 4]).abs() <= 1e-15);
        }
    }

    #[test]
    fn log_space_matches_naive_for_benign_input(d in prop::collection::vec(0.1f64..10.0, 2..5), m in 1usize..=5) {
        let logs: Vec<f64> = d.iter().map(|x| x.ln()).collect();
        let ours = posterior_from_log_distances(&logs, m);
        for (a, b) in ours.iter().zip(naive_posterior(&d, m)) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }
}

#[test]
fn predicted_label_survives_class_renaming() {
    let mut r = rng(33);
    let points = random_reference(&mut r, 60, 3, 4);
    let forward = build_reference(points.iter().map(|(v, c)| (v.clone(), *c))).unwrap();
    let backward = build_reference(points.iter().map(|(v, c)| (v.clone(), 2 - *c))).unwrap();
    for _ in 0..20 {
        let q: Vec<f64> = (0..4).map(|_| r.random_range(-1.0..3.0)).collect();
        let a = posterior(&forward, &q).unwrap();
        let b = posterior(&backward, &q).unwrap();
        assert_eq!(a.predicted, 2 - b.predicted);
    }
}

#[test]
fn batch_equals_single_calls_and_self_matches() {
    let mut r = rng(34);
    let points = random_reference(&mut r, 100, 3, 5);
    let reference = build_reference(points.iter().map(|(v, c)| (v.clone(), *c))).unwrap();
    let queries: Vec<Vec<f64>> = points.iter().map(|(v, _)| v.clone()).collect();
    let batch = classify_batch(&reference, &queries).unwrap();
    for ((q, (_, truth)), b) in queries.iter().zip(&points).zip(&batch) {
        let single = posterior(&reference, q).unwrap();
        assert_eq!(single.probabilities, b.probabilities);
        assert_eq!(b.predicted, *truth);
    }
    assert!(classify_batch(&reference, &Vec::<Vec<f64>>::new()).unwrap().is_empty());
}

#[test]
fn reference_counts_match_generator_manifest() {
    let mut config = GenerationConfig::default();
    config.side = 31;
    config.counts = [
        (ClassLabel::DefectFree, 450),
        (ClassLabel::Crater, 12),
        (ClassLabel::Dirt, 138),
    ]
    .into();
    let mut rows = Vec::new();
    let mut manifest_counts = std::collections::BTreeMap::new();
    let mut i = 0;
    for (&label, &n) in &config.counts {
        for _ in 0..n {
            let (patch, record) = synthesize_patch(&config, label, &format!("p{i}"), i as u64).unwrap();
            *manifest_counts.entry(record.label.clone()).or_insert(0usize) += 1;
            rows.push((patch.pixels()[..31].to_vec(), patch.label.unwrap()));
            i += 1;
        }
    }
    let reference = build_reference(rows).unwrap();
    assert_eq!(reference.len(), 600);
    for (class, count) in reference.classes().iter().zip(reference.per_class_counts()) {
        assert_eq!(manifest_counts[class.as_str()], *count);
    }
}
