use gatelrp::pcx::{
    calibrate_outliers, centered_cosine, cosine_similarity, difference_to_prototype, fit_gmm, normalize_l1,
    outlier_score, percentile, ConceptMatrix, GmmConfig, PrototypeStore, Usage,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Raw concept-like vectors from three noisy templates.
fn raw_vectors(n: usize, seed: u64) -> Vec<(usize, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let templates = [
        [5.0, 1.0, 0.0, 0.5, 0.0, 0.2],
        [0.0, 4.0, 3.0, 0.0, 0.3, 0.0],
        [0.2, 0.0, 0.5, 4.0, 2.0, -1.0],
    ];
    (0..n)
        .map(|i| {
            let t = &templates[i % 3];
            let scale = rng.gen_range(0.5..3.0);
            (i, t.iter().map(|v| scale * (v + rng.gen_range(-0.3..0.3))).collect())
        })
        .collect()
}

#[test]
fn percentile_matches_linear_interpolation_by_hand() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert!((percentile(&v, 5.0) - 1.15).abs() < 1e-12);
    assert!((percentile(&v, 50.0) - 2.5).abs() < 1e-12);
    assert_eq!(percentile(&[7.0], 5.0), 7.0);
    assert!(percentile(&[], 5.0).is_nan());
}

#[test]
fn coverage_sums_to_one_hundred() {
    let m = ConceptMatrix::from_vectors("l", "ctx", &raw_vectors(90, 1));
    let store = PrototypeStore::fit(&m, GmmConfig::new(3, 0), 5.0, 4).unwrap();
    let total: f64 = store.summaries.iter().map(|s| s.coverage).sum();
    assert!((total - 100.0).abs() < 0.1, "{total}");
    for s in &store.summaries {
        assert_eq!(s.top_concepts.len(), 4);
        let mu = &store.model.means[s.component];
        assert!(s.top_concepts.windows(2).all(|w| w[0].1.abs() >= w[1].1.abs()));
        assert_eq!(s.top_concepts[0].1, mu[s.top_concepts[0].0]);
        let c = s.cosine.unwrap();
        assert!((-1.0..=1.0).contains(&c));
    }
    assert_eq!(store.training_samples.len(), 90);
}

#[test]
fn cosine_variants() {
    let a = [0.1, 0.5, 0.4];
    assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
    let shifted: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
    assert!((centered_cosine(&a, &shifted).unwrap() - 1.0).abs() < 1e-12);
    // a constant vector centers to zero; the plain cosine is used instead
    let flat = [0.2, 0.2, 0.2];
    assert_eq!(
        centered_cosine(&flat, &a).unwrap(),
        cosine_similarity(&flat, &a).unwrap()
    );
    assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn a_training_mean_is_assigned_to_its_prototype_and_not_flagged() {
    let m = ConceptMatrix::from_vectors("l", "ctx", &raw_vectors(60, 2));
    let store = PrototypeStore::fit(&m, GmmConfig::new(3, 1), 5.0, 3).unwrap();
    for (k, mu) in store.model.means.iter().enumerate() {
        let a = store.model.assign(mu).unwrap();
        assert_eq!(a.component, k);
        assert!(!outlier_score(mu, &store.model, &store.calibration).unwrap().outlier);
        let d = difference_to_prototype(mu, &store.model, k).unwrap();
        assert!(d.entries.iter().all(|e| e.usage == Usage::Matched));
    }
}

#[test]
fn difference_report_orders_by_magnitude() {
    let m = ConceptMatrix::from_vectors("l", "ctx", &raw_vectors(30, 3));
    let store = PrototypeStore::fit(&m, GmmConfig::new(2, 0), 5.0, 3).unwrap();
    let rec = store.assess(&[0.0, 0.0, 9.0, 0.0, 0.0, 1.0], 10).unwrap();
    assert_eq!(rec.diff.len(), 6);
    assert!(rec.diff.windows(2).all(|w| w[0].delta.abs() >= w[1].delta.abs()));
    for e in &rec.diff {
        assert!((e.test - e.prototype - e.delta).abs() < 1e-15);
        let expected = if e.delta > 0.0 {
            Usage::OverUsed
        } else if e.delta < 0.0 {
            Usage::UnderUsed
        } else {
            Usage::Matched
        };
        assert_eq!(e.usage, expected);
    }
    assert!(store.assess(&[0.0; 6], 10).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_flag_rate_is_q_percent(seed in 0u64..5000, n in 40usize..160, q in 1.0f64..50.0, k in 1usize..4) {
        let m = ConceptMatrix::from_vectors("l", "", &raw_vectors(n, seed));
        let model = fit_gmm(&m, GmmConfig::new(k, seed)).unwrap();
        let cal = calibrate_outliers(&model, &m, q).unwrap();
        let flagged = m.rows.iter().filter(|r| outlier_score(r, &model, &cal).unwrap().outlier).count();
        let expected = q / 100.0 * (n - 1) as f64;
        prop_assert!((flagged as f64 - expected).abs() <= 1.0, "flagged {} expected {}", flagged, expected);
    }

    #[test]
    fn assessment_ignores_positive_rescaling(seed in 0u64..5000, scale in 0.01f64..100.0, which in 0usize..50) {
        let m = ConceptMatrix::from_vectors("l", "", &raw_vectors(50, seed));
        let store = PrototypeStore::fit(&m, GmmConfig::new(3, seed), 5.0, 3).unwrap();
        let raw = &raw_vectors(50, seed + 1)[which].1;
        let scaled: Vec<f64> = raw.iter().map(|v| v * scale).collect();
        let (a, b) = (store.assess(raw, 10).unwrap(), store.assess(&scaled, 10).unwrap());
        prop_assert_eq!(a.component, b.component);
        prop_assert_eq!(a.outlier, b.outlier);
        prop_assert!((a.log_likelihood - b.log_likelihood).abs() <= 1e-9 * a.log_likelihood.abs().max(1.0));
    }

    #[test]
    fn l1_normalization_is_unit_and_sign_preserving(v in proptest::collection::vec(-10.0f64..10.0, 1..20)) {
        match normalize_l1(&v) {
            None => prop_assert!(v.iter().all(|x| *x == 0.0)),
            Some(u) => {
                prop_assert!((u.iter().map(|x| x.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(u.iter().zip(&v).all(|(a, b)| a.signum() == b.signum() || *b == 0.0));
            }
        }
    }
}
