use gatelrp::pcx::{fit_gmm, ConceptMatrix, GmmConfig, PcxError, VARIANCE_FLOOR};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// `n` points around each mean with isotropic σ, interleaved; returns rows and labels.
fn mixture(means: &[Vec<f64>], sigma: f64, n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n {
        let k = rng.gen_range(0..means.len());
        rows.push(means[k].iter().map(|m| m + noise.sample(&mut rng)).collect());
        labels.push(k);
    }
    (rows, labels)
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn monotone_between_reseeds(ll: &[f64], reseeded_at: &[usize]) -> Result<(), String> {
    for t in 1..ll.len() {
        if reseeded_at.contains(&t) {
            continue;
        }
        let tol = 1e-9 * ll[t - 1].abs().max(1.0);
        if ll[t] < ll[t - 1] - tol {
            return Err(format!("log-likelihood fell at step {t}: {} -> {}", ll[t - 1], ll[t]));
        }
    }
    Ok(())
}

#[test]
fn recovers_a_well_separated_mixture() {
    let sigma = 0.05;
    let means = vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 1.0]];
    // pairwise separation is at least 1.0 = 20σ
    let (rows, labels) = mixture(&means, sigma, 200, 42);
    let model = fit_gmm(&ConceptMatrix::raw("l", rows.clone()), GmmConfig::new(3, 0)).unwrap();
    assert!(model.converged);
    assert!(model.reseeded_at.is_empty());
    monotone_between_reseeds(&model.log_likelihood, &[]).unwrap();

    let assigned: Vec<usize> = rows.iter().map(|r| model.assign(r).unwrap().component).collect();
    let best = permutations(3)
        .into_iter()
        .map(|p| (assigned.iter().zip(&labels).filter(|(a, l)| p[**a] == **l).count(), p))
        .max_by_key(|(hits, _)| *hits)
        .unwrap();
    let agreement = best.0 as f64 / rows.len() as f64;
    assert!(agreement >= 0.99, "label agreement {agreement}");
    for (k, mu) in model.means.iter().enumerate() {
        let truth = &means[best.1[k]];
        let err = mu.iter().zip(truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 0.1, "component {k} mean off by {err}");
    }
    let w: f64 = model.weights.iter().sum();
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn single_component_is_the_sample_mean_and_variance() {
    let (rows, _) = mixture(&[vec![0.3, -0.2, 0.7, 0.0]], 0.2, 57, 3);
    let model = fit_gmm(&ConceptMatrix::raw("l", rows.clone()), GmmConfig::new(1, 9)).unwrap();
    let n = rows.len() as f64;
    for d in 0..4 {
        let mean = rows.iter().map(|r| r[d]).sum::<f64>() / n;
        let var = (rows.iter().map(|r| (r[d] - mean).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR);
        assert!((model.means[0][d] - mean).abs() <= 1e-14, "mean {d}");
        assert!((model.variances[0][d] - var).abs() <= 1e-14 * var, "variance {d}");
    }
    assert_eq!(model.weights, vec![1.0]);
    // a constant row set sits on the variance floor
    let flat = vec![vec![1.0, 2.0]; 5];
    let m = fit_gmm(&ConceptMatrix::raw("l", flat), GmmConfig::new(1, 0)).unwrap();
    assert_eq!(m.variances[0], vec![VARIANCE_FLOOR; 2]);
}

#[test]
fn too_few_rows_and_determinism() {
    let rows = vec![vec![0.0], vec![1.0]];
    assert_eq!(
        fit_gmm(&ConceptMatrix::raw("l", rows.clone()), GmmConfig::new(3, 0)).unwrap_err(),
        PcxError::TooFewRows { n: 2, k: 3 }
    );
    let (rows, _) = mixture(&[vec![0.0, 0.0], vec![3.0, 3.0]], 0.5, 80, 1);
    let a = fit_gmm(&ConceptMatrix::raw("l", rows.clone()), GmmConfig::new(2, 5)).unwrap();
    let b = fit_gmm(&ConceptMatrix::raw("l", rows), GmmConfig::new(2, 5)).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn em_never_decreases_the_likelihood(seed in 0u64..10_000, k in 1usize..5, n in 20usize..80, sigma in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
        let (rows, _) = mixture(&centers, sigma, n, seed + 1);
        let model = fit_gmm(&ConceptMatrix::raw("l", rows), GmmConfig::new(k, seed)).unwrap();
        prop_assert!(monotone_between_reseeds(&model.log_likelihood, &model.reseeded_at).is_ok(),
            "{:?}", monotone_between_reseeds(&model.log_likelihood, &model.reseeded_at));
        let w: f64 = model.weights.iter().sum();
        prop_assert!((w - 1.0).abs() < 1e-9);
        prop_assert!(model.variances.iter().flatten().all(|v| *v >= VARIANCE_FLOOR));
    }
}
