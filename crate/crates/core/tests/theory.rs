use entroscale_core::attention::ScalePolicy;
use entroscale_core::numeric::{Matrix, RngStream};
use entroscale_core::theory::{
    approx_entropy_from_moments, empirical_decomposition, entropy_logn_scan, key_distribution,
    monte_carlo_entropy, predicted_entropy, random_queries, row_moments, GaussianTokenModel,
};

/// Median absolute gap between the empirical decomposition and the moment
/// approximation over 50 random models shrinks as N grows.
#[test]
fn moment_approximation_concentrates_with_n() {
    let root = RngStream::new(31, 0);
    let mut medians = Vec::new();
    for &n in &[16usize, 256, 4096] {
        let mut errs = Vec::new();
        for case in 0..50u64 {
            let mut g = root.split(case).generator();
            let d = 2 + g.below(6);
            let model = GaussianTokenModel::isotropic(d);
            let kd = key_distribution(&model).unwrap();
            let q = random_queries(1, d, g.uniform_range(0.5, 2.0), root.split(1000 + case));
            let lambda = 1.0 / (d as f64).sqrt();
            let m = row_moments(q.row(0), lambda, &kd).unwrap();
            let keys = kd
                .to_gaussian()
                .unwrap()
                .sample(n, root.split(2000 + case))
                .unwrap();
            let exact = empirical_decomposition(q.row(0), &keys, lambda)
                .unwrap()
                .exact_entropy;
            errs.push((exact - approx_entropy_from_moments(n, m).unwrap()).abs());
        }
        errs.sort_by(f64::total_cmp);
        medians.push(errs[errs.len() / 2]);
    }
    assert!(medians.windows(2).all(|w| w[1] < w[0]), "{medians:?}");
}

#[test]
fn monte_carlo_agrees_with_prediction_at_large_n() {
    let model = GaussianTokenModel::isotropic(32);
    let kd = key_distribution(&model).unwrap();
    let q = random_queries(4, 32, 4.0, RngStream::new(32, 0));
    let lambda = 1.0 / 32f64.sqrt();
    let predicted: f64 = (0..4)
        .map(|i| predicted_entropy(4096, row_moments(q.row(i), lambda, &kd).unwrap()))
        .sum::<f64>()
        / 4.0;
    let est = monte_carlo_entropy(&model, &q, 4096, lambda, 100, RngStream::new(32, 1)).unwrap();
    assert!((est.mean - predicted).abs() <= (3.0 * est.stderr).max(0.05));
}

#[test]
fn non_isotropic_keys_follow_projected_variance() {
    let d = 6;
    let mut g = RngStream::new(33, 0).generator();
    let mut w = Matrix::zeros(d, 4);
    g.fill_standard_normal(w.as_mut_slice());
    let sigma = Matrix::from_fn(d, d, |i, j| if i == j { 1.0 + 0.2 * i as f64 } else { 0.1 });
    let model = GaussianTokenModel::new(vec![0.3; d], sigma, w).unwrap();
    let kd = key_distribution(&model).unwrap();
    let q = random_queries(1, 4, 1.0, RngStream::new(33, 1));
    let m = row_moments(q.row(0), 0.5, &kd).unwrap();
    let est = monte_carlo_entropy(&model, &q, 2048, 0.5, 100, RngStream::new(33, 2)).unwrap();
    let approx = approx_entropy_from_moments(2048, m).unwrap();
    assert!((est.mean - approx).abs() < 0.05, "{} vs {approx}", est.mean);
}

#[test]
fn small_scan_is_linear_under_fixed_scaling() {
    let model = GaussianTokenModel::isotropic(16);
    let q = random_queries(4, 16, 4.0, RngStream::new(34, 0));
    let scan = entropy_logn_scan(
        &model,
        &q,
        ScalePolicy::Fixed,
        16,
        &[128, 256, 512, 1024],
        60,
        RngStream::new(34, 1),
    )
    .unwrap();
    assert!((scan.fit.slope - 1.0).abs() < 0.05, "{}", scan.fit.slope);
    assert!(scan.fit.r_squared > 0.999);
    assert!(scan.rows.iter().all(|r| r.lambda == 0.25));
}
