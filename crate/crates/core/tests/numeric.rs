use entroscale_core::numeric::{
    cholesky_with_jitter, linear_fit, Matrix, MultivariateGaussian, RngStream,
};
use proptest::prelude::*;

fn gram(m: usize, g: &mut entroscale_core::numeric::StreamGenerator) -> Matrix {
    let mut a = Matrix::zeros(m, m);
    g.fill_standard_normal(a.as_mut_slice());
    a.transposed_matmul(&a).unwrap()
}

#[test]
fn cholesky_round_trip_on_gram_matrices() {
    let root = RngStream::new(17, 0);
    for case in 0..1000 {
        let mut g = root.split(case).generator();
        let m = 1 + g.below(16);
        let s = gram(m, &mut g);
        let f = cholesky_with_jitter(&s).unwrap();
        let rebuilt = f.lower.matmul_transposed(&f.lower).unwrap();
        let scale = 1.0 + s.trace();
        assert!(
            rebuilt.max_abs_diff(&s) <= 1e-10 * scale + f.jitter,
            "case {case}, m {m}"
        );
        for i in 0..m {
            for j in i + 1..m {
                assert_eq!(f.lower[(i, j)], 0.0);
            }
        }
    }
}

#[test]
fn sample_covariance_concentrates() {
    let cov = Matrix::from_rows(&[
        vec![2.0, -0.6, 0.0],
        vec![-0.6, 1.0, 0.3],
        vec![0.0, 0.3, 0.5],
    ])
    .unwrap();
    let mean = vec![1.0, -2.0, 0.5];
    let g = MultivariateGaussian::new(mean.clone(), cov.clone()).unwrap();
    let n = 200_000;
    let x = g.sample(n, RngStream::new(3, 4)).unwrap();
    let sums = x.column_sums();
    let emp_mean: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    for (a, b) in emp_mean.iter().zip(&mean) {
        assert!((a - b).abs() < 0.02);
    }
    let centered = Matrix::from_fn(n, 3, |i, j| x[(i, j)] - emp_mean[j]);
    let emp_cov = centered
        .transposed_matmul(&centered)
        .unwrap()
        .scale(1.0 / (n - 1) as f64);
    assert!(emp_cov.max_abs_diff(&cov) < 0.03);
}

proptest! {
    #[test]
    fn exact_lines_fit_exactly(slope in -10.0f64..10.0, intercept in -10.0f64..10.0, n in 2usize..40) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.5 - 3.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| slope * x + intercept).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - intercept).abs() < 1e-9);
        prop_assert!(fit.r_squared > 1.0 - 1e-9);
    }

    #[test]
    fn split_streams_are_reproducible(seed: u64, stream: u64, idx: u64) {
        let a = RngStream::new(seed, stream).split(idx);
        let b = RngStream::new(seed, stream).split(idx);
        let (mut ga, mut gb) = (a.generator(), b.generator());
        for _ in 0..8 {
            prop_assert_eq!(ga.next_u64(), gb.next_u64());
        }
    }
}
