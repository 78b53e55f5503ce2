use entroscale_core::attention::{
    attend, attention_map, entropy_vs_lambda, row_entropy, scale_factor, ScalePolicy,
};
use entroscale_core::numeric::{Matrix, RngStream, StreamGenerator};

fn normal(rows: usize, cols: usize, g: &mut StreamGenerator) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    g.fill_standard_normal(m.as_mut_slice());
    m
}

#[test]
fn maps_are_row_stochastic_and_bounded() {
    let root = RngStream::new(21, 0);
    for case in 0..500 {
        let mut g = root.split(case).generator();
        let n = 1 + g.below(128);
        let d = 1 + g.below(16);
        let q = normal(1 + g.below(6), d, &mut g);
        let k = normal(n, d, &mut g);
        let lambda = g.uniform_range(0.0, 5.0);
        let map = attention_map(&q, &k, lambda).unwrap();
        for i in 0..q.rows() {
            let row = map.weights.row(i);
            assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let prof = row_entropy(&map);
        let ln_n = (n as f64).ln();
        assert!(prof
            .per_row
            .iter()
            .all(|&h| h >= -1e-12 && h <= ln_n + 1e-12));
        assert!(prof.min <= prof.mean && prof.mean <= prof.max);
    }
}

#[test]
fn shifting_scores_leaves_weights_unchanged() {
    // Adding the same vector to every key shifts each row's scores by a
    // constant, which softmax ignores.
    let mut g = RngStream::new(22, 0).generator();
    let q = normal(4, 8, &mut g);
    let k = normal(50, 8, &mut g);
    let offset = normal(1, 8, &mut g).scale(30.0);
    let mut shifted = k.clone();
    shifted.add_row_broadcast(offset.row(0)).unwrap();
    let q1 = Matrix::from_fn(1, 8, |_, j| q[(0, j)]);
    let a = attention_map(&q1, &k, 0.7).unwrap();
    let b = attention_map(&q1, &shifted, 0.7).unwrap();
    assert!(a.weights.max_abs_diff(&b.weights) < 1e-12);
}

#[test]
fn zero_scale_gives_uniform_attention() {
    let mut g = RngStream::new(23, 0).generator();
    let q = normal(3, 5, &mut g);
    let k = normal(37, 5, &mut g);
    let v = normal(37, 2, &mut g);
    let (out, map) = attend(&q, &k, &v, 0.0).unwrap();
    let prof = row_entropy(&map);
    assert!(prof.per_row.iter().all(|h| (h - 37f64.ln()).abs() < 1e-12));
    let mean = v.column_sums();
    for i in 0..3 {
        for j in 0..2 {
            assert!((out[(i, j)] - mean[j] / 37.0).abs() < 1e-12);
        }
    }
}

#[test]
fn entropy_non_increasing_in_scale() {
    let root = RngStream::new(24, 0);
    for case in 0..1000 {
        let mut g = root.split(case).generator();
        let n = 1 + g.below(128);
        let d = 1 + g.below(12);
        let q = normal(2, d, &mut g);
        let k = normal(n, d, &mut g);
        let mut lambdas: Vec<f64> = (0..10).map(|_| g.uniform_range(0.0, 6.0)).collect();
        lambdas.sort_by(f64::total_cmp);
        let e = entropy_vs_lambda(&q, &k, &lambdas).unwrap();
        assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-9), "case {case}");
    }
}

#[test]
fn scaled_entropy_direction_relative_to_training_count() {
    let root = RngStream::new(25, 0);
    let mut checked = 0;
    for case in 0..250 {
        let mut g = root.split(case).generator();
        let t = 16 + g.below(1009);
        let n = 16 + g.below(1009);
        let d = 1 + g.below(24);
        let q = normal(3, d, &mut g);
        let k = normal(n, d, &mut g);
        let lf = scale_factor(ScalePolicy::Fixed, n, d).unwrap().lambda;
        let ls = scale_factor(ScalePolicy::entropy_preserving(t).unwrap(), n, d)
            .unwrap()
            .lambda;
        let ef = row_entropy(&attention_map(&q, &k, lf).unwrap()).per_row;
        let es = row_entropy(&attention_map(&q, &k, ls).unwrap()).per_row;
        for (f, s) in ef.iter().zip(&es) {
            match n.cmp(&t) {
                std::cmp::Ordering::Less => assert!(*s >= f - 1e-9),
                std::cmp::Ordering::Greater => assert!(*s <= f + 1e-9),
                std::cmp::Ordering::Equal => assert_eq!(s, f),
            }
        }
        checked += 1;
    }
    assert!(checked >= 200);
}
