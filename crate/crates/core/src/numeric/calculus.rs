//! Numerical differentiation and integration used as independent oracles.

use super::NumericError;

/// Central-difference gradient `(f(x+h·eᵢ) − f(x−h·eᵢ)) / 2h` for every
/// coordinate.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], h: f64) -> Result<Vec<f64>, NumericError>
where
    F: FnMut(&[f64]) -> f64,
{
    let coords: Vec<usize> = (0..x.len()).collect();
    finite_diff_partials(f, x, &coords, h)
}

/// Central differences for a subset of coordinates, returned in the order
/// given.
pub fn finite_diff_partials<F>(
    mut f: F,
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>, NumericError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(NumericError::InvalidStep(h));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let x0 = probe[i];
        probe[i] = x0 + h;
        let plus = f(&probe);
        probe[i] = x0 - h;
        let minus = f(&probe);
        probe[i] = x0;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericError::NonFiniteEvaluation { coord: i });
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

// 15-point Kronrod nodes on [0, 1] (symmetric), with the embedded
// 7-point Gauss rule at the odd indices.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gauss_kronrod_15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

/// Globally adaptive Gauss–Kronrod (G7/K15) integration of `f` over
/// `[a, b]`: the interval with the largest error estimate is bisected until
/// the summed estimate drops below `max(abs_tol, rel_tol·|I|)`.
pub fn integrate_adaptive<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64, NumericError> {
    const MAX_INTERVALS: usize = 4096;
    let (v, e) = gauss_kronrod_15(&f, a, b);
    let mut intervals = vec![(a, b, v, e)];
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if !total.is_finite() {
            return Err(NumericError::NonFinite);
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(NumericError::QuadratureNotConverged { error: err });
        }
        let worst = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gauss_kronrod_15(&f, lo, mid);
        let (v2, e2) = gauss_kronrod_15(&f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn quadratic_gradient() {
        let g = finite_diff_gradient(|x| x[0] * x[0], &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8, "{}", g[0]);
    }

    #[test]
    fn constant_gradient_is_zero() {
        let g = finite_diff_gradient(|_| 4.2, &[1.0, -2.0, 3.0], 1e-5).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn sine_gradient() {
        let g = finite_diff_gradient(|x| x.iter().map(|v| v.sin()).sum(), &[0.0, PI / 2.0], 1e-5)
            .unwrap();
        assert!((g[0] - 1.0).abs() < 1e-9);
        assert!(g[1].abs() < 1e-9);
    }

    #[test]
    fn finite_diff_errors() {
        assert!(matches!(
            finite_diff_gradient(|x| x[0], &[0.0], 0.0),
            Err(NumericError::InvalidStep(_))
        ));
        assert!(matches!(
            finite_diff_gradient(|x| 1.0 / x[0], &[1e-6], 1e-5),
            Ok(_) | Err(NumericError::NonFiniteEvaluation { .. })
        ));
        assert!(matches!(
            finite_diff_gradient(
                |x| if x[0] > 0.0 { f64::INFINITY } else { 0.0 },
                &[0.0],
                1e-5
            ),
            Err(NumericError::NonFiniteEvaluation { coord: 0 })
        ));
    }

    #[test]
    fn quadrature_known_integrals() {
        let v = integrate_adaptive(|x| x.sin(), 0.0, PI, 1e-12, 0.0).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let gauss = integrate_adaptive(|x| (-x * x / 2.0).exp(), -12.0, 12.0, 1e-12, 0.0).unwrap();
        assert!((gauss - (2.0 * PI).sqrt()).abs() < 1e-11);
        let peaked = integrate_adaptive(|x| 1.0 / (1e-4 + x * x), -1.0, 1.0, 1e-10, 0.0).unwrap();
        let exact = 2.0 * (1.0 / 1e-2) * (1.0f64 / 1e-2).atan();
        assert!((peaked - exact).abs() / exact < 1e-9);
    }
}
