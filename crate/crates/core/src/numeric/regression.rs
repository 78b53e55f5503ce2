use super::NumericError;

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// `1 − SS_res/SS_tot` clamped to `[0, 1]`. When `SS_tot = 0` this is
    /// 1 for an exact fit and 0 otherwise.
    pub r_squared: f64,
}

impl LinearFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit, NumericError> {
    if xs.len() != ys.len() {
        return Err(NumericError::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(NumericError::DegenerateX);
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(NumericError::NonFinite);
    }
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - x_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    if sxx == 0.0 {
        return Err(NumericError::DegenerateX);
    }
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;

    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_line() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-15);
        assert!((f.intercept - 1.0).abs() < 1e-15);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn constant_series() {
        let f = linear_fit(&[0.0, 1.0], &[3.5, 3.5]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.intercept, 3.5);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn hand_computed_ols() {
        // x̄ = 1, ȳ = 2/3, Sxy = 1, Sxx = 2.
        let f = linear_fit(&[0.0, 1.0, 2.0], &[0.0, 1.0, 1.0]).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-15);
        assert!((f.intercept - 1.0 / 6.0).abs() < 1e-15);
        // SS_res = 1/6, SS_tot = 2/3.
        assert!((f.r_squared - 0.75).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            linear_fit(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(NumericError::DegenerateX)
        ));
        assert!(matches!(
            linear_fit(&[1.0], &[0.0]),
            Err(NumericError::DegenerateX)
        ));
        assert!(matches!(
            linear_fit(&[1.0, 2.0], &[0.0]),
            Err(NumericError::LengthMismatch { .. })
        ));
    }

    proptest! {
        #[test]
        fn residuals_are_orthogonal(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let x_mean = xs.iter().sum::<f64>() / xs.len() as f64;
            prop_assume!(xs.iter().map(|x| (x - x_mean).abs()).fold(0.0, f64::max) > 1e-3);
            let f = linear_fit(&xs, &ys).unwrap();
            let res: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - f.predict(*x)).collect();
            let scale_r: f64 = ys.iter().map(|y| y.abs()).sum::<f64>().max(1.0);
            let scale_rx: f64 = xs.iter().zip(&ys).map(|(x, y)| (x * y).abs()).sum::<f64>().max(1.0);
            let s0: f64 = res.iter().sum();
            let s1: f64 = res.iter().zip(&xs).map(|(r, x)| r * x).sum();
            prop_assert!(s0.abs() <= 1e-9 * scale_r, "Σr = {}", s0);
            prop_assert!(s1.abs() <= 1e-9 * scale_rx, "Σr·x = {}", s1);
            prop_assert!((0.0..=1.0).contains(&f.r_squared));
        }
    }
}
