use super::DiffusionError;
use crate::numeric::Matrix;

/// Linear-β DDPM noise schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta_start(&self) -> f64 {
        self.betas[0]
    }

    pub fn beta_end(&self) -> f64 {
        self.betas[self.betas.len() - 1]
    }
}

pub fn make_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule, DiffusionError> {
    let valid = steps >= 2
        && beta_start.is_finite()
        && beta_end.is_finite()
        && 0.0 < beta_start
        && beta_start <= beta_end
        && beta_end < 1.0;
    if !valid {
        return Err(DiffusionError::InvalidRange(format!(
            "need steps >= 2 and 0 < beta_start <= beta_end < 1, got steps={steps}, \
             beta_start={beta_start}, beta_end={beta_end}"
        )));
    }
    let last = (steps - 1) as f64;
    let betas: Vec<f64> = (0..steps)
        .map(|i| beta_start + (beta_end - beta_start) * (i as f64 / last))
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let alpha_bars = alphas
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(DiffusionSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_noise(
    x0: &Matrix,
    t: usize,
    eps: &Matrix,
    sched: &DiffusionSchedule,
) -> Result<Matrix, DiffusionError> {
    if x0.shape() != eps.shape() {
        return Err(DiffusionError::ShapeMismatch(format!(
            "image {:?} vs noise {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let ab = *sched
        .alpha_bars
        .get(t)
        .ok_or(DiffusionError::StepOutOfRange {
            t,
            steps: sched.steps(),
        })?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Matrix::from_fn(x0.rows(), x0.cols(), |i, j| {
        a * x0[(i, j)] + b * eps[(i, j)]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_beta() {
        let s = make_schedule(2, 0.1, 0.1).unwrap();
        assert!((s.alpha_bars[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars[1] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn long_schedule_reaches_low_signal() {
        let s = make_schedule(200, 1e-4, 0.02).unwrap();
        let direct: f64 = (0..200)
            .map(|i| 1.0 - (1e-4 + (0.02 - 1e-4) * i as f64 / 199.0))
            .product();
        let last = *s.alpha_bars.last().unwrap();
        assert!((last - direct).abs() < 1e-12);
        assert!(last > 0.0 && last < 0.2, "{last}");
        assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
        let mut acc = 1.0;
        for (a, ab) in s.alphas.iter().zip(&s.alpha_bars) {
            acc *= a;
            assert!((acc - ab).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_ranges() {
        for (steps, b0, b1) in [
            (10, 0.1, 1.0),
            (10, 0.0, 0.1),
            (10, 0.2, 0.1),
            (1, 0.1, 0.1),
        ] {
            assert!(matches!(
                make_schedule(steps, b0, b1),
                Err(DiffusionError::InvalidRange(_))
            ));
        }
    }

    #[test]
    fn forward_noise_cases() {
        let s = make_schedule(10, 0.1, 0.2).unwrap();
        let x0 = Matrix::filled(2, 3, 0.7);
        let zero = Matrix::zeros(2, 3);
        let xt = forward_noise(&x0, 4, &zero, &s).unwrap();
        let a = s.alpha_bars[4].sqrt();
        assert!(xt.as_slice().iter().all(|&v| v == a * 0.7));

        // ᾱ = 0.64 → 0.8·1 + 0.6·1
        let s = DiffusionSchedule {
            betas: vec![0.36],
            alphas: vec![0.64],
            alpha_bars: vec![0.64],
        };
        let ones = Matrix::filled(2, 2, 1.0);
        let xt = forward_noise(&ones, 0, &ones, &s).unwrap();
        assert!(xt.as_slice().iter().all(|&v| (v - 1.4).abs() < 1e-15));

        let tiny = make_schedule(5, 1e-8, 1e-3).unwrap();
        let eps = Matrix::filled(2, 3, -1.3);
        let xt = forward_noise(&x0, 0, &eps, &tiny).unwrap();
        let ab = tiny.alpha_bars[0];
        let bound = (1.0 - ab).sqrt() * eps.frobenius_sq().sqrt()
            + (1.0 - ab.sqrt()) * x0.frobenius_sq().sqrt();
        assert!(xt.sub(&x0).unwrap().frobenius_sq().sqrt() <= bound + 1e-12);

        assert!(matches!(
            forward_noise(&x0, 10, &zero, &make_schedule(10, 0.1, 0.2).unwrap()),
            Err(DiffusionError::StepOutOfRange { .. })
        ));
        assert!(matches!(
            forward_noise(&x0, 0, &Matrix::zeros(3, 2), &tiny),
            Err(DiffusionError::ShapeMismatch(_))
        ));
    }
}
