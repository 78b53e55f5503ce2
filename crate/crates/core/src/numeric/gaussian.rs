use super::{Matrix, NumericError, RngStream};

/// Absolute tolerance for the symmetry precondition of [`cholesky`].
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative diagonal jitter (times `trace / m`) for the first attempt.
pub const JITTER_FIRST: f64 = 1e-10;
/// Relative diagonal jitter for the single retry.
pub const JITTER_RETRY: f64 = 1e-8;

/// Lower-triangular factor together with the diagonal jitter that was added.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    pub lower: Matrix,
    /// Absolute amount added to each diagonal entry before factorization.
    pub jitter: f64,
}

/// Factor a symmetric positive-semidefinite matrix as `L·Lᵀ = cov + jitter·I`.
///
/// The first attempt uses `jitter = 1e-10·trace/m`; if a negative pivot
/// appears it retries once at `1e-8·trace/m`.
pub fn cholesky(cov: &Matrix) -> Result<Matrix, NumericError> {
    cholesky_with_jitter(cov).map(|f| f.lower)
}

pub fn cholesky_with_jitter(cov: &Matrix) -> Result<CholeskyFactor, NumericError> {
    if !cov.is_square() {
        return Err(NumericError::NotSquare {
            rows: cov.rows(),
            cols: cov.cols(),
        });
    }
    if !cov.is_finite() {
        return Err(NumericError::NonFinite);
    }
    let m = cov.rows();
    for i in 0..m {
        for j in 0..i {
            let gap = (cov[(i, j)] - cov[(j, i)]).abs();
            if gap > SYMMETRY_TOL {
                return Err(NumericError::NotSymmetric {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }
    if m == 0 {
        return Ok(CholeskyFactor {
            lower: Matrix::zeros(0, 0),
            jitter: 0.0,
        });
    }
    let base = (cov.trace() / m as f64).max(0.0);
    let mut last_pivot = 0.0;
    for rel in [JITTER_FIRST, JITTER_RETRY] {
        let jitter = rel * base;
        match factor(cov, jitter) {
            Ok(lower) => return Ok(CholeskyFactor { lower, jitter }),
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(NumericError::IndefiniteAfterJitter { pivot: last_pivot })
}

/// Plain Cholesky–Banachiewicz on `cov + jitter·I`. Returns the offending
/// pivot on failure.
fn factor(cov: &Matrix, jitter: f64) -> Result<Matrix, f64> {
    let m = cov.rows();
    let mut l = Matrix::zeros(m, m);
    let scale = (0..m).map(|i| cov[(i, i)].abs()).fold(1.0, f64::max);
    for j in 0..m {
        let lj = l.row(j)[..j].to_vec();
        let pivot = cov[(j, j)] + jitter - lj.iter().map(|v| v * v).sum::<f64>();
        if pivot < 0.0 || !pivot.is_finite() {
            return Err(pivot);
        }
        let d = pivot.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..m {
            let num = cov[(i, j)]
                - l.row(i)[..j]
                    .iter()
                    .zip(&lj)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            if d > 0.0 {
                l[(i, j)] = num / d;
            } else if num.abs() > 1e-12 * scale {
                // Zero pivot with a non-zero coupling: not PSD.
                return Err(-num.abs());
            }
        }
    }
    Ok(l)
}

/// `N(mean, covariance)` with a cached Cholesky factor.
#[derive(Debug, Clone)]
pub struct MultivariateGaussian {
    mean: Vec<f64>,
    covariance: Matrix,
    chol: CholeskyFactor,
}

impl MultivariateGaussian {
    pub fn new(mean: Vec<f64>, covariance: Matrix) -> Result<Self, NumericError> {
        if covariance.rows() != mean.len() || !covariance.is_square() {
            return Err(NumericError::ShapeMismatch {
                expected: (mean.len(), mean.len()),
                found: covariance.shape(),
            });
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(NumericError::NonFinite);
        }
        let chol = cholesky_with_jitter(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn chol_factor(&self) -> &Matrix {
        &self.chol.lower
    }

    pub fn jitter(&self) -> f64 {
        self.chol.jitter
    }

    /// Draws `n` i.i.d. rows `mean + L·z`, `z ~ N(0, I)`.
    pub fn sample(&self, n: usize, rng: RngStream) -> Result<Matrix, NumericError> {
        if n == 0 {
            return Err(NumericError::EmptySample);
        }
        let m = self.dim();
        let l = &self.chol.lower;
        let mut gen = rng.generator();
        let mut out = Matrix::zeros(n, m);
        let mut z = vec![0.0; m];
        for r in 0..n {
            gen.fill_standard_normal(&mut z);
            let row = out.row_mut(r);
            for i in 0..m {
                let li = &l.row(i)[..=i];
                let acc: f64 = li.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
                row[i] = self.mean[i] + acc;
            }
        }
        Ok(out)
    }
}

/// Convenience form of [`MultivariateGaussian::sample`].
pub fn sample_gaussian(
    model: &MultivariateGaussian,
    n: usize,
    rng: RngStream,
) -> Result<Matrix, NumericError> {
    model.sample(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(l: &Matrix) -> Matrix {
        l.matmul_transposed(l).unwrap()
    }

    #[test]
    fn identity_factors_to_identity() {
        let l = cholesky(&Matrix::identity(3)).unwrap();
        assert!(l.max_abs_diff(&Matrix::identity(3)) < 1e-9);
    }

    #[test]
    fn two_by_two_reference() {
        let cov = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let l = cholesky(&cov).unwrap();
        let expected = Matrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 2f64.sqrt()]]).unwrap();
        assert!(l.max_abs_diff(&expected) < 1e-9);
        // Oracle: direct multiplication reconstructs the input.
        assert!(reconstruct(&l).max_abs_diff(&cov) < 1e-8);
        assert_eq!(l[(0, 1)], 0.0);
    }

    #[test]
    fn indefinite_is_rejected() {
        let cov = Matrix::from_rows(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&cov),
            Err(NumericError::IndefiniteAfterJitter { .. })
        ));
    }

    #[test]
    fn shape_and_symmetry_errors() {
        assert!(matches!(
            cholesky(&Matrix::zeros(2, 3)),
            Err(NumericError::NotSquare { .. })
        ));
        let cov = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.4, 1.0]]).unwrap();
        assert!(matches!(
            cholesky(&cov),
            Err(NumericError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn rank_deficient_psd_factors() {
        // w·wᵀ with w = (1, 2, 3): rank one.
        let w = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let cov = w.matmul_transposed(&w).unwrap();
        let f = cholesky_with_jitter(&cov).unwrap();
        let mut target = cov.clone();
        for i in 0..3 {
            target[(i, i)] += f.jitter;
        }
        assert!(reconstruct(&f.lower).max_abs_diff(&target) < 1e-8);
        for i in 0..3 {
            assert!(f.lower[(i, i)] >= 0.0);
        }
    }

    #[test]
    fn zero_covariance_gives_constant_rows() {
        let mu = vec![1.5, -2.0, 0.25];
        let g = MultivariateGaussian::new(mu.clone(), Matrix::zeros(3, 3)).unwrap();
        let x = g.sample(5, RngStream::new(1, 0)).unwrap();
        for r in 0..5 {
            assert_eq!(x.row(r), mu.as_slice());
        }
    }

    #[test]
    fn univariate_standard_normal_concentration() {
        let n = 100_000;
        let g = MultivariateGaussian::new(vec![0.0], Matrix::identity(1)).unwrap();
        let x = g.sample(n, RngStream::new(2024, 0)).unwrap();
        let mean = x.as_slice().iter().sum::<f64>() / n as f64;
        let var = x.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // 3σ bounds: sd(mean) = 1/√n ≈ 0.0032, sd(var) = √(2/n) ≈ 0.0045.
        assert!(mean.abs() < 0.02, "mean = {mean}");
        assert!((var - 1.0).abs() < 0.03, "var = {var}");
    }

    #[test]
    fn sampling_is_bitwise_deterministic() {
        let cov = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let g = MultivariateGaussian::new(vec![0.1, 0.2], cov).unwrap();
        let a = g.sample(100, RngStream::new(5, 9)).unwrap();
        let b = g.sample(100, RngStream::new(5, 9)).unwrap();
        assert!(a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn empty_sample_rejected() {
        let g = MultivariateGaussian::new(vec![0.0], Matrix::identity(1)).unwrap();
        assert!(g.sample(0, RngStream::new(0, 0)).is_err());
    }
}
