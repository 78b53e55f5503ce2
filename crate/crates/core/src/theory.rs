//! Attention entropy under a Gaussian token model.
//!
//! With keys `K_j ~ N(μ^K, Σ^K)` and a fixed query row `q`, the scalar score
//! `y = λ·q·K_jᵀ` is Gaussian with mean `μ = λ·q·μ^Kᵀ` and variance
//! `σ² = λ²·q·Σ^K·qᵀ`. Writing the row entropy as
//!
//! ```text
//! Ent = ln N + ln mean(e^y) − mean(y·e^y) / mean(e^y)
//! ```
//!
//! is exact for empirical means. Replacing the means by the Gaussian
//! expectations `E[e^y] = e^{μ+σ²/2}` and `E[y·e^y] = (μ+σ²)·e^{μ+σ²/2}`
//! collapses it to `ln N − σ²/2`, so entropy grows linearly in `ln N` at a
//! fixed scaling factor.
//!
//! The Monte Carlo routines condition on the query rows and resample only
//! keys. Trial `i` draws from `rng.split(i)` and results are reduced in trial
//! order, so estimates do not depend on the rayon thread count.

use rayon::prelude::*;

use crate::attention::{
    attention_map, distribution_entropy, row_entropy, scale_factor, softmax_in_place,
    AttentionError, ScalePolicy,
};
use crate::numeric::{
    dot, integrate_adaptive, linear_fit, LinearFit, Matrix, MultivariateGaussian, NumericError,
    RngStream,
};

/// Largest exponent accepted by the closed-form moment path.
pub const MAX_EXPONENT: f64 = 700.0;

/// Default number of Monte Carlo trials per token count.
pub const DEFAULT_TRIALS: usize = 200;

/// Default token counts for an entropy-vs-`ln N` scan.
pub const DEFAULT_SCAN_SIZES: [usize; 7] = [64, 128, 256, 512, 1024, 2048, 4096];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TheoryError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("exponent {exponent} exceeds {MAX_EXPONENT}; moments would overflow")]
    Overflow { exponent: f64 },
    #[error("variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("at least 2 trials are required, got {0}")]
    TooFewTrials(usize),
    #[error("token count must be at least {min}, got {got}")]
    TooFewTokens { min: usize, got: usize },
    #[error("scan sizes must be strictly ascending")]
    UnsortedSizes,
}

/// Token law `X_j ~ N(μ^X, Σ^X)` and key projection `W^K` (d × d_r).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTokenModel {
    pub mu_x: Vec<f64>,
    pub sigma_x: Matrix,
    pub w_k: Matrix,
}

impl GaussianTokenModel {
    pub fn new(mu_x: Vec<f64>, sigma_x: Matrix, w_k: Matrix) -> Result<Self, TheoryError> {
        let d = mu_x.len();
        if sigma_x.shape() != (d, d) || w_k.rows() != d {
            return Err(TheoryError::ShapeMismatch(format!(
                "mu_x len {d}, sigma_x {:?}, w_k {:?}",
                sigma_x.shape(),
                w_k.shape()
            )));
        }
        crate::numeric::cholesky(&sigma_x)?;
        Ok(Self { mu_x, sigma_x, w_k })
    }

    /// `μ^X = 0`, `Σ^X = I_d`, `W^K = I_d`.
    pub fn isotropic(d: usize) -> Self {
        Self {
            mu_x: vec![0.0; d],
            sigma_x: Matrix::identity(d),
            w_k: Matrix::identity(d),
        }
    }

    pub fn key_dim(&self) -> usize {
        self.w_k.cols()
    }
}

/// `N(μ^K, Σ^K)` of projected tokens `K_j = X_j·W^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyDistribution {
    pub mu_k: Vec<f64>,
    pub sigma_k: Matrix,
}

impl KeyDistribution {
    pub fn to_gaussian(&self) -> Result<MultivariateGaussian, TheoryError> {
        Ok(MultivariateGaussian::new(
            self.mu_k.clone(),
            self.sigma_k.clone(),
        )?)
    }
}

/// `μ^K = μ^X·W^K`, `Σ^K = (W^K)ᵀ·Σ^X·W^K` (symmetrized).
pub fn key_distribution(model: &GaussianTokenModel) -> Result<KeyDistribution, TheoryError> {
    let mu_k = model.w_k.vec_mul(&model.mu_x)?;
    let raw = model
        .w_k
        .transposed_matmul(&model.sigma_x.matmul(&model.w_k)?)?;
    let sigma_k = Matrix::from_fn(raw.rows(), raw.cols(), |i, j| {
        0.5 * (raw[(i, j)] + raw[(j, i)])
    });
    crate::numeric::cholesky(&sigma_k)?;
    Ok(KeyDistribution { mu_k, sigma_k })
}

/// Mean and variance of the score `y = λ·q·K_jᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowMoments {
    pub mu: f64,
    pub sigma2: f64,
}

impl RowMoments {
    pub fn new(mu: f64, sigma2: f64) -> Result<Self, TheoryError> {
        if sigma2 < -1e-12 || !sigma2.is_finite() || !mu.is_finite() {
            return Err(TheoryError::NegativeVariance(sigma2));
        }
        Ok(Self {
            mu,
            sigma2: sigma2.max(0.0),
        })
    }
}

pub fn row_moments(
    q: &[f64],
    lambda: f64,
    kd: &KeyDistribution,
) -> Result<RowMoments, TheoryError> {
    if q.len() != kd.mu_k.len() {
        return Err(TheoryError::ShapeMismatch(format!(
            "query len {} vs key dim {}",
            q.len(),
            kd.mu_k.len()
        )));
    }
    let mu = lambda * dot(q, &kd.mu_k);
    let quad = dot(q, &kd.sigma_k.mul_vec(q)?);
    RowMoments::new(mu, lambda * lambda * quad)
}

/// Closed-form `(E[e^y], E[y·e^y])` for `y ~ N(μ, σ²)`.
pub fn gaussian_exp_moments(m: RowMoments) -> Result<(f64, f64), TheoryError> {
    if m.sigma2 < 0.0 {
        return Err(TheoryError::NegativeVariance(m.sigma2));
    }
    let exponent = m.mu + 0.5 * m.sigma2;
    if exponent > MAX_EXPONENT {
        return Err(TheoryError::Overflow { exponent });
    }
    let e = exponent.exp();
    Ok((e, (m.mu + m.sigma2) * e))
}

/// The same two expectations by adaptive Gauss–Kronrod quadrature of the
/// Gaussian density over `μ ± 12σ`. Independent of the closed form.
pub fn quadrature_exp_moments(m: RowMoments) -> Result<(f64, f64), TheoryError> {
    if m.sigma2 < 0.0 {
        return Err(TheoryError::NegativeVariance(m.sigma2));
    }
    if m.sigma2 == 0.0 {
        let e = m.mu.exp();
        return Ok((e, m.mu * e));
    }
    let sd = m.sigma2.sqrt();
    let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
    let density = |y: f64| norm * (-0.5 * ((y - m.mu) / sd).powi(2)).exp();
    let (a, b) = (m.mu - 12.0 * sd, m.mu + 12.0 * sd);
    let e = integrate_adaptive(|y| y.exp() * density(y), a, b, 1e-10, 0.0)?;
    // y·e^y changes sign at 0, so integrate the two halves separately when
    // the range straddles it to keep the relative tolerance meaningful.
    let f = |y: f64| y * y.exp() * density(y);
    let ye = if a < 0.0 && b > 0.0 {
        integrate_adaptive(f, a, 0.0, 1e-10, 0.0)? + integrate_adaptive(f, 0.0, b, 1e-10, 0.0)?
    } else {
        integrate_adaptive(f, a, b, 1e-10, 0.0)?
    };
    Ok((e, ye))
}

/// The three-term decomposition evaluated with population moments:
/// `ln N + ln E[e^y] − E[y·e^y]/E[e^y]`.
pub fn approx_entropy_from_moments(n_tokens: usize, m: RowMoments) -> Result<f64, TheoryError> {
    if n_tokens == 0 {
        return Err(TheoryError::TooFewTokens { min: 1, got: 0 });
    }
    let (e, ye) = gaussian_exp_moments(m)?;
    Ok((n_tokens as f64).ln() + e.ln() - ye / e)
}

/// `ln N − σ²/2`.
pub fn predicted_entropy(n_tokens: usize, m: RowMoments) -> f64 {
    (n_tokens as f64).ln() - 0.5 * m.sigma2
}

/// Terms of the empirical-mean entropy decomposition for one query row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionTerms {
    pub log_n: f64,
    /// `ln((1/N)·Σ e^{y_j})`
    pub log_mean_exp: f64,
    /// `Σ y_j e^{y_j} / Σ e^{y_j}`
    pub tilted_mean_ratio: f64,
    /// Row entropy of the attention map, computed independently.
    pub exact_entropy: f64,
}

impl DecompositionTerms {
    pub fn reconstructed(&self) -> f64 {
        self.log_n + self.log_mean_exp - self.tilted_mean_ratio
    }

    /// `|reconstructed − exact| / max(1, |exact|)`.
    pub fn relative_gap(&self) -> f64 {
        (self.reconstructed() - self.exact_entropy).abs() / self.exact_entropy.abs().max(1.0)
    }
}

/// Evaluates the decomposition terms with empirical means over `keys`.
///
/// Scores are shifted by `m = max_j y_j` before exponentiation:
/// `ln mean e^y = m + ln mean e^{y−m}` and the tilted ratio is unchanged by
/// the shift because the factor `e^{−m}` cancels between numerator and
/// denominator.
pub fn empirical_decomposition(
    q: &[f64],
    keys: &Matrix,
    lambda: f64,
) -> Result<DecompositionTerms, TheoryError> {
    let n = keys.rows();
    if n == 0 {
        return Err(TheoryError::TooFewTokens { min: 1, got: 0 });
    }
    if q.len() != keys.cols() {
        return Err(TheoryError::ShapeMismatch(format!(
            "query len {} vs key dim {}",
            q.len(),
            keys.cols()
        )));
    }
    let q_row = Matrix::from_vec(1, q.len(), q.to_vec())?;
    let map = attention_map(&q_row, keys, lambda)?;
    let exact_entropy = row_entropy(&map).mean;

    let ys: Vec<f64> = (0..n).map(|j| lambda * dot(q, keys.row(j))).collect();
    let max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum_exp = 0.0;
    let mut sum_y_exp = 0.0;
    for &y in &ys {
        let w = (y - max).exp();
        sum_exp += w;
        sum_y_exp += y * w;
    }
    let log_n = (n as f64).ln();
    Ok(DecompositionTerms {
        log_n,
        log_mean_exp: max + sum_exp.ln() - log_n,
        tilted_mean_ratio: sum_y_exp / sum_exp,
        exact_entropy,
    })
}

/// Mean and standard error over Monte Carlo trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
}

impl McEstimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = if xs.len() > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            mean,
            stderr: (var / n).sqrt(),
        }
    }
}

/// Mean attention entropy over the rows of `q` when `n_tokens` keys are
/// resampled from the model in each of `trials` trials.
pub fn monte_carlo_entropy(
    model: &GaussianTokenModel,
    q: &Matrix,
    n_tokens: usize,
    lambda: f64,
    trials: usize,
    rng: RngStream,
) -> Result<McEstimate, TheoryError> {
    let keys = key_distribution(model)?.to_gaussian()?;
    monte_carlo_with_keys(&keys, q, n_tokens, lambda, trials, rng)
}

fn monte_carlo_with_keys(
    keys: &MultivariateGaussian,
    q: &Matrix,
    n_tokens: usize,
    lambda: f64,
    trials: usize,
    rng: RngStream,
) -> Result<McEstimate, TheoryError> {
    if trials < 2 {
        return Err(TheoryError::TooFewTrials(trials));
    }
    if n_tokens == 0 {
        return Err(TheoryError::TooFewTokens { min: 1, got: 0 });
    }
    if q.cols() != keys.dim() {
        return Err(TheoryError::ShapeMismatch(format!(
            "query dim {} vs key dim {}",
            q.cols(),
            keys.dim()
        )));
    }
    let per_trial: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|t| -> Result<f64, TheoryError> {
            let k = keys.sample(n_tokens, rng.split(t))?;
            Ok(trial_mean_entropy(q, &k, lambda)?)
        })
        .collect::<Result<_, _>>()?;
    Ok(McEstimate::from_samples(&per_trial))
}

fn trial_mean_entropy(q: &Matrix, keys: &Matrix, lambda: f64) -> Result<f64, AttentionError> {
    // Row by row to avoid materializing the full map for many queries.
    let mut total = 0.0;
    let mut scores = vec![0.0; keys.rows()];
    for i in 0..q.rows() {
        let qi = q.row(i);
        for (s, j) in scores.iter_mut().zip(0..keys.rows()) {
            *s = lambda * dot(qi, keys.row(j));
        }
        softmax_in_place(&mut scores);
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(AttentionError::NonFiniteInput);
        }
        total += distribution_entropy(&scores);
    }
    Ok(total / q.rows() as f64)
}

/// One token count of an entropy-vs-`ln N` scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanRow {
    pub n: usize,
    pub ln_n: f64,
    pub lambda: f64,
    pub mean_entropy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyScan {
    pub policy: ScalePolicy,
    pub rows: Vec<ScanRow>,
    /// Least-squares fit of mean entropy against `ln N`.
    pub fit: LinearFit,
}

/// Runs [`monte_carlo_entropy`] at each size with `λ = scale_factor(policy,
/// N, d_key)` and fits mean entropy against `ln N`. Every size reuses the
/// same per-trial streams.
#[allow(clippy::too_many_arguments)]
pub fn entropy_logn_scan(
    model: &GaussianTokenModel,
    q: &Matrix,
    policy: ScalePolicy,
    d_key: usize,
    sizes: &[usize],
    trials: usize,
    rng: RngStream,
) -> Result<EntropyScan, TheoryError> {
    if let Some(&n) = sizes.iter().find(|&&n| n < 4) {
        return Err(TheoryError::TooFewTokens { min: 4, got: n });
    }
    if sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TheoryError::UnsortedSizes);
    }
    let keys = key_distribution(model)?.to_gaussian()?;
    let mut rows = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let lambda = scale_factor(policy, n, d_key)?.lambda;
        let est = monte_carlo_with_keys(&keys, q, n, lambda, trials, rng)?;
        rows.push(ScanRow {
            n,
            ln_n: (n as f64).ln(),
            lambda,
            mean_entropy: est.mean,
            stderr: est.stderr,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.ln_n).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_entropy).collect();
    let fit = linear_fit(&xs, &ys)?;
    Ok(EntropyScan { policy, rows, fit })
}

/// `rows` query vectors with independent uniformly random directions and
/// Euclidean norm `norm`.
pub fn random_queries(rows: usize, dim: usize, norm: f64, rng: RngStream) -> Matrix {
    let mut g = rng.generator();
    let mut q = Matrix::zeros(rows, dim);
    for i in 0..rows {
        let r = q.row_mut(i);
        loop {
            g.fill_standard_normal(r);
            let len = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            if len > 1e-12 {
                r.iter_mut().for_each(|v| *v *= norm / len);
                break;
            }
        }
    }
    q
}
