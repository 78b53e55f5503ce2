//! Scaled dot-product attention with per-row entropy instrumentation and the
//! two scaling-factor policies.
//!
//! The scaling factor multiplies `Q·Kᵀ` before the row softmax. The fixed
//! policy uses `1/√d_key`; the entropy-preserving policy uses
//! `√(log_T(N) / d_key)`, which coincides with the fixed factor at `N = T`
//! and grows with `N` so that the `ln N` drift of the attention entropy is
//! damped when inference runs at a token count different from training.

use std::fmt;

use crate::numeric::{Matrix, NumericError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in attention input")]
    NonFiniteInput,
    #[error("training token count must be at least 2, got {0}")]
    InvalidTrainTokens(usize),
    #[error("key dimension must be at least 1")]
    InvalidKeyDim,
    #[error("scaling factor must be finite and non-negative, got {0}")]
    InvalidScale(f64),
    #[error("lambda grid must be sorted ascending")]
    UnsortedLambdas,
}

impl From<NumericError> for AttentionError {
    fn from(e: NumericError) -> Self {
        match e {
            NumericError::NonFinite => AttentionError::NonFiniteInput,
            other => AttentionError::ShapeMismatch(other.to_string()),
        }
    }
}

/// How the attention logits are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScalePolicy {
    /// `λ = 1/√d_key`.
    Fixed,
    /// `λ = √(log_T(N) / d_key)` with `T` the training token count.
    EntropyPreserving { train_tokens: usize },
}

impl ScalePolicy {
    pub fn entropy_preserving(train_tokens: usize) -> Result<Self, AttentionError> {
        if train_tokens < 2 {
            return Err(AttentionError::InvalidTrainTokens(train_tokens));
        }
        Ok(ScalePolicy::EntropyPreserving { train_tokens })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScalePolicy::Fixed => "fixed",
            ScalePolicy::EntropyPreserving { .. } => "entropy_preserving",
        }
    }
}

impl fmt::Display for ScalePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalePolicy::Fixed => f.write_str("fixed"),
            ScalePolicy::EntropyPreserving { train_tokens } => {
                write!(f, "entropy_preserving(T={train_tokens})")
            }
        }
    }
}

/// A resolved scaling factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleFactor {
    pub lambda: f64,
    /// Set when the entropy-preserving policy was asked for fewer than two
    /// tokens and fell back to the fixed factor.
    pub degenerate_fallback: bool,
}

/// Resolves `λ` for `n_tokens` tokens and key dimension `d_key`.
///
/// Both branches evaluate `sqrt(ratio) / sqrt(d_key)`, with `ratio = 1` for the
/// fixed policy and `ln N / ln T` otherwise, so `N = T` reproduces the fixed
/// factor bit for bit.
pub fn scale_factor(
    policy: ScalePolicy,
    n_tokens: usize,
    d_key: usize,
) -> Result<ScaleFactor, AttentionError> {
    if d_key == 0 {
        return Err(AttentionError::InvalidKeyDim);
    }
    let d = d_key as f64;
    let fixed = || 1.0 / d.sqrt();
    match policy {
        ScalePolicy::Fixed => Ok(ScaleFactor {
            lambda: fixed(),
            degenerate_fallback: false,
        }),
        ScalePolicy::EntropyPreserving { train_tokens } => {
            if train_tokens < 2 {
                return Err(AttentionError::InvalidTrainTokens(train_tokens));
            }
            if n_tokens < 2 {
                return Ok(ScaleFactor {
                    lambda: fixed(),
                    degenerate_fallback: true,
                });
            }
            let ratio = (n_tokens as f64).ln() / (train_tokens as f64).ln();
            Ok(ScaleFactor {
                lambda: ratio.sqrt() / d.sqrt(),
                degenerate_fallback: false,
            })
        }
    }
}

/// Row-stochastic attention weights. Rows index queries, columns keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub weights: Matrix,
    pub lambda_used: f64,
    /// Number of keys attended over (row length).
    pub n_tokens: usize,
}

/// Per-row attention entropies in nats.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfile {
    pub per_row: Vec<f64>,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl EntropyProfile {
    pub fn from_rows(per_row: Vec<f64>) -> Self {
        let n = per_row.len().max(1) as f64;
        let mean = per_row.iter().sum::<f64>() / n;
        let min = per_row.iter().copied().fold(f64::INFINITY, f64::min);
        let max = per_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            per_row,
            mean,
            min,
            max,
        }
    }
}

/// In-place max-shifted softmax of one row. Returns `(max, Σ exp(x − max))`.
pub fn softmax_in_place(row: &mut [f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    (max, sum)
}

/// Shannon entropy `−Σ p ln p` with `0·ln 0 = 0`.
pub fn distribution_entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * v.ln())
        .sum::<f64>()
}

fn check_scale(lambda: f64) -> Result<(), AttentionError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(AttentionError::InvalidScale(lambda));
    }
    Ok(())
}

/// `softmax(λ·Q·Kᵀ)` row by row.
pub fn attention_map(q: &Matrix, k: &Matrix, lambda: f64) -> Result<AttentionMap, AttentionError> {
    check_scale(lambda)?;
    if q.cols() != k.cols() {
        return Err(AttentionError::ShapeMismatch(format!(
            "query dim {} != key dim {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() == 0 {
        return Err(AttentionError::ShapeMismatch("no keys".into()));
    }
    if !q.is_finite() || !k.is_finite() {
        return Err(AttentionError::NonFiniteInput);
    }
    let mut weights = q.matmul_transposed(k)?;
    for i in 0..weights.rows() {
        let row = weights.row_mut(i);
        for v in row.iter_mut() {
            *v *= lambda;
        }
        softmax_in_place(row);
    }
    if !weights.is_finite() {
        return Err(AttentionError::NonFiniteInput);
    }
    Ok(AttentionMap {
        weights,
        lambda_used: lambda,
        n_tokens: k.rows(),
    })
}

/// Scaled dot-product attention: returns `A·V` and the map `A`.
pub fn attend(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    lambda: f64,
) -> Result<(Matrix, AttentionMap), AttentionError> {
    if v.rows() != k.rows() {
        return Err(AttentionError::ShapeMismatch(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    if !v.is_finite() {
        return Err(AttentionError::NonFiniteInput);
    }
    let map = attention_map(q, k, lambda)?;
    let out = map.weights.matmul(v)?;
    Ok((out, map))
}

pub fn row_entropy(map: &AttentionMap) -> EntropyProfile {
    let w = &map.weights;
    EntropyProfile::from_rows(
        (0..w.rows())
            .map(|i| distribution_entropy(w.row(i)))
            .collect(),
    )
}

/// Mean row entropy of `softmax(λ·Q·Kᵀ)` for each `λ` of an ascending grid.
pub fn entropy_vs_lambda(
    q: &Matrix,
    k: &Matrix,
    lambdas: &[f64],
) -> Result<Vec<f64>, AttentionError> {
    for l in lambdas {
        check_scale(*l)?;
    }
    if lambdas.windows(2).any(|w| w[1] < w[0]) {
        return Err(AttentionError::UnsortedLambdas);
    }
    lambdas
        .iter()
        .map(|&l| attention_map(q, k, l).map(|m| row_entropy(&m).mean))
        .collect()
}
