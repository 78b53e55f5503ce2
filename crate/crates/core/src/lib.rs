//! Attention entropy analysis and entropy-preserving attention scaling.
//!
//! - [`numeric`]: matrices, reproducible random streams, Gaussian sampling,
//!   least squares, numerical oracles.
//! - [`attention`]: scaled dot-product attention, row entropies and the
//!   [`attention::ScalePolicy`] switch.
//! - [`theory`]: the Gaussian-token entropy law and its Monte Carlo checks.
//! - [`diffusion`]: a desk-scale DDPM whose self-attention layers can swap
//!   scaling policies at inference time.

pub mod attention;
pub mod diffusion;
pub mod numeric;
pub mod theory;
