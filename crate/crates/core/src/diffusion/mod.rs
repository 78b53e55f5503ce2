//! Desk-scale DDPM with a self-attention denoiser.
//!
//! A model is trained at one resolution (token count `T`) with the fixed
//! scaling factor and can then be sampled at any resolution under either
//! [`PolicyMode`]. Sampling records the mean attention entropy of every
//! (timestep, layer) pair.

mod checkpoint;
mod data;
mod model;
mod sample;
mod schedule;
mod train;

pub use checkpoint::{
    decode as decode_checkpoint, encode as encode_checkpoint, CheckpointError, FloatWidth,
};
pub use data::TwoBlobGenerator;
pub use model::{
    backward, denoise_predict, forward, position_features, timestep_features, tokenize, untokenize,
    AttentionParams, Block, DenoiserConfig, DenoiserParams, EntropyTrace, ForwardCache, Linear,
    PolicyMode, TraceRecord,
};
pub use sample::{entropy_gaps, sample};
pub use schedule::{forward_noise, make_schedule, DiffusionSchedule};
pub use train::{loss_and_grad, smoothed_endpoints, train, TrainConfig, TrainState};

use crate::attention::AttentionError;
use crate::numeric::NumericError;

#[derive(Debug, thiserror::Error)]
pub enum DiffusionError {
    #[error("invalid schedule range: {0}")]
    InvalidRange(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("timestep {t} out of range for a {steps}-step schedule")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("{height}x{width} is not divisible into {patch}x{patch} patches")]
    IncompatibleResolution {
        height: usize,
        width: usize,
        patch: usize,
    },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("non-finite loss {loss}")]
    NonFiniteLoss { loss: f64 },
    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize, state: Box<TrainState> },
    #[error("non-finite denoiser input or activation")]
    NonFiniteInput,
    #[error("non-finite parameters")]
    NonFiniteParams,
    #[error(transparent)]
    Attention(#[from] AttentionError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
}
