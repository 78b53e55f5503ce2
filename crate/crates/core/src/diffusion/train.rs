use rayon::prelude::*;

use super::data::TwoBlobGenerator;
use super::model::{backward, forward, DenoiserConfig, DenoiserParams, PolicyMode};
use super::schedule::{forward_noise, make_schedule, DiffusionSchedule};
use super::DiffusionError;
use crate::numeric::{Matrix, RngStream};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub denoiser: DenoiserConfig,
    /// Training images are `image_size × image_size`.
    pub image_size: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            denoiser: DenoiserConfig::default(),
            image_size: 8,
            diffusion_steps: 200,
            beta_start: 1e-4,
            beta_end: 0.04,
            steps: 500,
            batch_size: 16,
            learning_rate: 0.02,
            momentum: 0.9,
        }
    }
}

impl TrainConfig {
    pub fn train_tokens(&self) -> Result<usize, DiffusionError> {
        self.denoiser.token_count(self.image_size, self.image_size)
    }

    pub fn validate(&self) -> Result<(), DiffusionError> {
        self.denoiser.validate()?;
        if self.train_tokens()? < 2 {
            return Err(DiffusionError::InvalidConfig(
                "training resolution must give at least 2 tokens".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(DiffusionError::EmptyBatch);
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(DiffusionError::InvalidConfig(
                "learning_rate must be >= 0".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(DiffusionError::InvalidConfig(
                "momentum must be in [0, 1)".into(),
            ));
        }
        make_schedule(self.diffusion_steps, self.beta_start, self.beta_end)?;
        Ok(())
    }
}

/// Parameters plus optimizer state. `train_tokens` is fixed at creation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: DenoiserParams,
    pub schedule: DiffusionSchedule,
    pub step: usize,
    train_tokens: usize,
    pub velocity: DenoiserParams,
    pub loss_history: Vec<f64>,
}

impl TrainState {
    pub fn new(
        params: DenoiserParams,
        schedule: DiffusionSchedule,
        step: usize,
        train_tokens: usize,
    ) -> Self {
        let velocity = params.zeros_like();
        Self {
            params,
            schedule,
            step,
            train_tokens,
            velocity,
            loss_history: Vec::new(),
        }
    }

    pub fn train_tokens(&self) -> usize {
        self.train_tokens
    }
}

/// ε-prediction MSE over a batch with `(t, ε)` drawn from `rng`, and its
/// gradient. The loss is the mean of `(ε − ε̂)²` over all pixels of all
/// examples.
pub fn loss_and_grad(
    params: &DenoiserParams,
    batch: &[Matrix],
    rng: RngStream,
    sched: &DiffusionSchedule,
    mode: PolicyMode,
) -> Result<(f64, DenoiserParams), DiffusionError> {
    if batch.is_empty() {
        return Err(DiffusionError::EmptyBatch);
    }
    let mut gen = rng.generator();
    let draws: Vec<(usize, Matrix)> = batch
        .iter()
        .map(|x0| {
            let t = gen.below(sched.steps());
            let mut eps = Matrix::zeros(x0.rows(), x0.cols());
            gen.fill_standard_normal(eps.as_mut_slice());
            (t, eps)
        })
        .collect();
    let total_pixels: usize = batch.iter().map(|x| x.as_slice().len()).sum();
    let norm = 1.0 / total_pixels as f64;

    let per_example: Vec<(f64, DenoiserParams)> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(x0, (t, eps))| -> Result<_, DiffusionError> {
            let x_t = forward_noise(x0, *t, eps, sched)?;
            let (eps_hat, cache) = forward(params, &x_t, *t, mode, None)?;
            let diff = eps_hat.sub(eps)?;
            let loss = diff.frobenius_sq() * norm;
            let d_out = diff.scale(2.0 * norm);
            let mut grad = params.zeros_like();
            backward(params, &cache, &d_out, &mut grad)?;
            Ok((loss, grad))
        })
        .collect::<Result<_, _>>()?;

    let mut loss = 0.0;
    let mut grad = params.zeros_like();
    for (l, g) in &per_example {
        loss += l;
        grad.axpy(1.0, g);
    }
    if !loss.is_finite() {
        return Err(DiffusionError::NonFiniteLoss { loss });
    }
    Ok((loss, grad))
}

/// Momentum SGD on two-blob images at the configured resolution. Training
/// always uses the fixed scaling factor.
pub fn train(
    config: &TrainConfig,
    data: &TwoBlobGenerator,
    rng: RngStream,
) -> Result<TrainState, DiffusionError> {
    config.validate()?;
    if (data.height, data.width) != (config.image_size, config.image_size) {
        return Err(DiffusionError::InvalidConfig(format!(
            "data generator is {}x{} but image_size is {}",
            data.height, data.width, config.image_size
        )));
    }
    let train_tokens = config.train_tokens()?;
    let schedule = make_schedule(config.diffusion_steps, config.beta_start, config.beta_end)?;
    let params = DenoiserParams::init(config.denoiser, train_tokens, rng.split(0))?;
    let mut state = TrainState::new(params, schedule, 0, train_tokens);

    let data_rng = rng.split(1);
    let noise_rng = rng.split(2);
    for step in 0..config.steps {
        let batch = data.batch(
            config.batch_size,
            &mut data_rng.split(step as u64).generator(),
        );
        let result = loss_and_grad(
            &state.params,
            &batch,
            noise_rng.split(step as u64),
            &state.schedule,
            PolicyMode::Fixed,
        );
        let (loss, grad) = match result {
            Ok(v) => v,
            Err(DiffusionError::NonFiniteLoss { .. } | DiffusionError::NonFiniteInput) => {
                return Err(DiffusionError::TrainingDiverged {
                    step,
                    state: Box::new(state),
                })
            }
            Err(e) => return Err(e),
        };
        let mut velocity = std::mem::replace(&mut state.velocity, state.params.zeros_like());
        velocity.for_each_tensor_mut(|_, m| {
            m.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v *= config.momentum)
        });
        velocity.axpy(1.0, &grad);
        state.params.axpy(-config.learning_rate, &velocity);
        state.velocity = velocity;
        state.loss_history.push(loss);
        state.step = step + 1;
    }
    Ok(state)
}

/// Mean of the first and last `window` entries of a loss curve.
pub fn smoothed_endpoints(history: &[f64], window: usize) -> Option<(f64, f64)> {
    if history.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(history.len());
    let head = history[..w].iter().sum::<f64>() / w as f64;
    let tail = history[history.len() - w..].iter().sum::<f64>() / w as f64;
    Some((head, tail))
}
