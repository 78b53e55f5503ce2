use super::model::{denoise_predict, EntropyTrace, PolicyMode};
use super::train::TrainState;
use super::DiffusionError;
use crate::numeric::{Matrix, RngStream};

/// DDPM ancestral sampling from pure noise with `σ_t² = β_t`.
///
/// Every denoiser call logs one trace record per attention layer, so the
/// returned trace holds `steps × layers` records ordered by descending
/// timestep, then layer.
pub fn sample(
    state: &TrainState,
    height: usize,
    width: usize,
    mode: PolicyMode,
    rng: RngStream,
) -> Result<(Matrix, EntropyTrace), DiffusionError> {
    state.params.config.token_count(height, width)?;
    let sched = &state.schedule;
    let mut gen = rng.generator();
    let mut x = Matrix::zeros(height, width);
    gen.fill_standard_normal(x.as_mut_slice());
    let mut trace = EntropyTrace::new();
    for t in (0..sched.steps()).rev() {
        let eps_hat = denoise_predict(&state.params, &x, t, mode, Some(&mut trace))?;
        let beta = sched.betas[t];
        let coef = beta / (1.0 - sched.alpha_bars[t]).sqrt();
        let inv_sqrt_alpha = 1.0 / sched.alphas[t].sqrt();
        let sigma = beta.sqrt();
        for (xv, e) in x.as_mut_slice().iter_mut().zip(eps_hat.as_slice()) {
            let mean = inv_sqrt_alpha * (*xv - coef * e);
            *xv = if t > 0 {
                mean + sigma * gen.standard_normal()
            } else {
                mean
            };
        }
        if !x.is_finite() {
            return Err(DiffusionError::NonFiniteInput);
        }
    }
    Ok((x, trace))
}

/// Absolute entropy gap of each `infer` record to the reference record at
/// the same (timestep, layer). Records without a reference are skipped.
pub fn entropy_gaps(infer: &EntropyTrace, reference: &EntropyTrace) -> Vec<f64> {
    infer
        .records
        .iter()
        .filter_map(|r| {
            reference
                .get(r.timestep, r.layer_id)
                .map(|base| (r.mean_entropy - base.mean_entropy).abs())
        })
        .collect()
}
