//! AIPW contrast between the estimated optimal rule and the all-control rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nuisance::{ContrastInputs, Nuisance};
use crate::types::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContrastBatchSummary {
    pub k: usize,
    pub d_bar: f64,
    pub sigma_hat: f64,
    pub n_used: usize,
    /// The raw standard deviation estimate was below the floor.
    pub floored: bool,
}

/// `D(O; μ, θ, p)` for one observation given its nuisance inputs.
///
/// When the rule assigns control both value estimates coincide and the
/// contrast is exactly zero.
pub fn contrast_from_inputs(o: &Observation, n: &ContrastInputs) -> f64 {
    if n.rule == 0 {
        return 0.0;
    }
    let p = n.propensity;
    let p_a = if o.a == 1 { p } else { 1.0 - p };
    let follows_rule = f64::from(o.a == 1);
    let treat_value = o.y * follows_rule / p_a - (follows_rule / p_a - 1.0) * n.mean1;
    let is_control = f64::from(o.a == 0);
    let control_value = o.y * is_control / (1.0 - p) - (is_control / (1.0 - p) - 1.0) * n.mean0;
    treat_value - control_value
}

pub fn contrast_d<N: Nuisance + ?Sized>(o: &Observation, model: &N) -> f64 {
    contrast_from_inputs(o, &model.inputs(&o.x))
}

/// Contrasts for many observations, in input order.
pub fn contrasts<N: Nuisance + ?Sized>(obs: &[Observation], model: &N) -> Vec<f64> {
    obs.par_chunks(CHUNK)
        .flat_map_iter(|chunk| {
            let xs: Vec<&[f64]> = chunk.iter().map(|o| o.x.as_slice()).collect();
            let inputs = model.inputs_many(&xs);
            chunk.iter().zip(inputs).map(|(o, n)| contrast_from_inputs(o, &n)).collect::<Vec<_>>()
        })
        .collect()
}

const CHUNK: usize = 512;

/// Contrasts at the observations the nuisances were estimated from, using
/// [`Nuisance::history_inputs`].
pub fn history_contrasts<N: Nuisance + ?Sized>(history: &[Observation], model: &N) -> Vec<f64> {
    history.iter().zip(model.history_inputs(history)).map(|(o, n)| contrast_from_inputs(o, &n)).collect()
}

pub fn batch_mean_d<N: Nuisance + ?Sized>(batch: &[Observation], model: &N, m: usize) -> Result<f64> {
    if batch.len() != m || m == 0 {
        return Err(Error::BatchSize { expected: m, got: batch.len() });
    }
    Ok(contrasts(batch, model).iter().sum::<f64>() / m as f64)
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// `sqrt(s²/m)` where `s²` is the sample variance of the contrast over
/// `history`, before any floor is applied. Fitted models contribute
/// out-of-bag predictions, since in-sample forest fits shrink the residual
/// terms of the contrast and with them `s²`.
pub fn raw_conditional_sd<N: Nuisance + ?Sized>(history: &[Observation], model: &N, m: usize) -> Result<f64> {
    if history.len() < 2 {
        return Err(Error::EmptyData("conditional sd needs at least two observations"));
    }
    if m == 0 {
        return Err(Error::InvalidInput("batch size must be positive".into()));
    }
    Ok((sample_variance(&history_contrasts(history, model)) / m as f64).sqrt())
}

pub fn conditional_sd<N: Nuisance + ?Sized>(
    history: &[Observation],
    model: &N,
    m: usize,
    sigma_floor: f64,
) -> Result<f64> {
    Ok(raw_conditional_sd(history, model, m)?.max(sigma_floor))
}

/// Inverse probability weighted value of `rule` with a constant propensity.
pub fn ipw_value<R: Fn(&[f64]) -> u8>(data: &[Observation], rule: R, p_hat: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyData("IPW value needs observations"));
    }
    let total: f64 = data
        .iter()
        .filter(|o| rule(&o.x) == o.a)
        .map(|o| o.y / if o.a == 1 { p_hat } else { 1.0 - p_hat })
        .sum();
    Ok(total / data.len() as f64)
}
