//! Generic SIR filter over plain state vectors with plug-in densities.

use rand::{Rng, RngCore};

use super::resample::{
    iid_uniforms, invert_continuous, multinomial_indices, projection_order, stratified_uniforms,
    Resampler,
};
use crate::error::{Error, Result};

/// State-space model with a sampled transition and a measurement log-density.
pub trait StateSpaceModel {
    fn dim(&self) -> usize;

    /// Draws the next state given the previous one.
    fn transition(&self, step: usize, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>>;

    /// `log p(y | state)`.
    fn log_density(&self, step: usize, state: &[f64], y: f64) -> Result<f64>;

    /// Scalar used to order particles for continuous resampling.
    fn project(&self, state: &[f64]) -> f64 {
        state[0]
    }
}

/// Weighted ensemble after the measurement update of one step, before
/// resampling.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterStep {
    /// `[K * dim]`, row-major.
    pub states: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub norm_weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub trajectory: Vec<FilterStep>,
    pub step_logliks: Vec<f64>,
    pub total_loglik: f64,
}

/// Runs transition, weighting and resampling over `observations`, starting
/// from the `[K * dim]` ensemble `init`. The total log-likelihood is the sum of
/// per-step log mean weights.
pub fn filter_sequence<M: StateSpaceModel + ?Sized, R: Rng>(
    model: &M,
    resampler: Resampler,
    init: &[f64],
    observations: &[f64],
    rng: &mut R,
) -> Result<FilterOutput> {
    let d = model.dim();
    if d == 0 || init.is_empty() || !init.len().is_multiple_of(d) {
        return Err(Error::invalid(
            "filter_sequence",
            format!("initial ensemble of {} values for dim {d}", init.len()),
        ));
    }
    if observations.is_empty() {
        return Err(Error::invalid("filter_sequence", "no observations"));
    }
    let k = init.len() / d;
    let mut states = init.to_vec();
    let mut trajectory = Vec::with_capacity(observations.len());
    let mut step_logliks = Vec::with_capacity(observations.len());
    for (t, &y) in observations.iter().enumerate() {
        let wrap = |e: Error| Error::FilterStep {
            step: t,
            source: Box::new(e),
        };
        let mut next = Vec::with_capacity(k * d);
        for s in states.chunks(d) {
            let n = model.transition(t, s, rng).map_err(wrap)?;
            if n.len() != d {
                return Err(wrap(Error::ShapeMismatch {
                    op: "transition",
                    lhs: vec![n.len()],
                    rhs: vec![d],
                }));
            }
            next.extend(n);
        }
        let log_weights = next
            .chunks(d)
            .map(|s| model.log_density(t, s, y))
            .collect::<Result<Vec<f64>>>()
            .map_err(wrap)?;
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(wrap(Error::NonFinite("log-density".into())));
        }
        let norm_weights = super::normalize_log_weights(&log_weights);
        if norm_weights.iter().any(|w| !w.is_finite()) {
            return Err(wrap(Error::NonFinite(
                "all particle weights vanished".into(),
            )));
        }
        step_logliks.push(super::step_loglik(&log_weights));
        states = resample_states(model, resampler, &next, &norm_weights, d, rng).map_err(wrap)?;
        trajectory.push(FilterStep {
            states: next,
            log_weights,
            norm_weights,
        });
    }
    let total_loglik = step_logliks.iter().sum();
    Ok(FilterOutput {
        trajectory,
        step_logliks,
        total_loglik,
    })
}

fn resample_states<M: StateSpaceModel + ?Sized, R: Rng>(
    model: &M,
    resampler: Resampler,
    states: &[f64],
    weights: &[f64],
    d: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = weights.len();
    let mut out = Vec::with_capacity(k * d);
    match resampler {
        Resampler::Multinomial => {
            let u = iid_uniforms(k, rng);
            for j in multinomial_indices(weights, &u) {
                out.extend_from_slice(&states[j * d..(j + 1) * d]);
            }
        }
        Resampler::Continuous => {
            let proj: Vec<f64> = states.chunks(d).map(|s| model.project(s)).collect();
            let order = projection_order(&proj)?;
            let sorted: Vec<f64> = order.iter().map(|&j| weights[j]).collect();
            let u = stratified_uniforms(k, rng);
            for pick in invert_continuous(&sorted, &u)? {
                let lo = &states[order[pick.lower()] * d..][..d];
                let hi = &states[order[pick.upper()] * d..][..d];
                let gamma = pick.gamma();
                out.extend(lo.iter().zip(hi).map(|(a, b)| a + gamma * (b - a)));
            }
        }
    }
    Ok(out)
}
