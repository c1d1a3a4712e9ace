//! Particle-filter LSTM layer.
//!
//! The batched graph version lives in [`layer`]; this module also offers the
//! same steps on a single plain-valued [`ParticleEnsemble`], which is what the
//! CLI snapshots and most property tests use.

pub mod filter;
pub mod heads;
pub mod layer;
pub mod resample;

use rand::Rng;

pub use filter::{filter_sequence, FilterOutput, FilterStep, StateSpaceModel};
pub use heads::{NoiseHead, OutHead, WeightHead, LOG_STD_MAX, LOG_STD_MIN, LOG_WEIGHT_BOUND};
pub use layer::{CpfLstm, Particles};
pub use resample::{
    ecdf_coefficients, ecdf_sup_distance, fixed_stratified_uniforms, iid_uniforms,
    invert_continuous, multinomial_indices, projection_order, stratified_uniforms, Pick, Resampler,
    WeightedEcdf,
};

use crate::error::{Error, Result};
use crate::lstm::LstmParams;
use crate::params::ParamStore;
use crate::tensor::{Graph, Tensor};

/// `K` weighted `(h, c)` particles, stored row-major as `[K, m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub hidden: Tensor,
    pub cell: Tensor,
    pub log_weights: Vec<f64>,
    pub norm_weights: Vec<f64>,
}

impl ParticleEnsemble {
    /// `k` copies of the zero state with uniform weights.
    pub fn zeros(k: usize, m: usize) -> Self {
        Self::from_states(Tensor::zeros(&[k, m]), Tensor::zeros(&[k, m])).expect("shape")
    }

    pub fn from_states(hidden: Tensor, cell: Tensor) -> Result<Self> {
        if hidden.rank() != 2 || hidden.shape() != cell.shape() || hidden.rows() == 0 {
            return Err(Error::ShapeMismatch {
                op: "ensemble",
                lhs: hidden.shape().to_vec(),
                rhs: cell.shape().to_vec(),
            });
        }
        let k = hidden.rows();
        Ok(ParticleEnsemble {
            hidden,
            cell,
            log_weights: vec![-(k as f64).ln(); k],
            norm_weights: vec![1.0 / k as f64; k],
        })
    }

    pub fn len(&self) -> usize {
        self.norm_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norm_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.hidden.row_len()
    }

    fn with_states(&self, hidden: Tensor, cell: Tensor) -> Self {
        ParticleEnsemble {
            hidden,
            cell,
            log_weights: self.log_weights.clone(),
            norm_weights: self.norm_weights.clone(),
        }
    }

    fn reset_weights(mut self) -> Self {
        let k = self.len();
        self.log_weights = vec![-(k as f64).ln(); k];
        self.norm_weights = vec![1.0 / k as f64; k];
        self
    }
}

/// One draw `exp(s) * ζ` of the transition noise for a single particle.
pub fn sample_noise<R: Rng + ?Sized>(
    store: &ParamStore,
    head: &NoiseHead,
    h_prev: &[f64],
    x: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let h = g.leaf(Tensor::matrix(1, h_prev.len(), h_prev.to_vec())?);
    let x = g.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
    let eps = head.sample(&mut g, &p, h, x, rng)?;
    Ok(g.value(eps).data().to_vec())
}

/// Advances every particle through the LSTM; with a noise head the hidden
/// outputs are perturbed, cells never are. Weights are untouched.
pub fn transition_update<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    x: &[f64],
    store: &ParamStore,
    lstm: &LstmParams,
    noise: Option<&NoiseHead>,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    let k = ensemble.len();
    if x.len() != lstm.input {
        return Err(Error::ShapeMismatch {
            op: "transition_update",
            lhs: vec![x.len()],
            rhs: vec![lstm.input],
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let h = g.leaf(ensemble.hidden.clone());
    let c = g.leaf(ensemble.cell.clone());
    let xs = g.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
    let xr = layer::expand_rows(&mut g, xs, k)?;
    let (mut h_next, c_next) = lstm.step(&mut g, &p, h, c, xr)?;
    if let Some(head) = noise {
        let eps = head.sample(&mut g, &p, h, xr, rng)?;
        h_next = g.add(h_next, eps)?;
    }
    Ok(ensemble.with_states(g.value(h_next).clone(), g.value(c_next).clone()))
}

/// Reweights the particles against one observation.
pub fn measurement_update(
    ensemble: &ParticleEnsemble,
    y: f64,
    store: &ParamStore,
    head: &WeightHead,
) -> Result<ParticleEnsemble> {
    if !y.is_finite() {
        return Err(Error::NonFinite("observation".into()));
    }
    let k = ensemble.len();
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let h = g.leaf(ensemble.hidden.clone());
    let ycol = g.leaf(Tensor::matrix(k, 1, vec![y; k])?);
    let lw = head.log_weight(&mut g, &p, h, ycol)?;
    let log_weights = g.value(lw).data().to_vec();
    let mut out = ensemble.clone();
    out.norm_weights = normalize_log_weights(&log_weights);
    out.log_weights = log_weights;
    Ok(out)
}

/// Softmax of a plain slice.
pub fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let lse = crate::tensor::lse(log_weights);
    log_weights.iter().map(|v| (v - lse).exp()).collect()
}

/// `log((1/K) Σ exp(log_weights))`.
pub fn step_loglik(log_weights: &[f64]) -> f64 {
    crate::tensor::lse(log_weights) - (log_weights.len() as f64).ln()
}

/// Multinomial draw of `K` particles proportional to the normalized weights.
pub fn multinomial_resample<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    rng: &mut R,
) -> ParticleEnsemble {
    let u = iid_uniforms(ensemble.len(), rng);
    let idx = resample::multinomial_indices(&ensemble.norm_weights, &u);
    let hidden = gather(&ensemble.hidden, &idx);
    let cell = gather(&ensemble.cell, &idx);
    ensemble.with_states(hidden, cell).reset_weights()
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let data = idx.iter().flat_map(|&i| t.row(i).iter().copied()).collect();
    Tensor::matrix(idx.len(), t.row_len(), data).expect("shape")
}

/// Continuous resampling: sort by the `out_head` projection of `h`, invert
/// the piecewise-linear ECDF at `uniforms`, interpolate `(h, c)`.
pub fn continuous_resample(
    ensemble: &ParticleEnsemble,
    store: &ParamStore,
    out_head: &OutHead,
    uniforms: &[f64],
) -> Result<ParticleEnsemble> {
    let k = ensemble.len();
    if uniforms.len() != k {
        return Err(Error::ShapeMismatch {
            op: "continuous_resample",
            lhs: vec![uniforms.len()],
            rhs: vec![k],
        });
    }
    if let Some(u) = uniforms.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(Error::invalid(
            "continuous_resample",
            format!("uniform {u} outside (0, 1)"),
        ));
    }
    let proj = out_head.project(store, ensemble.hidden.data());
    let order = resample::projection_order(&proj)?;
    let sorted: Vec<f64> = order.iter().map(|&j| ensemble.norm_weights[j]).collect();
    let picks = resample::invert_continuous(&sorted, uniforms)?;
    let lerp = |t: &Tensor| {
        let mut data = Vec::with_capacity(t.len());
        for pick in &picks {
            let (lo, hi, gamma) = (
                t.row(order[pick.lower()]),
                t.row(order[pick.upper()]),
                pick.gamma(),
            );
            data.extend(lo.iter().zip(hi).map(|(a, b)| a + gamma * (b - a)));
        }
        Tensor::matrix(picks.len(), t.row_len(), data).expect("shape")
    };
    Ok(ensemble
        .with_states(lerp(&ensemble.hidden), lerp(&ensemble.cell))
        .reset_weights())
}

/// `out_head` applied to the particle-mean hidden state.
pub fn predict_mean(ensemble: &ParticleEnsemble, store: &ParamStore, out_head: &OutHead) -> f64 {
    let (k, m) = (ensemble.len(), ensemble.dim());
    let mut mean = vec![0.0; m];
    for i in 0..k {
        for (acc, v) in mean.iter_mut().zip(ensemble.hidden.row(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= k as f64);
    out_head.project(store, &mean)[0]
}
