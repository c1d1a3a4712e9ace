//! Exact likelihood of the scalar linear-Gaussian state-space model, plus the
//! same model as a plug-in for the generic particle filter.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::cpf::StateSpaceModel;
use crate::error::{Error, Result};

/// `h_t = a h_{t-1} + σ_w w_t`, `y_t = h_t + σ_v v_t`, `h_0 ~ N(m0, P0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussian {
    pub a: f64,
    pub sigma_w: f64,
    pub sigma_v: f64,
    pub prior_mean: f64,
    pub prior_var: f64,
}

impl LinearGaussian {
    fn validate(&self) -> Result<()> {
        if !(self.sigma_v > 0.0) || !(self.prior_var > 0.0) || !(self.sigma_w >= 0.0) {
            return Err(Error::invalid(
                "kalman",
                format!(
                    "variances must be positive (sigma_v = {}, prior_var = {}, sigma_w = {})",
                    self.sigma_v, self.prior_var, self.sigma_w
                ),
            ));
        }
        Ok(())
    }

    /// Stationary prior variance `σ_w² / (1 - a²)`.
    pub fn stationary_var(a: f64, sigma_w: f64) -> f64 {
        sigma_w * sigma_w / (1.0 - a * a)
    }

    /// `K` draws from the prior, as a filter's initial ensemble.
    pub fn sample_prior<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Vec<f64> {
        let sd = self.prior_var.sqrt();
        (0..k)
            .map(|_| self.prior_mean + sd * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (x - mean).powi(2) / var)
}

/// Marginal log-likelihood by the Kalman recursion. The transition is
/// applied before each observation, including the first.
pub fn kalman_loglik(model: &LinearGaussian, observations: &[f64]) -> Result<f64> {
    model.validate()?;
    let (mut m, mut p) = (model.prior_mean, model.prior_var);
    let (q, r) = (model.sigma_w * model.sigma_w, model.sigma_v * model.sigma_v);
    let mut total = 0.0;
    for &y in observations {
        m *= model.a;
        p = model.a * model.a * p + q;
        let s = p + r;
        total += log_normal(y, m, s);
        let gain = p / s;
        m += gain * (y - m);
        p *= 1.0 - gain;
    }
    Ok(total)
}

impl StateSpaceModel for LinearGaussian {
    fn dim(&self) -> usize {
        1
    }

    fn transition(&self, _: usize, state: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let w: f64 = rng.sample(StandardNormal);
        Ok(vec![self.a * state[0] + self.sigma_w * w])
    }

    fn log_density(&self, _: usize, state: &[f64], y: f64) -> Result<f64> {
        Ok(log_normal(y, state[0], self.sigma_v * self.sigma_v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(a: f64, sigma_w: f64, sigma_v: f64, m0: f64, p0: f64) -> LinearGaussian {
        LinearGaussian {
            a,
            sigma_w,
            sigma_v,
            prior_mean: m0,
            prior_var: p0,
        }
    }

    #[test]
    fn single_observation() {
        let l = kalman_loglik(&model(1.0, 0.0, 1.0, 0.0, 1.0), &[0.0]).unwrap();
        assert!((l + 0.5 * (4.0 * PI).ln()).abs() < 1e-15);
    }

    #[test]
    fn constant_level_matches_conjugate_marginal() {
        // y ~ N(m0 1, r I + P0 1 1'): Sherman-Morrison for the inverse,
        // matrix determinant lemma for the log-determinant
        let (m0, p0, sv) = (0.4, 2.5, 0.7);
        let ys = [0.1, 1.3, 0.8, -0.2, 0.9, 1.1];
        let r = sv * sv;
        let n = ys.len() as f64;
        let d: Vec<f64> = ys.iter().map(|y| y - m0).collect();
        let sum: f64 = d.iter().sum();
        let sq: f64 = d.iter().map(|v| v * v).sum();
        let quad = sq / r - p0 * sum * sum / (r * (r + n * p0));
        let logdet = n * r.ln() + (1.0 + n * p0 / r).ln();
        let expected = -0.5 * (n * (2.0 * PI).ln() + logdet + quad);
        let got = kalman_loglik(&model(1.0, 0.0, sv, m0, p0), &ys).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn decreases_away_from_predictive_mean() {
        let m = model(0.9, 0.5, 0.5, 0.0, 1.0);
        let mut prev = f64::INFINITY;
        for y in [0.0, 0.5, 1.0, 2.0, 4.0] {
            let l = kalman_loglik(&m, &[y]).unwrap();
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn rejects_non_positive_variances() {
        assert!(kalman_loglik(&model(0.9, 0.5, 0.0, 0.0, 1.0), &[0.0]).is_err());
        assert!(kalman_loglik(&model(0.9, 0.5, 1.0, 0.0, 0.0), &[0.0]).is_err());
        assert!(kalman_loglik(&model(0.9, -0.5, 1.0, 0.0, 1.0), &[0.0]).is_err());
    }
}
