//! Synthetic series generators.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::SeriesDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    /// `h_t = a h_{t-1} + σ_w w_t`, `y_t = h_t + σ_v v_t`.
    LinearGaussian,
    /// `h_t = a h_{t-1} + σ_w w_t`, `y_t = exp(h_t / 2) v_t`.
    StochasticVolatility,
    /// `n` AR(1) drivers feeding an AR(1) latent observed in noise.
    DrivenAr,
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-gaussian" => Ok(SynthKind::LinearGaussian),
            "stochastic-volatility" => Ok(SynthKind::StochasticVolatility),
            "driven-ar" => Ok(SynthKind::DrivenAr),
            _ => Err(Error::invalid(
                "synth",
                format!("unknown kind `{s}` (expected linear-gaussian, stochastic-volatility or driven-ar)"),
            )),
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthKind::LinearGaussian => "linear-gaussian",
            SynthKind::StochasticVolatility => "stochastic-volatility",
            SynthKind::DrivenAr => "driven-ar",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub a: f64,
    pub sigma_w: f64,
    pub sigma_v: f64,
    /// Initial latent state.
    pub h0: f64,
    /// Driving series count (driven-ar only).
    pub drivers: usize,
    /// AR coefficient of each driver (driven-ar only).
    pub driver_phi: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            a: 0.9,
            sigma_w: 0.5,
            sigma_v: 0.5,
            h0: 0.0,
            drivers: 5,
            driver_phi: 0.95,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Deterministic in `seed`. Latent and target series start at `t = 1`, one
/// transition after `h0`.
pub fn synth_generate(
    kind: SynthKind,
    length: usize,
    params: &SynthParams,
    seed: u64,
) -> Result<SeriesDataset> {
    let bad = |msg: String| Err(Error::invalid("synth", msg));
    if length == 0 {
        return bad("length must be positive".into());
    }
    if !(params.a.abs() < 1.0) {
        return bad(format!(
            "|a| must be below 1 for a stationary series, got {}",
            params.a
        ));
    }
    if !(params.sigma_w >= 0.0 && params.sigma_v >= 0.0) {
        return bad("noise scales must be non-negative".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = params.h0;
    let mut target = Vec::with_capacity(length);
    let (names, driving) = match kind {
        SynthKind::LinearGaussian | SynthKind::StochasticVolatility => {
            for _ in 0..length {
                h = params.a * h + params.sigma_w * normal(&mut rng);
                let v = normal(&mut rng);
                target.push(match kind {
                    SynthKind::LinearGaussian => h + params.sigma_v * v,
                    _ => (h / 2.0).exp() * v,
                });
            }
            (Vec::new(), Vec::new())
        }
        SynthKind::DrivenAr => {
            let n = params.drivers;
            if n == 0 {
                return bad("driven-ar needs at least one driver".into());
            }
            if !(params.driver_phi.abs() < 1.0) {
                return bad(format!(
                    "|driver_phi| must be below 1, got {}",
                    params.driver_phi
                ));
            }
            let b: Vec<f64> = (0..n)
                .map(|_| normal(&mut rng) / (n as f64).sqrt())
                .collect();
            let innov = (1.0 - params.driver_phi * params.driver_phi).sqrt();
            let mut x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let mut driving = vec![Vec::with_capacity(length); n];
            for _ in 0..length {
                for (k, xk) in x.iter_mut().enumerate() {
                    *xk = params.driver_phi * *xk + innov * normal(&mut rng);
                    driving[k].push(*xk);
                }
                let drive: f64 = b.iter().zip(&x).map(|(b, x)| b * x).sum();
                h = params.a * h + drive + params.sigma_w * normal(&mut rng);
                target.push(h + params.sigma_v * normal(&mut rng));
            }
            ((1..=n).map(|k| format!("x{k}")).collect(), driving)
        }
    };
    SeriesDataset::new(names, "y".into(), driving, target)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_linear_recursion() {
        let p = SynthParams {
            a: 0.9,
            sigma_w: 0.0,
            sigma_v: 0.0,
            h0: 1.0,
            ..SynthParams::default()
        };
        let ds = synth_generate(SynthKind::LinearGaussian, 20, &p, 3).unwrap();
        for (t, y) in ds.target.iter().enumerate() {
            assert!((y - 0.9f64.powi(t as i32 + 1)).abs() < 1e-15);
        }
        assert_eq!(ds.drivers(), 0);
    }

    #[test]
    fn deterministic_and_shaped() {
        let p = SynthParams::default();
        for kind in [
            SynthKind::LinearGaussian,
            SynthKind::StochasticVolatility,
            SynthKind::DrivenAr,
        ] {
            let a = synth_generate(kind, 50, &p, 9).unwrap();
            assert_eq!(a, synth_generate(kind, 50, &p, 9).unwrap());
            assert_ne!(a, synth_generate(kind, 50, &p, 10).unwrap());
            assert!(a.target.iter().all(|v| v.is_finite()));
        }
        let ds = synth_generate(SynthKind::DrivenAr, 40, &p, 1).unwrap();
        assert_eq!(ds.drivers(), 5);
        assert_eq!(ds.len(), 40);
    }

    #[test]
    fn rejects_non_stationary() {
        let p = SynthParams {
            a: 1.0,
            ..SynthParams::default()
        };
        assert!(synth_generate(SynthKind::LinearGaussian, 10, &p, 0).is_err());
        assert!(synth_generate(SynthKind::DrivenAr, 10, &p, 0).is_err());
        let p = SynthParams {
            drivers: 0,
            ..SynthParams::default()
        };
        assert!(synth_generate(SynthKind::DrivenAr, 10, &p, 0).is_err());
        assert!("garch".parse::<SynthKind>().is_err());
    }
}
