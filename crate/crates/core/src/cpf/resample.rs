//! Resampling schemes over weighted particle sets.
//!
//! The continuous scheme replaces the step ECDF of particles sorted by a
//! scalar projection with a piecewise-linear approximation: half of the
//! first and last weights sit as atoms on the end particles, and mass
//! `(π_k + π_{k+1}) / 2` is spread uniformly between each sorted pair.
//! Inverting that CDF at fixed uniforms yields particles that move
//! continuously as the weights change.

use std::fmt;
use std::str::FromStr;

use rand::distr::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampler {
    Multinomial,
    Continuous,
}

impl FromStr for Resampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Resampler::Multinomial),
            "continuous" => Ok(Resampler::Continuous),
            other => Err(Error::Config {
                key: "resampler".into(),
                msg: format!("expected multinomial or continuous, got {other:?}"),
            }),
        }
    }
}

impl fmt::Display for Resampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resampler::Multinomial => "multinomial",
            Resampler::Continuous => "continuous",
        })
    }
}

/// `λ⁰ = π¹/2`, `λᵏ = (πᵏ + πᵏ⁺¹)/2`, `λᴷ = πᴷ/2` for weights already in
/// projection order. Returns `K + 1` coefficients.
pub fn ecdf_coefficients(sorted_weights: &[f64]) -> Result<Vec<f64>> {
    let k = sorted_weights.len();
    if k == 0 {
        return Err(Error::invalid("ecdf_coefficients", "no particles"));
    }
    let mut lambda = Vec::with_capacity(k + 1);
    lambda.push(sorted_weights[0] / 2.0);
    for pair in sorted_weights.windows(2) {
        lambda.push((pair[0] + pair[1]) / 2.0);
    }
    lambda.push(sorted_weights[k - 1] / 2.0);
    Ok(lambda)
}

/// Bound on the sup-distance between the step ECDF and its continuous
/// approximation: `max_k π_k / 2`.
pub fn ecdf_sup_distance(weights: &[f64]) -> f64 {
    weights.iter().cloned().fold(0.0, f64::max) / 2.0
}

/// Where one uniform lands when inverting the continuous ECDF. Positions are
/// indices into projection-sorted order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Pick {
    /// Exactly the particle at this sorted position.
    Atom(usize),
    /// `(1 - gamma) * particle[interval - 1] + gamma * particle[interval]`.
    Between { interval: usize, gamma: f64 },
}

impl Pick {
    pub fn lower(&self) -> usize {
        match *self {
            Pick::Atom(p) => p,
            Pick::Between { interval, .. } => interval - 1,
        }
    }

    pub fn upper(&self) -> usize {
        match *self {
            Pick::Atom(p) => p,
            Pick::Between { interval, .. } => interval,
        }
    }

    pub fn gamma(&self) -> f64 {
        match *self {
            Pick::Atom(_) => 0.0,
            Pick::Between { gamma, .. } => gamma,
        }
    }
}

/// Inverts the continuous ECDF of `sorted_weights` at each uniform.
pub fn invert_continuous(sorted_weights: &[f64], uniforms: &[f64]) -> Result<Vec<Pick>> {
    let lambda = ecdf_coefficients(sorted_weights)?;
    let k = sorted_weights.len();
    // cumulative[j] = λ⁰ + … + λʲ for j < K
    let mut cumulative = Vec::with_capacity(k);
    let mut acc = 0.0;
    for l in &lambda[..k] {
        acc += l;
        cumulative.push(acc);
    }
    Ok(uniforms
        .iter()
        .map(|&u| {
            if u <= cumulative[0] {
                return Pick::Atom(0);
            }
            let j = cumulative.partition_point(|c| *c < u);
            if j >= k {
                return Pick::Atom(k - 1);
            }
            let width = lambda[j];
            if width <= 0.0 {
                return Pick::Atom(j - 1);
            }
            let gamma = ((u - cumulative[j - 1]) / width).clamp(0.0, 1.0);
            Pick::Between { interval: j, gamma }
        })
        .collect())
}

/// Stable ascending sort order of `projections`; ties keep index order.
pub fn projection_order(projections: &[f64]) -> Result<Vec<usize>> {
    if let Some(bad) = projections.iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite(format!("projection of particle {bad}")));
    }
    let mut order: Vec<usize> = (0..projections.len()).collect();
    order.sort_by(|a, b| projections[*a].total_cmp(&projections[*b]));
    Ok(order)
}

/// Inverse of the step ECDF in index order: the first particle whose
/// cumulative weight reaches `u`.
pub fn multinomial_indices(weights: &[f64], uniforms: &[f64]) -> Vec<usize> {
    let mut cumulative = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cumulative.push(acc);
    }
    let last = weights.len().saturating_sub(1);
    uniforms
        .iter()
        .map(|&u| cumulative.partition_point(|c| *c < u).min(last))
        .collect()
}

/// `u_k = (k + v_k) / K` with `v_k` i.i.d. uniform on (0, 1).
pub fn stratified_uniforms<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k)
        .map(|i| (i as f64 + rng.sample::<f64, _>(Open01)) / k as f64)
        .collect()
}

/// Stratified uniforms sharing one offset `v`; identical draws across
/// evaluations give common random numbers.
pub fn fixed_stratified_uniforms(k: usize, v: f64) -> Vec<f64> {
    (0..k).map(|i| (i as f64 + v) / k as f64).collect()
}

pub fn iid_uniforms<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    (0..k).map(|_| rng.sample::<f64, _>(Open01)).collect()
}

/// Step and piecewise-linear ECDFs over scalar particle positions.
#[derive(Clone, Debug)]
pub struct WeightedEcdf {
    positions: Vec<f64>,
    weights: Vec<f64>,
    lambda: Vec<f64>,
}

impl WeightedEcdf {
    pub fn new(positions: &[f64], weights: &[f64]) -> Result<Self> {
        if positions.len() != weights.len() {
            return Err(Error::ShapeMismatch {
                op: "ecdf",
                lhs: vec![positions.len()],
                rhs: vec![weights.len()],
            });
        }
        let order = projection_order(positions)?;
        let positions: Vec<f64> = order.iter().map(|&i| positions[i]).collect();
        let weights: Vec<f64> = order.iter().map(|&i| weights[i]).collect();
        let lambda = ecdf_coefficients(&weights)?;
        Ok(WeightedEcdf {
            positions,
            weights,
            lambda,
        })
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Σ_k π_k · 1(x ≥ s_k)`.
    pub fn step(&self, x: f64) -> f64 {
        self.positions
            .iter()
            .zip(&self.weights)
            .filter(|(s, _)| x >= **s)
            .map(|(_, w)| w)
            .sum()
    }

    /// Continuous approximation with uniform `G` on each sorted pair.
    pub fn smooth(&self, x: f64) -> f64 {
        let k = self.positions.len();
        let s = &self.positions;
        let mut total = 0.0;
        if x >= s[0] {
            total += self.lambda[0];
        }
        for j in 1..k {
            let (a, b) = (s[j - 1], s[j]);
            let g = if x < a {
                0.0
            } else if x >= b {
                1.0
            } else {
                (x - a) / (b - a)
            };
            total += self.lambda[j] * g;
        }
        if x >= s[k - 1] {
            total += self.lambda[k];
        }
        total
    }

    /// `n` evenly spaced points over `[min, max]` of the positions with both
    /// CDFs evaluated.
    pub fn grid(&self, n: usize) -> Vec<(f64, f64, f64)> {
        let lo = self.positions[0];
        let hi = *self.positions.last().unwrap();
        let n = n.max(2);
        (0..n)
            .map(|i| {
                let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
                (x, self.step(x), self.smooth(x))
            })
            .collect()
    }

    /// Largest `|F̂ - F̃|` over [`grid`](Self::grid), computed in one sweep.
    pub fn grid_sup_distance(&self, n: usize) -> f64 {
        let lo = self.positions[0];
        let hi = *self.positions.last().unwrap();
        let n = n.max(2);
        let k = self.positions.len();
        let mut next = 0;
        let mut step_acc = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            while next < k && x >= self.positions[next] {
                step_acc += self.weights[next];
                next += 1;
            }
            worst = worst.max((step_acc - self.smooth_at(x, next)).abs());
        }
        worst
    }

    // smooth(x) given `passed` = number of positions ≤ x.
    fn smooth_at(&self, x: f64, passed: usize) -> f64 {
        let k = self.positions.len();
        if passed == 0 {
            return 0.0;
        }
        if passed == k {
            return self.lambda.iter().sum();
        }
        // atoms + full intervals below, plus the partial one
        let full: f64 = self.lambda[..passed].iter().sum();
        let (a, b) = (self.positions[passed - 1], self.positions[passed]);
        full + self.lambda[passed] * ((x - a) / (b - a)).clamp(0.0, 1.0)
    }
}
