//! Batched particle LSTM layer.
//!
//! A batch holds `windows` independent series, each carrying `count`
//! particles; particle `k` of window `i` lives in row `i * count + k` of the
//! hidden and cell matrices. Per-window quantities (inputs, observations,
//! weights) are `[windows, ...]`.

use std::rc::Rc;

use rand::Rng;

use super::heads::{NoiseHead, WeightHead};
use super::resample::{
    iid_uniforms, invert_continuous, multinomial_indices, projection_order, stratified_uniforms,
    Resampler,
};
use crate::error::{Error, Result};
use crate::lstm::LstmParams;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, InterpolationPlan, PlanRow, Tensor, Var};

/// Particle hidden/cell states for a batch of windows.
#[derive(Clone, Copy, Debug)]
pub struct Particles {
    pub hidden: Var,
    pub cell: Var,
    pub windows: usize,
    pub count: usize,
}

impl Particles {
    pub fn zeros(g: &mut Graph, windows: usize, count: usize, dim: usize) -> Self {
        Particles {
            hidden: g.leaf(Tensor::zeros(&[windows * count, dim])),
            cell: g.leaf(Tensor::zeros(&[windows * count, dim])),
            windows,
            count,
        }
    }

    pub fn rows(&self) -> usize {
        self.windows * self.count
    }
}

/// LSTM transition with learned noise and measurement heads.
#[derive(Clone, Debug, PartialEq)]
pub struct CpfLstm {
    pub lstm: LstmParams,
    pub noise: NoiseHead,
    pub weight: WeightHead,
}

impl CpfLstm {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Self {
        let lstm = LstmParams::init(store, &format!("{prefix}.lstm"), hidden, input, rng);
        let noise = NoiseHead::init(store, prefix, hidden, input, rng);
        let weight = WeightHead::init(store, prefix, hidden, rng);
        CpfLstm {
            lstm,
            noise,
            weight,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm.hidden
    }

    /// Advances every particle with the shared per-window input `x`
    /// (`[windows, input]`). With `noise_rng` set, the hidden output gets
    /// `exp(s) * ζ` added; cell states never receive noise.
    pub fn transition<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &Particles,
        x: Var,
        noise_rng: Option<&mut R>,
    ) -> Result<Particles> {
        if g.shape(x)[0] != state.windows {
            return Err(Error::ShapeMismatch {
                op: "transition",
                lhs: g.shape(x).to_vec(),
                rhs: vec![state.windows, self.lstm.input],
            });
        }
        let xr = expand_rows(g, x, state.count)?;
        let (h, c) = self.lstm.step(g, p, state.hidden, state.cell, xr)?;
        let hidden = match noise_rng {
            Some(rng) => {
                let eps = self.noise.sample(g, p, state.hidden, xr, rng)?;
                g.add(h, eps)?
            }
            None => h,
        };
        Ok(Particles {
            hidden,
            cell: c,
            ..*state
        })
    }

    /// Clamped log-weights `[windows, count]` against one observation per
    /// window.
    pub fn measure(&self, g: &mut Graph, p: &Bound, state: &Particles, y: &[f64]) -> Result<Var> {
        if y.len() != state.windows {
            return Err(Error::ShapeMismatch {
                op: "measure",
                lhs: vec![y.len()],
                rhs: vec![state.windows],
            });
        }
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("observation for window {bad}")));
        }
        let ycol: Vec<f64> = y
            .iter()
            .flat_map(|v| std::iter::repeat_n(*v, state.count))
            .collect();
        let ycol = g.leaf(Tensor::matrix(state.rows(), 1, ycol)?);
        let lw = self.weight.log_weight(g, p, state.hidden, ycol)?;
        g.reshape(lw, &[state.windows, state.count])
    }
}

/// Repeats each row of `[windows, d]` `count` times.
pub fn expand_rows(g: &mut Graph, x: Var, count: usize) -> Result<Var> {
    if count == 1 {
        return Ok(x);
    }
    let rows = g.shape(x)[0];
    let index: Vec<usize> = (0..rows)
        .flat_map(|i| std::iter::repeat_n(i, count))
        .collect();
    g.gather_rows(x, &index)
}

/// Per-window mean over particles: `[windows * count, d] -> [windows, d]`.
pub fn particle_mean(g: &mut Graph, v: Var, windows: usize, count: usize) -> Result<Var> {
    if count == 1 {
        return Ok(v);
    }
    let d = g.shape(v)[1];
    let cube = g.reshape(v, &[windows, count, d])?;
    g.mean_axis(cube, 1)
}

/// `log((1/K) Σ_k exp(lw_k))` per window.
pub fn step_loglik(g: &mut Graph, log_weights: Var) -> Result<Var> {
    let k = *g.shape(log_weights).last().unwrap();
    let l = g.log_sum_exp(log_weights)?;
    Ok(g.affine(l, 1.0, -(k as f64).ln()))
}

/// Uniforms for one resampling step, `count` per window.
pub fn draw_uniforms<R: Rng + ?Sized>(
    resampler: Resampler,
    windows: usize,
    count: usize,
    rng: &mut R,
) -> Vec<f64> {
    (0..windows)
        .flat_map(|_| match resampler {
            Resampler::Continuous => stratified_uniforms(count, rng),
            Resampler::Multinomial => iid_uniforms(count, rng),
        })
        .collect()
}

/// Resamples every window. `weights` are the normalized weights
/// `[windows, count]`; `projections` (one per particle row) decide the sort
/// order of the continuous scheme. Weights are uniform afterwards.
pub fn resample(
    g: &mut Graph,
    state: &Particles,
    resampler: Resampler,
    weights: Var,
    projections: &[f64],
    uniforms: &[f64],
) -> Result<Particles> {
    let (n, k) = (state.windows, state.count);
    if g.shape(weights) != [n, k] || uniforms.len() != n * k {
        return Err(Error::ShapeMismatch {
            op: "resample",
            lhs: g.shape(weights).to_vec(),
            rhs: vec![n, k],
        });
    }
    if k == 1 {
        return Ok(*state);
    }
    let pi = g.value(weights).data().to_vec();
    match resampler {
        Resampler::Multinomial => {
            let mut index = Vec::with_capacity(n * k);
            for i in 0..n {
                let picks =
                    multinomial_indices(&pi[i * k..(i + 1) * k], &uniforms[i * k..(i + 1) * k]);
                index.extend(picks.into_iter().map(|j| i * k + j));
            }
            Ok(Particles {
                hidden: g.gather_rows(state.hidden, &index)?,
                cell: g.gather_rows(state.cell, &index)?,
                ..*state
            })
        }
        Resampler::Continuous => {
            if projections.len() != n * k {
                return Err(Error::ShapeMismatch {
                    op: "resample",
                    lhs: vec![projections.len()],
                    rhs: vec![n * k],
                });
            }
            let mut order = Vec::with_capacity(n);
            let mut rows = Vec::with_capacity(n * k);
            let mut lower = Vec::with_capacity(n * k);
            let mut upper = Vec::with_capacity(n * k);
            for i in 0..n {
                let ord = projection_order(&projections[i * k..(i + 1) * k])?;
                let sorted: Vec<f64> = ord.iter().map(|&j| pi[i * k + j]).collect();
                for pick in invert_continuous(&sorted, &uniforms[i * k..(i + 1) * k])? {
                    lower.push(i * k + ord[pick.lower()]);
                    upper.push(i * k + ord[pick.upper()]);
                    rows.push(PlanRow {
                        block: i,
                        interval: match pick {
                            super::resample::Pick::Between { interval, .. } => Some(interval),
                            super::resample::Pick::Atom(_) => None,
                        },
                        gamma: pick.gamma(),
                    });
                }
                order.push(ord);
            }
            let plan = Rc::new(InterpolationPlan {
                width: k,
                order,
                rows,
            });
            let gamma = g.interpolation(weights, plan)?;
            let hidden = interpolate_rows(g, state.hidden, &lower, &upper, gamma)?;
            let cell = interpolate_rows(g, state.cell, &lower, &upper, gamma)?;
            Ok(Particles {
                hidden,
                cell,
                ..*state
            })
        }
    }
}

fn interpolate_rows(
    g: &mut Graph,
    v: Var,
    lower: &[usize],
    upper: &[usize],
    gamma: Var,
) -> Result<Var> {
    let lo = g.gather_rows(v, lower)?;
    let hi = g.gather_rows(v, upper)?;
    let diff = g.sub(hi, lo)?;
    let step = g.scale_rows(diff, gamma)?;
    g.add(lo, step)
}
