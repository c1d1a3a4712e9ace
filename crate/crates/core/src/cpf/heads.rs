//! Learned heads of the particle layer: transition noise scale, measurement
//! log-weight, and the scalar output/projection map.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Log-std bounds of the transition noise.
pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Symmetric clamp on learned log-weights.
pub const LOG_WEIGHT_BOUND: f64 = 30.0;
/// Hidden width of the measurement perceptron.
pub const WEIGHT_HIDDEN: usize = 32;
/// Initial bias of the log-std head (std ≈ 0.135).
pub const NOISE_BIAS_INIT: f64 = -2.0;

/// Affine map `[h_prev; x] -> log-std`, clamped to
/// `[LOG_STD_MIN, LOG_STD_MAX]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl NoiseHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 0.1 / ((hidden + input) as f64).sqrt();
        NoiseHead {
            w: store.add(
                format!("{prefix}.noise.w"),
                uniform(&[hidden, hidden + input], bound, rng),
            ),
            b: store.add(
                format!("{prefix}.noise.b"),
                Tensor::full(&[hidden], NOISE_BIAS_INIT),
            ),
        }
    }

    pub fn log_std(&self, g: &mut Graph, p: &Bound, h_prev: Var, x: Var) -> Result<Var> {
        let hx = g.concat(&[h_prev, x], 1)?;
        let z = g.matmul_t(hx, p[self.w])?;
        let z = g.add_row(z, p[self.b])?;
        Ok(g.clamp(z, LOG_STD_MIN, LOG_STD_MAX))
    }

    /// Reparameterized draw `exp(s) * ζ`; `ζ` enters the graph as a constant.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        g: &mut Graph,
        p: &Bound,
        h_prev: Var,
        x: Var,
        rng: &mut R,
    ) -> Result<Var> {
        let s = self.log_std(g, p, h_prev, x)?;
        let scale = g.exp(s);
        let zeta = standard_normal(g.shape(scale), rng);
        let zeta = g.leaf(zeta);
        g.mul(scale, zeta)
    }
}

pub(crate) fn standard_normal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// Two-layer perceptron `[h; y] -> tanh(W1 · + b1) -> w2 · + b2`, the
/// approximate measurement log-density.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl WeightHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let b1 = 1.0 / ((hidden + 1) as f64).sqrt();
        let b2 = 1.0 / (WEIGHT_HIDDEN as f64).sqrt();
        WeightHead {
            w1: store.add(
                format!("{prefix}.weight.w1"),
                uniform(&[WEIGHT_HIDDEN, hidden + 1], b1, rng),
            ),
            b1: store.add(
                format!("{prefix}.weight.b1"),
                Tensor::zeros(&[WEIGHT_HIDDEN]),
            ),
            w2: store.add(
                format!("{prefix}.weight.w2"),
                uniform(&[1, WEIGHT_HIDDEN], b2, rng),
            ),
            b2: store.add(format!("{prefix}.weight.b2"), Tensor::zeros(&[1])),
        }
    }

    /// Clamped log-weight per row; `y` is `[rows, 1]`.
    pub fn log_weight(&self, g: &mut Graph, p: &Bound, h: Var, y: Var) -> Result<Var> {
        let hy = g.concat(&[h, y], 1)?;
        let z = g.matmul_t(hy, p[self.w1])?;
        let z = g.add_row(z, p[self.b1])?;
        let a = g.tanh(z);
        let out = g.matmul_t(a, p[self.w2])?;
        let out = g.add_row(out, p[self.b2])?;
        Ok(g.clamp(out, -LOG_WEIGHT_BOUND, LOG_WEIGHT_BOUND))
    }
}

/// Affine map to a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct OutHead {
    pub dim: usize,
    pub w: ParamId,
    pub b: ParamId,
}

impl OutHead {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        OutHead {
            dim,
            w: store.add(format!("{prefix}.w"), uniform(&[1, dim], bound, rng)),
            b: store.add(format!("{prefix}.b"), Tensor::zeros(&[1])),
        }
    }

    /// `[rows, dim] -> [rows, 1]`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var) -> Result<Var> {
        let z = g.matmul_t(x, p[self.w])?;
        g.add_row(z, p[self.b])
    }

    /// Plain evaluation on row-major `[rows, dim]` values.
    pub fn project(&self, store: &ParamStore, rows: &[f64]) -> Vec<f64> {
        let w = store.get(self.w).data();
        let b = store.get(self.b).data()[0];
        rows.chunks(self.dim)
            .map(|r| r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b)
            .collect()
    }
}
