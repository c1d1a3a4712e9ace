//! Objectives, optimizer and the minibatch training loop.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Affine, Batch};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::Model;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Loss above which training is declared diverged.
pub const DIVERGENCE_LIMIT: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub kappa: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kappa: 0.1,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            grad_clip: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("train", msg));
        if !(self.kappa >= 0.0) {
            return bad(format!("kappa must be non-negative, got {}", self.kappa));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be a non-negative number, got {}",
                self.learning_rate
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!(
                "grad_clip must be positive, got {}",
                self.grad_clip
            ));
        }
        Ok(())
    }
}

/// `(1/N) Σ (ŷ - y)²`.
pub fn mse_objective(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::ShapeMismatch {
            op: "mse",
            lhs: vec![y_hat.len()],
            rhs: vec![y.len()],
        });
    }
    if y.is_empty() {
        return Err(Error::EmptyAxis { op: "mse" });
    }
    Ok(y_hat
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}

/// `Σ_t log((1/(N K)) Σ_{i,k} exp(lw[i, t, k]))` for `log_weights` laid out
/// as `[N, T, K]`.
pub fn elbo_objective(log_weights: &[f64], n: usize, t: usize, k: usize) -> Result<f64> {
    if log_weights.len() != n * t * k || n * k == 0 {
        return Err(Error::ShapeMismatch {
            op: "elbo",
            lhs: vec![log_weights.len()],
            rhs: vec![n, t, k],
        });
    }
    let mut total = 0.0;
    let mut step = Vec::with_capacity(n * k);
    for s in 0..t {
        step.clear();
        for i in 0..n {
            step.extend_from_slice(&log_weights[(i * t + s) * k..(i * t + s + 1) * k]);
        }
        total += crate::tensor::lse(&step) - ((n * k) as f64).ln();
    }
    Ok(total)
}

/// Loss to minimize: `mse - κ · elbo`.
pub fn combined_objective(mse: f64, elbo: f64, kappa: f64) -> f64 {
    mse - kappa * elbo
}

/// Mean squared error of `[N, 1]` predictions against `y`.
pub fn mse_loss(g: &mut Graph, prediction: Var, y: &[f64]) -> Result<Var> {
    let target = g.leaf(Tensor::matrix(y.len(), 1, y.to_vec())?);
    let d = g.sub(prediction, target)?;
    let sq = g.square(d);
    g.mean_all(sq)
}

/// Graph form of [`elbo_objective`] over per-step `[N, K]` log-weights.
pub fn elbo_loss(g: &mut Graph, log_weights: &[Var]) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &lw in log_weights {
        let count = g.value(lw).len();
        let flat = g.reshape(lw, &[count])?;
        let l = g.log_sum_exp(flat)?;
        let l = g.affine(l, 1.0, -(count as f64).ln());
        total = Some(match total {
            Some(acc) => g.add(acc, l)?,
            None => l,
        });
    }
    Ok(total)
}

/// Loss node and its parts for one batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: Var,
    pub mse: f64,
    pub elbo: Option<f64>,
}

/// Forward pass plus objective: `mse - κ · elbo` for the particle RNN, task
/// loss alone otherwise.
pub fn batch_loss(
    model: &Model,
    g: &mut Graph,
    p: &Bound,
    batch: &Batch,
    kappa: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let f = model.forward(g, p, batch, rng)?;
    let mse = mse_loss(g, f.prediction, &batch.labels())?;
    let mse_value = g.value(mse).data()[0];
    if !model.spec.kind.uses_elbo() {
        return Ok(BatchLoss {
            loss: mse,
            mse: mse_value,
            elbo: None,
        });
    }
    let Some(elbo) = elbo_loss(g, &f.log_weights)? else {
        return Ok(BatchLoss {
            loss: mse,
            mse: mse_value,
            elbo: None,
        });
    };
    let elbo_value = g.value(elbo).data()[0];
    let weighted = g.affine(elbo, -kappa, 0.0);
    let loss = g.add(mse, weighted)?;
    Ok(BatchLoss {
        loss,
        mse: mse_value,
        elbo: Some(elbo_value),
    })
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Returns `false`, leaving parameters and moments
    /// untouched, when any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<bool> {
        if grads.len() != store.len() {
            return Err(Error::invalid(
                "adam",
                format!("{} gradients for {} parameters", grads.len(), store.len()),
            ));
        }
        for (t, g) in store.tensors().iter().zip(grads) {
            if t.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam",
                    lhs: t.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        if grads.iter().any(|g| !g.all_finite()) {
            return Ok(false);
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (param, grad)) in store.tensors_mut().iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(true)
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_mse: f64,
    pub train_elbo: Option<f64>,
    pub validation: Option<Metrics>,
    pub skipped_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: String,
    pub parameters: usize,
    pub epochs: Vec<EpochReport>,
    pub skipped_steps: usize,
    pub wall_time_secs: f64,
    pub checksum: String,
}

/// Held-out windows and the map from normalized to original target units.
#[derive(Clone, Copy, Debug)]
pub struct Validation<'a> {
    pub batch: &'a Batch,
    pub target: Affine,
}

/// Seed of the stream used for evaluation draws.
pub const EVAL_STREAM: u64 = 2;
pub const TRAIN_STREAM: u64 = 1;

/// ChaCha8 generator on a fixed `stream` of `seed`.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Predictions, labels (both in original units) and metrics.
pub fn evaluate(
    model: &Model,
    batch: &Batch,
    target: Affine,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Metrics)> {
    let mut rng = rng_for(seed, EVAL_STREAM);
    let pred: Vec<f64> = model
        .predict(batch, 256, &mut rng)?
        .into_iter()
        .map(|v| target.inverse(v))
        .collect();
    let labels: Vec<f64> = batch
        .labels()
        .into_iter()
        .map(|v| target.inverse(v))
        .collect();
    let metrics = compute_metrics(&labels, &pred)?;
    Ok((pred, labels, metrics))
}

/// Shuffled minibatch training.
pub fn train(
    model: &mut Model,
    cfg: &TrainConfig,
    data: &Batch,
    validation: Option<Validation>,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.windows() == 0 {
        return Err(Error::Data("no training windows".into()));
    }
    let start = Instant::now();
    let mut rng = rng_for(cfg.seed, TRAIN_STREAM);
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.windows()).collect();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut skipped_total = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut mse_sum, mut elbo_sum, mut has_elbo) = (0.0, 0.0, 0.0, false);
        let mut skipped = 0;
        let mut batches = 0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = data.select(idx);
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let parts = batch_loss(model, &mut g, &p, &batch, cfg.kappa, &mut rng)?;
            let loss = g.value(parts.loss).data()[0];
            if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
                return Err(Error::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            let grads = g.backward(parts.loss)?;
            let mut grads: Vec<Tensor> = p.vars().iter().map(|v| grads.get(*v)).collect();
            clip_global_norm(&mut grads, cfg.grad_clip);
            if !adam.step(&mut model.store, &grads)? {
                log::warn!("epoch {epoch} batch {b}: non-finite gradient, step skipped");
                skipped += 1;
            }
            loss_sum += loss;
            mse_sum += parts.mse;
            if let Some(e) = parts.elbo {
                elbo_sum += e;
                has_elbo = true;
            }
            batches += 1;
        }
        let nb = batches as f64;
        let validation = match validation {
            Some(v) => Some(evaluate(model, v.batch, v.target, cfg.seed)?.2),
            None => None,
        };
        let report = EpochReport {
            epoch,
            train_loss: loss_sum / nb,
            train_mse: mse_sum / nb,
            train_elbo: has_elbo.then_some(elbo_sum / nb),
            validation,
            skipped_steps: skipped,
        };
        log::info!(
            "epoch {epoch}: loss {:.6} mse {:.6}{}",
            report.train_loss,
            report.train_mse,
            report
                .validation
                .map(|m| format!(" valid rmse {:.6}", m.rmse))
                .unwrap_or_default()
        );
        skipped_total += skipped;
        epochs.push(report);
    }
    Ok(TrainReport {
        model: model.spec.kind.to_string(),
        parameters: model.store.num_scalars(),
        epochs,
        skipped_steps: skipped_total,
        wall_time_secs: start.elapsed().as_secs_f64(),
        checksum: model.store.checksum(),
    })
}
