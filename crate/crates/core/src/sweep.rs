//! Loss along a one-dimensional ray in parameter space, under both
//! resamplers with common random numbers.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cpf::Resampler;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind, ModelSpec};
use crate::params::ParamStore;
use crate::tensor::Graph;
use crate::training::{batch_loss, rng_for};

const SWEEP_STREAM: u64 = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub points: usize,
    /// Offsets run over `[-span, span]`.
    pub span: f64,
    pub particles: usize,
    pub hidden: usize,
    pub kappa: f64,
    pub seed: u64,
    /// Parameters whose names start with this prefix span the ray.
    pub prefix: String,
    /// Worker threads; 0 picks the available parallelism.
    pub threads: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            points: 1000,
            span: 1.0,
            particles: 10,
            hidden: 8,
            kappa: 0.1,
            seed: 0,
            prefix: "enc.weight.".into(),
            threads: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub offset: f64,
    pub loss_continuous: f64,
    pub loss_multinomial: f64,
}

/// Largest absolute difference between neighbours.
pub fn max_adjacent_jump(values: &[f64]) -> f64 {
    values
        .windows(2)
        .map(|w| (w[1] - w[0]).abs())
        .fold(0.0, f64::max)
}

/// Unit direction over the parameters matching `prefix`, zero elsewhere.
fn direction(store: &ParamStore, prefix: &str, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut d: Vec<Vec<f64>> = store
        .iter()
        .map(|(name, t)| {
            if name.starts_with(prefix) {
                (0..t.len()).map(|_| StandardNormal.sample(rng)).collect()
            } else {
                vec![0.0; t.len()]
            }
        })
        .collect();
    let norm = d.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid(
            "sweep",
            format!("no parameters match prefix `{prefix}`"),
        ));
    }
    d.iter_mut().flatten().for_each(|v| *v /= norm);
    Ok(d)
}

fn loss_at(
    model: &Model,
    base: &ParamStore,
    dir: &[Vec<f64>],
    offset: f64,
    batch: &Batch,
    cfg: &SweepConfig,
) -> Result<f64> {
    let mut model = model.clone();
    for ((t, b), d) in model
        .store
        .tensors_mut()
        .iter_mut()
        .zip(base.tensors())
        .zip(dir)
    {
        for ((v, b), d) in t.data_mut().iter_mut().zip(b.data()).zip(d) {
            *v = b + offset * d;
        }
    }
    let mut rng = rng_for(cfg.seed, SWEEP_STREAM);
    let mut g = Graph::new();
    let p = model.store.bind(&mut g);
    let l = batch_loss(&model, &mut g, &p, batch, cfg.kappa, &mut rng)?;
    Ok(g.value(l.loss).data()[0])
}

/// Particle-RNN loss on `batch` at `points` evenly spaced offsets along a
/// random ray through the initial parameters. Every point reuses the same
/// random stream, so the two resamplers see aligned noise.
pub fn sweep(cfg: &SweepConfig, batch: &Batch) -> Result<Vec<SweepRow>> {
    if cfg.points < 2 {
        return Err(Error::invalid("sweep", "need at least two points"));
    }
    if !(cfg.span > 0.0 && cfg.span.is_finite()) {
        return Err(Error::invalid(
            "sweep",
            format!("span must be positive, got {}", cfg.span),
        ));
    }
    let spec = ModelSpec {
        kind: ModelKind::CpfRnn,
        drivers: batch.drivers(),
        window: batch.window(),
        hidden: cfg.hidden,
        decoder_hidden: cfg.hidden,
        particles: cfg.particles,
        resampler: Resampler::Continuous,
    };
    let continuous = Model::new(spec.clone(), cfg.seed)?;
    let multinomial = Model::with_parameters(
        ModelSpec {
            resampler: Resampler::Multinomial,
            ..spec
        },
        &continuous.store,
    )?;
    let base = continuous.store.clone();
    let dir = direction(
        &base,
        &cfg.prefix,
        &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
    )?;
    let offsets: Vec<f64> = (0..cfg.points)
        .map(|i| -cfg.span + 2.0 * cfg.span * i as f64 / (cfg.points - 1) as f64)
        .collect();
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let chunk = cfg.points.div_ceil(threads);
    let parts: Vec<Result<Vec<SweepRow>>> = std::thread::scope(|s| {
        let handles: Vec<_> = offsets
            .chunks(chunk)
            .enumerate()
            .map(|(c, part)| {
                let (continuous, multinomial, base, dir) = (&continuous, &multinomial, &base, &dir);
                s.spawn(move || {
                    part.iter()
                        .enumerate()
                        .map(|(i, &offset)| {
                            Ok(SweepRow {
                                index: c * chunk + i,
                                offset,
                                loss_continuous: loss_at(
                                    continuous, base, dir, offset, batch, cfg,
                                )?,
                                loss_multinomial: loss_at(
                                    multinomial,
                                    base,
                                    dir,
                                    offset,
                                    batch,
                                    cfg,
                                )?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(cfg.points);
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "offset", "loss_continuous", "loss_multinomial"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for r in rows {
        out.write_record([
            r.index.to_string(),
            format!("{:?}", r.offset),
            format!("{:?}", r.loss_continuous),
            format!("{:?}", r.loss_multinomial),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}
