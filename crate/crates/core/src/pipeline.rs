//! End-to-end runs: train from a dataset, persist, reload, evaluate, forecast.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{normalize, split_train_test, Affine, Batch, Scaler, SeriesDataset};
use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{Model, Snapshot};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::training::{evaluate, rng_for, train, TrainReport, Validation, EVAL_STREAM};

const META_DRIVERS: &str = "meta.drivers";
const META_SCALER_DRIVERS: &str = "meta.scaler.drivers";
const META_SCALER_TARGET: &str = "meta.scaler.target";

/// A model together with the config and normalization it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub config: RunConfig,
    pub model: Model,
    pub scaler: Scaler,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub train: TrainReport,
    pub train_windows: usize,
    pub test_windows: usize,
    /// Held-out split, original units.
    pub test: Metrics,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForecastRow {
    pub window: usize,
    /// Row of the dataset whose target is forecast.
    pub row: usize,
    pub actual: f64,
    pub predicted: f64,
}

/// Splits chronologically, normalizes on the training part, trains, and
/// scores the held-out part.
pub fn train_run(config: &RunConfig, ds: &SeriesDataset) -> Result<(TrainedModel, RunReport)> {
    config.validate()?;
    let (train_raw, test_raw) = split_train_test(ds, config.train_fraction, config.window)?;
    let (train_ds, test_ds, scaler) = normalize(&train_raw, &test_raw, config.normalization)?;
    let train_batch = train_ds.windows(config.window)?;
    let test_batch = test_ds.windows(config.window)?;
    let mut model = Model::new(config.model_spec(ds.drivers()), config.seed)?;
    let validation = Validation {
        batch: &test_batch,
        target: scaler.target,
    };
    let report = train(
        &mut model,
        &config.train_config(),
        &train_batch,
        Some(validation),
    )?;
    let test = evaluate(&model, &test_batch, scaler.target, config.seed)?.2;
    let warnings = scaler.warnings.clone();
    let trained = TrainedModel {
        config: config.clone(),
        model,
        scaler,
    };
    Ok((
        trained,
        RunReport {
            train: report,
            train_windows: train_batch.windows(),
            test_windows: test_batch.windows(),
            test,
            warnings,
        },
    ))
}

fn affine_rows(a: &[Affine]) -> Tensor {
    let data = a.iter().flat_map(|a| [a.shift, a.scale]).collect();
    Tensor::new(vec![a.len(), 2], data).expect("two columns per affine")
}

fn meta<'a>(c: &'a Checkpoint, name: &str) -> Result<&'a Tensor> {
    c.get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing record {name}")))
}

impl TrainedModel {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut tensors: Vec<(String, Tensor)> = self
            .model
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        tensors.push((
            META_DRIVERS.into(),
            Tensor::vector(vec![self.model.spec.drivers as f64]),
        ));
        tensors.push((
            META_SCALER_DRIVERS.into(),
            affine_rows(&self.scaler.drivers),
        ));
        tensors.push((
            META_SCALER_TARGET.into(),
            affine_rows(&[self.scaler.target]),
        ));
        Checkpoint {
            config: self.config.to_text(),
            seed: self.config.seed,
            tensors,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let config = RunConfig::parse(&c.config)?;
        let drivers = meta(c, META_DRIVERS)?.item().unwrap_or(-1.0);
        if !(drivers >= 0.0 && drivers.fract() == 0.0) {
            return Err(Error::Checkpoint(format!("bad driver count {drivers}")));
        }
        let affines = |name: &str| -> Result<Vec<Affine>> {
            let t = meta(c, name)?;
            if t.rank() != 2 || t.shape()[1] != 2 {
                return Err(Error::Checkpoint(format!(
                    "{name} must have shape [n, 2], found {:?}",
                    t.shape()
                )));
            }
            Ok(t.data()
                .chunks(2)
                .map(|r| Affine {
                    shift: r[0],
                    scale: r[1],
                })
                .collect())
        };
        let driver_affines = affines(META_SCALER_DRIVERS)?;
        let target = affines(META_SCALER_TARGET)?;
        if driver_affines.len() != drivers as usize || target.len() != 1 {
            return Err(Error::Checkpoint(
                "scaler records do not match the driver count".into(),
            ));
        }
        let mut store = ParamStore::new();
        for (name, t) in c.tensors.iter().filter(|(n, _)| !n.starts_with("meta.")) {
            store.add(name.clone(), t.clone());
        }
        let model =
            Model::with_parameters(config.model_spec(drivers as usize), &store).map_err(|e| {
                Error::Checkpoint(format!("parameters do not fit the stored config: {e}"))
            })?;
        let scaler = Scaler {
            mode: config.normalization,
            drivers: driver_affines,
            target: target[0],
            warnings: Vec::new(),
        };
        Ok(TrainedModel {
            config,
            model,
            scaler,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Every window of `ds`, normalized with the stored scaler.
    pub fn windows(&self, ds: &SeriesDataset) -> Result<Batch> {
        self.scaler.apply(ds)?.windows(self.config.window)
    }

    /// Metrics over every window of `ds`, in original units.
    pub fn evaluate(&self, ds: &SeriesDataset) -> Result<Metrics> {
        let batch = self.windows(ds)?;
        Ok(evaluate(&self.model, &batch, self.scaler.target, self.config.seed)?.2)
    }

    /// One row per window plus, for particle models, the final weighted
    /// ensemble of the last window.
    pub fn forecast(&self, ds: &SeriesDataset) -> Result<(Vec<ForecastRow>, Option<Snapshot>)> {
        let batch = self.windows(ds)?;
        let mut rng = rng_for(self.config.seed, EVAL_STREAM);
        let (pred, snapshot) = self.model.predict_with_snapshot(&batch, 256, &mut rng)?;
        let target = self.scaler.target;
        let rows = pred
            .iter()
            .zip(batch.labels())
            .enumerate()
            .map(|(j, (p, y))| ForecastRow {
                window: j,
                row: j + self.config.window - 1,
                actual: target.inverse(y),
                predicted: target.inverse(*p),
            })
            .collect();
        Ok((rows, snapshot))
    }
}

/// Metrics of forecast rows, as `evaluate` would report them.
pub fn forecast_metrics(rows: &[ForecastRow]) -> Result<Metrics> {
    let y: Vec<f64> = rows.iter().map(|r| r.actual).collect();
    let p: Vec<f64> = rows.iter().map(|r| r.predicted).collect();
    compute_metrics(&y, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelKind;
    use crate::synth::{synth_generate, SynthKind, SynthParams};

    fn small(kind: ModelKind) -> RunConfig {
        RunConfig {
            model: kind,
            particles: 3,
            window: 4,
            hidden: 3,
            decoder_hidden: 3,
            batch_size: 16,
            epochs: 1,
            seed: 5,
            ..RunConfig::default()
        }
    }

    #[test]
    fn checkpoint_reload_reproduces_predictions_bitwise() {
        let ds = synth_generate(
            SynthKind::DrivenAr,
            60,
            &SynthParams {
                drivers: 2,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        for kind in ModelKind::ALL {
            let (trained, report) = train_run(&small(kind), &ds).unwrap();
            assert_eq!(report.train_windows + report.test_windows, 60 - 2 * 4);
            let bytes = trained.to_checkpoint().to_bytes();
            let back =
                TrainedModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
            assert_eq!(back.to_checkpoint().to_bytes(), bytes);
            let (a, sa) = trained.forecast(&ds).unwrap();
            let (b, sb) = back.forecast(&ds).unwrap();
            let bits =
                |r: &[ForecastRow]| r.iter().map(|r| r.predicted.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b), "{kind}");
            assert_eq!(sa, sb);
            assert_eq!(
                sa.is_some(),
                kind != ModelKind::Rnn && kind != ModelKind::Darnn
            );
            assert_eq!(forecast_metrics(&a).unwrap(), back.evaluate(&ds).unwrap());
        }
    }

    #[test]
    fn held_out_metrics_match_reload() {
        let ds = synth_generate(SynthKind::LinearGaussian, 80, &SynthParams::default(), 2).unwrap();
        let cfg = small(ModelKind::CpfRnn);
        let (trained, report) = train_run(&cfg, &ds).unwrap();
        let back = TrainedModel::from_checkpoint(&trained.to_checkpoint()).unwrap();
        let (_, test) = split_train_test(&ds, cfg.train_fraction, cfg.window).unwrap();
        assert_eq!(back.evaluate(&test).unwrap(), report.test);
    }

    #[test]
    fn driver_mismatch_is_rejected() {
        let ds = synth_generate(
            SynthKind::DrivenAr,
            60,
            &SynthParams {
                drivers: 2,
                ..Default::default()
            },
            1,
        )
        .unwrap();
        let (trained, _) = train_run(&small(ModelKind::Rnn), &ds).unwrap();
        let other =
            synth_generate(SynthKind::LinearGaussian, 60, &SynthParams::default(), 1).unwrap();
        assert!(trained.evaluate(&other).is_err());
    }
}
