//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::cpf::Resampler;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::model::{ModelKind, ModelSpec};
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub particles: usize,
    pub window: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    pub kappa: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub resampler: Resampler,
    pub normalization: Normalization,
    pub target: String,
    pub train_fraction: f64,
    pub grad_clip: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::CpfRnn,
            particles: 10,
            window: 10,
            hidden: 16,
            decoder_hidden: 16,
            kappa: 0.1,
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            resampler: Resampler::Continuous,
            normalization: Normalization::Zscore,
            target: "y".into(),
            train_fraction: 0.8,
            grad_clip: 5.0,
        }
    }
}

pub const KEYS: [&str; 15] = [
    "model",
    "particles",
    "window",
    "hidden",
    "decoder_hidden",
    "kappa",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "resampler",
    "normalization",
    "target",
    "train_fraction",
    "grad_clip",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        msg: format!("invalid value `{value}`: {e}"),
    })
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment. Keys not set keep
    /// their defaults; unknown or repeated keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                key: String::new(),
                msg: format!("line {}: expected key = value, found `{line}`", i + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("line {}: key set twice", i + 1),
                });
            }
            seen.push(key);
            c.set(key, value)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model" => self.model = parse(key, value)?,
            "particles" => self.particles = parse(key, value)?,
            "window" => self.window = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "decoder_hidden" => self.decoder_hidden = parse(key, value)?,
            "kappa" => self.kappa = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "resampler" => self.resampler = parse(key, value)?,
            "normalization" => self.normalization = parse(key, value)?,
            "target" => {
                if value.is_empty() {
                    return Err(Error::Config {
                        key: key.into(),
                        msg: "target column name is empty".into(),
                    });
                }
                self.target = value.to_string()
            }
            "train_fraction" => self.train_fraction = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.into(),
                    msg: format!("unknown key (known keys: {})", KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Config {
                key: key.into(),
                msg,
            })
        };
        if self.particles == 0 {
            return bad("particles", "must be at least 1".into());
        }
        if self.window < 2 {
            return bad("window", format!("must be at least 2, got {}", self.window));
        }
        if self.hidden == 0 {
            return bad("hidden", "must be at least 1".into());
        }
        if self.decoder_hidden == 0 {
            return bad("decoder_hidden", "must be at least 1".into());
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return bad(
                "kappa",
                format!("must be a non-negative number, got {}", self.kappa),
            );
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(
                "learning_rate",
                format!("must be a non-negative number, got {}", self.learning_rate),
            );
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(
                "train_fraction",
                format!("must lie in (0, 1), got {}", self.train_fraction),
            );
        }
        if !(self.grad_clip > 0.0) {
            return bad(
                "grad_clip",
                format!("must be positive, got {}", self.grad_clip),
            );
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let value = match key {
                "model" => self.model.to_string(),
                "particles" => self.particles.to_string(),
                "window" => self.window.to_string(),
                "hidden" => self.hidden.to_string(),
                "decoder_hidden" => self.decoder_hidden.to_string(),
                "kappa" => format!("{:?}", self.kappa),
                "learning_rate" => format!("{:?}", self.learning_rate),
                "batch_size" => self.batch_size.to_string(),
                "epochs" => self.epochs.to_string(),
                "seed" => self.seed.to_string(),
                "resampler" => self.resampler.to_string(),
                "normalization" => self.normalization.to_string(),
                "target" => self.target.clone(),
                "train_fraction" => format!("{:?}", self.train_fraction),
                "grad_clip" => format!("{:?}", self.grad_clip),
                _ => unreachable!(),
            };
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }

    pub fn model_spec(&self, drivers: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            drivers,
            window: self.window,
            hidden: self.hidden,
            decoder_hidden: self.decoder_hidden,
            particles: self.particles,
            resampler: self.resampler,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            kappa: self.kappa,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            grad_clip: self.grad_clip,
        }
    }
}
