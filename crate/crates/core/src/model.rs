//! Forecasting models: a (particle) LSTM with a linear read-out, and the
//! attention encoder-decoder variants.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpf::layer::{self, draw_uniforms, particle_mean, CpfLstm, Particles};
use crate::cpf::{OutHead, Resampler};
use crate::darnn::DarnnNet;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::lstm::LstmParams;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Rnn,
    CpfRnn,
    Darnn,
    CpfEnc,
    CpfDec,
    CpfDarnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Rnn,
        ModelKind::CpfRnn,
        ModelKind::Darnn,
        ModelKind::CpfEnc,
        ModelKind::CpfDec,
        ModelKind::CpfDarnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Rnn => "rnn",
            ModelKind::CpfRnn => "cpf-rnn",
            ModelKind::Darnn => "darnn",
            ModelKind::CpfEnc => "cpf-enc",
            ModelKind::CpfDec => "cpf-dec",
            ModelKind::CpfDarnn => "cpf-darnn",
        }
    }

    pub fn is_darnn(self) -> bool {
        !matches!(self, ModelKind::Rnn | ModelKind::CpfRnn)
    }

    /// Whether the (encoder) recurrent layer carries a particle ensemble.
    pub fn cpf_encoder(self) -> bool {
        matches!(
            self,
            ModelKind::CpfRnn | ModelKind::CpfEnc | ModelKind::CpfDarnn
        )
    }

    pub fn cpf_decoder(self) -> bool {
        matches!(self, ModelKind::CpfDec | ModelKind::CpfDarnn)
    }

    /// Only the single-layer particle model trains on the likelihood bound;
    /// encoder-decoder modes use the task loss alone.
    pub fn uses_elbo(self) -> bool {
        self == ModelKind::CpfRnn
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("model", format!("unknown model `{s}` (expected rnn, cpf-rnn, darnn, cpf-enc, cpf-dec or cpf-darnn)")))
    }
}

/// Structural hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Number of driving series `n`.
    pub drivers: usize,
    /// Window length `T`.
    pub window: usize,
    /// Encoder (or only) hidden size `m`.
    pub hidden: usize,
    /// Decoder hidden size `p`.
    pub decoder_hidden: usize,
    /// Particle count `K` of every particle layer.
    pub particles: usize,
    pub resampler: Resampler,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::invalid("model", msg));
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        if self.hidden == 0 || self.decoder_hidden == 0 {
            return bad("hidden sizes must be positive".into());
        }
        if self.particles == 0 {
            return bad("particles must be at least 1".into());
        }
        if self.kind.is_darnn() && self.drivers == 0 {
            return bad(format!("{} needs at least one driving series", self.kind));
        }
        Ok(())
    }
}

/// A recurrent layer that either evolves one deterministic state per window
/// or a particle ensemble.
#[derive(Clone, Debug, PartialEq)]
pub enum Recurrent {
    Plain(LstmParams),
    Particle(CpfLstm),
}

impl Recurrent {
    pub fn init<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        particle: bool,
        rng: &mut R,
    ) -> Self {
        if particle {
            Recurrent::Particle(CpfLstm::init(store, prefix, hidden, input, rng))
        } else {
            Recurrent::Plain(LstmParams::init(
                store,
                &format!("{prefix}.lstm"),
                hidden,
                input,
                rng,
            ))
        }
    }

    pub fn lstm(&self) -> &LstmParams {
        match self {
            Recurrent::Plain(l) => l,
            Recurrent::Particle(c) => &c.lstm,
        }
    }

    pub fn hidden(&self) -> usize {
        self.lstm().hidden
    }

    pub fn is_particle(&self) -> bool {
        matches!(self, Recurrent::Particle(_))
    }

    /// Particles carried per window.
    pub fn count(&self, k: usize) -> usize {
        if self.is_particle() {
            k
        } else {
            1
        }
    }

    pub fn transition(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &Particles,
        x: Var,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Particles> {
        match self {
            Recurrent::Plain(l) => {
                let (hidden, cell) = l.step(g, p, state.hidden, state.cell, x)?;
                Ok(Particles {
                    hidden,
                    cell,
                    ..*state
                })
            }
            Recurrent::Particle(c) => c.transition(g, p, state, x, noise),
        }
    }

    /// Measurement update followed by resampling. Returns the log-weights
    /// (`None` for plain layers) and the resampled ensemble.
    #[allow(clippy::too_many_arguments)]
    pub fn filter(
        &self,
        g: &mut Graph,
        p: &Bound,
        state: &Particles,
        y: &[f64],
        projections: &[f64],
        resampler: Resampler,
        rng: &mut ChaCha8Rng,
        snapshot: &mut Option<Snapshot>,
    ) -> Result<(Option<Var>, Particles)> {
        let Recurrent::Particle(c) = self else {
            return Ok((None, *state));
        };
        let lw = c.measure(g, p, state, y)?;
        let pi = g.softmax(lw)?;
        *snapshot = Some(Snapshot {
            count: state.count,
            projections: projections.to_vec(),
            weights: g.value(pi).data().to_vec(),
        });
        let u = draw_uniforms(resampler, state.windows, state.count, rng);
        let next = layer::resample(g, state, resampler, pi, projections, &u)?;
        Ok((Some(lw), next))
    }
}

/// Projections and normalized weights of the last measured ensemble of each
/// window, `[windows * count]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub count: usize,
    pub projections: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Result of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[windows, 1]`.
    pub prediction: Var,
    /// One `[windows, K]` tensor per measured step.
    pub log_weights: Vec<Var>,
    pub snapshot: Option<Snapshot>,
}

/// Single recurrent layer over `[x_t; y_{t-1}]` with a linear read-out of the
/// particle mean.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnNet {
    pub layer: Recurrent,
    pub out: OutHead,
}

impl RnnNet {
    fn forward(
        &self,
        spec: &ModelSpec,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
        noise: bool,
    ) -> Result<Forward> {
        let (n, big_t) = (batch.windows(), batch.window());
        let k = self.layer.count(spec.particles);
        let mut state = Particles::zeros(g, n, k, self.layer.hidden());
        let mut log_weights = Vec::new();
        let mut snapshot = None;
        let mut prev_y = vec![0.0; n];
        for t in 0..big_t {
            let x = batch.x_step(t);
            let z: Vec<f64> = (0..n)
                .flat_map(|i| {
                    x[i * batch.drivers()..(i + 1) * batch.drivers()]
                        .iter()
                        .copied()
                        .chain([prev_y[i]])
                })
                .collect();
            let z = g.leaf(Tensor::matrix(n, batch.drivers() + 1, z)?);
            let noise_rng = if noise { Some(&mut *rng) } else { None };
            state = self.layer.transition(g, p, &state, z, noise_rng)?;
            if t + 1 < big_t {
                let y = batch.y_step(t);
                if self.layer.is_particle() {
                    let proj = project_rows(g, p, &self.out, g.value(state.hidden).data());
                    let (lw, next) = self.layer.filter(
                        g,
                        p,
                        &state,
                        &y,
                        &proj,
                        spec.resampler,
                        rng,
                        &mut snapshot,
                    )?;
                    log_weights.extend(lw);
                    state = next;
                }
                prev_y = y;
            }
        }
        let mean = particle_mean(g, state.hidden, n, k)?;
        let prediction = self.out.forward(g, p, mean)?;
        Ok(Forward {
            prediction,
            log_weights,
            snapshot,
        })
    }
}

/// Evaluates an output head on plain `[rows, dim]` values using the
/// parameter values held by `g`.
pub(crate) fn project_rows(g: &Graph, p: &Bound, head: &OutHead, rows: &[f64]) -> Vec<f64> {
    let w = g.value(p[head.w]).data();
    let b = g.value(p[head.b]).data()[0];
    rows.chunks(head.dim)
        .map(|r| r.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub enum Net {
    Rnn(RnnNet),
    Darnn(Box<DarnnNet>),
}

/// Parameters plus structure of one forecasting model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub store: ParamStore,
    pub net: Net,
    /// Transition noise in particle layers; off makes them deterministic.
    pub noise: bool,
}

impl Model {
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let net = if spec.kind.is_darnn() {
            Net::Darnn(Box::new(DarnnNet::init(&mut store, &spec, &mut rng)))
        } else {
            let layer = Recurrent::init(
                &mut store,
                "enc",
                spec.hidden,
                spec.drivers + 1,
                spec.kind.cpf_encoder(),
                &mut rng,
            );
            let out = OutHead::init(&mut store, "out", spec.hidden, &mut rng);
            Net::Rnn(RnnNet { layer, out })
        };
        Ok(Model {
            spec,
            store,
            net,
            noise: true,
        })
    }

    /// Rebuilds the structure for `spec` and takes every parameter value from
    /// `values`, which must match by name and shape.
    pub fn with_parameters(spec: ModelSpec, values: &ParamStore) -> Result<Self> {
        let mut model = Model::new(spec, 0)?;
        if values.len() != model.store.len() {
            return Err(Error::invalid(
                "model",
                format!(
                    "expected {} parameter tensors, found {}",
                    model.store.len(),
                    values.len()
                ),
            ));
        }
        for (name, t) in values.iter() {
            model.store.set(name, t.clone())?;
        }
        Ok(model)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        self.check_batch(batch)?;
        match &self.net {
            Net::Rnn(net) => net.forward(&self.spec, g, p, batch, rng, self.noise),
            Net::Darnn(net) => net.forward(&self.spec, g, p, batch, rng, self.noise),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.window() != self.spec.window || batch.drivers() != self.spec.drivers {
            return Err(Error::ShapeMismatch {
                op: "model.forward",
                lhs: vec![batch.window(), batch.drivers()],
                rhs: vec![self.spec.window, self.spec.drivers],
            });
        }
        Ok(())
    }

    /// Predictions for every window, evaluated `chunk` windows at a time.
    pub fn predict(&self, batch: &Batch, chunk: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(self.predict_with_snapshot(batch, chunk, rng)?.0)
    }

    /// Like [`Model::predict`], also returning the last measured ensemble of
    /// the final window when the model carries particles.
    pub fn predict_with_snapshot(
        &self,
        batch: &Batch,
        chunk: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<f64>, Option<Snapshot>)> {
        self.check_batch(batch)?;
        let mut out = Vec::with_capacity(batch.windows());
        let mut last = None;
        let idx: Vec<usize> = (0..batch.windows()).collect();
        for part in idx.chunks(chunk.max(1)) {
            let sub = batch.select(part);
            let mut g = Graph::new();
            let p = self.store.bind(&mut g);
            let f = self.forward(&mut g, &p, &sub, rng)?;
            out.extend_from_slice(g.value(f.prediction).data());
            last = f.snapshot.map(|s| {
                let k = s.count;
                let from = (part.len() - 1) * k;
                Snapshot {
                    count: k,
                    projections: s.projections[from..].to_vec(),
                    weights: s.weights[from..].to_vec(),
                }
            });
        }
        Ok((out, last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::lstm_step;

    fn spec(kind: ModelKind, k: usize) -> ModelSpec {
        ModelSpec {
            kind,
            drivers: 2,
            window: 4,
            hidden: 3,
            decoder_hidden: 3,
            particles: k,
            resampler: Resampler::Continuous,
        }
    }

    fn batch() -> Batch {
        let x: Vec<f64> = (0..2 * 4 * 2)
            .map(|i| ((i * 5) % 7) as f64 * 0.2 - 0.6)
            .collect();
        let y: Vec<f64> = (0..2 * 4)
            .map(|i| ((i * 3) % 5) as f64 * 0.25 - 0.5)
            .collect();
        Batch::new(x, y, 2, 4, 2).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("lstm".parse::<ModelKind>().is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = spec(ModelKind::Darnn, 1);
        s.drivers = 0;
        assert!(Model::new(s.clone(), 0).is_err());
        s.kind = ModelKind::Rnn;
        assert!(Model::new(s.clone(), 0).is_ok());
        s.window = 1;
        assert!(Model::new(s, 0).is_err());
    }

    #[test]
    fn rnn_matches_hand_unrolled_lstm() {
        let model = Model::new(spec(ModelKind::Rnn, 1), 3).unwrap();
        let b = batch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pred = model.predict(&b, 8, &mut rng).unwrap();
        let Net::Rnn(net) = &model.net else {
            unreachable!()
        };
        for i in 0..2 {
            let (mut h, mut c) = (vec![0.0; 3], vec![0.0; 3]);
            let mut prev = 0.0;
            for t in 0..4 {
                let x = b.x_step(t);
                let z = [x[2 * i], x[2 * i + 1], prev];
                (h, c) = lstm_step(&model.store, net.layer.lstm(), &h, &c, &z).unwrap();
                prev = b.y_step(t)[i];
            }
            let expected = net.out.project(&model.store, &h)[0];
            assert!((pred[i] - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn particle_model_records_measured_steps() {
        let model = Model::new(spec(ModelKind::CpfRnn, 5), 3).unwrap();
        let mut g = Graph::new();
        let p = model.store.bind(&mut g);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = model.forward(&mut g, &p, &batch(), &mut rng).unwrap();
        assert_eq!(f.log_weights.len(), 3);
        assert_eq!(g.shape(f.log_weights[0]), &[2, 5]);
        assert_eq!(g.shape(f.prediction), &[2, 1]);
        let snap = f.snapshot.unwrap();
        assert_eq!(snap.weights.len(), 10);
    }

    #[test]
    fn with_parameters_round_trips() {
        let a = Model::new(spec(ModelKind::CpfDarnn, 3), 8).unwrap();
        let b = Model::with_parameters(a.spec.clone(), &a.store).unwrap();
        assert_eq!(a, b);
        let other = Model::new(spec(ModelKind::Rnn, 1), 8).unwrap();
        assert!(Model::with_parameters(a.spec.clone(), &other.store).is_err());
    }

    #[test]
    fn batch_shape_checked() {
        let mut s = spec(ModelKind::Rnn, 1);
        s.window = 5;
        let model = Model::new(s, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(model.predict(&batch(), 4, &mut rng).is_err());
    }
}
