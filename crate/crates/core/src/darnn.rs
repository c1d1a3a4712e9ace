//! Dual-stage attention encoder-decoder. Either recurrent layer may carry a
//! particle ensemble; attention queries use the particle means.
//!
//! ```text
//! input attention     e_k = v_e' tanh(W_e [h̄; s̄] + U_e x^k),   α = softmax(e)
//! temporal attention  l_i = v_d' tanh(W_d [d̄; s̄'] + U_d h̄_i),  β = softmax(l),  c = Σ β_i h̄_i
//! decoder input       ỹ = w̃' [y; c] + b̃
//! prediction          ŷ = v_y' (W_y [d̄; c] + b_w) + b_v
//! ```

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::cpf::layer::{particle_mean, Particles};
use crate::cpf::OutHead;
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::{project_rows, Forward, ModelSpec, Recurrent, Snapshot};
use crate::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Attention, decoder-input and output parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub window: usize,
    pub hidden: usize,
    pub decoder_hidden: usize,
    /// `[1, T]`
    pub v_e: ParamId,
    /// `[T, 2m]`
    pub w_e: ParamId,
    /// `[T, T]`
    pub u_e: ParamId,
    /// `[1, m]`
    pub v_d: ParamId,
    /// `[m, 2p]`
    pub w_d: ParamId,
    /// `[m, m]`
    pub u_d: ParamId,
    /// `[1, m + 1]`
    pub w_tilde: ParamId,
    /// `[1]`
    pub b_tilde: ParamId,
    /// `[p, p + m]`
    pub w_y: ParamId,
    /// `[p]`
    pub b_w: ParamId,
    /// `[1, p]`
    pub v_y: ParamId,
    /// `[1]`
    pub b_v: ParamId,
}

impl AttentionParams {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        window: usize,
        m: usize,
        p: usize,
        rng: &mut R,
    ) -> Self {
        let mut w = |name: &str, shape: &[usize], rng: &mut R| {
            let fan = shape[1] as f64;
            store.add(format!("att.{name}"), uniform(shape, 1.0 / fan.sqrt(), rng))
        };
        let v_e = w("v_e", &[1, window], rng);
        let w_e = w("w_e", &[window, 2 * m], rng);
        let u_e = w("u_e", &[window, window], rng);
        let v_d = w("v_d", &[1, m], rng);
        let w_d = w("w_d", &[m, 2 * p], rng);
        let u_d = w("u_d", &[m, m], rng);
        let w_tilde = w("w_tilde", &[1, m + 1], rng);
        let w_y = w("w_y", &[p, p + m], rng);
        let v_y = w("v_y", &[1, p], rng);
        AttentionParams {
            window,
            hidden: m,
            decoder_hidden: p,
            v_e,
            w_e,
            u_e,
            v_d,
            w_d,
            u_d,
            w_tilde,
            b_tilde: store.add("att.b_tilde", Tensor::zeros(&[1])),
            w_y,
            b_w: store.add("att.b_w", Tensor::zeros(&[p])),
            v_y,
            b_v: store.add("att.b_v", Tensor::zeros(&[1])),
        }
    }

    /// `U_e x^k` for every series row of `[N * n, T]`.
    pub fn series_term(&self, g: &mut Graph, p: &Bound, series: Var) -> Result<Var> {
        g.matmul_t(series, p[self.u_e])
    }

    /// Input attention weights `[N, n]` from the query `[h̄; s̄]` (`[N, 2m]`)
    /// and the precomputed series term.
    pub fn input_weights(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        series_term: Var,
        drivers: usize,
    ) -> Result<Var> {
        let windows = g.shape(query)[0];
        let q = g.matmul_t(query, p[self.w_e])?;
        let q = crate::cpf::layer::expand_rows(g, q, drivers)?;
        let z = g.add(q, series_term)?;
        let z = g.tanh(z);
        let e = g.matmul_t(z, p[self.v_e])?;
        let e = g.reshape(e, &[windows, drivers])?;
        g.softmax(e)
    }

    /// Temporal attention over `[N * T, m]` window-major encoder means.
    /// Returns `(β [N, T], context [N, m])`.
    pub fn temporal(
        &self,
        g: &mut Graph,
        p: &Bound,
        query: Var,
        encoded: Var,
        encoded_term: Var,
    ) -> Result<(Var, Var)> {
        let windows = g.shape(query)[0];
        let steps = g.shape(encoded)[0] / windows.max(1);
        let q = g.matmul_t(query, p[self.w_d])?;
        let q = crate::cpf::layer::expand_rows(g, q, steps)?;
        let z = g.add(q, encoded_term)?;
        let z = g.tanh(z);
        let l = g.matmul_t(z, p[self.v_d])?;
        let l = g.reshape(l, &[windows, steps])?;
        let beta = g.softmax(l)?;
        let flat = g.reshape(beta, &[windows * steps])?;
        let weighted = g.scale_rows(encoded, flat)?;
        let cube = g.reshape(weighted, &[windows, steps, self.hidden])?;
        let context = g.sum_axis(cube, 1)?;
        Ok((beta, context))
    }

    /// `ỹ = w̃' [y; c] + b̃`, `[N, 1]`.
    pub fn decoder_input(&self, g: &mut Graph, p: &Bound, y: Var, context: Var) -> Result<Var> {
        let yc = g.concat(&[y, context], 1)?;
        let z = g.matmul_t(yc, p[self.w_tilde])?;
        g.add_row(z, p[self.b_tilde])
    }

    /// `ŷ = v_y' (W_y [d̄; c] + b_w) + b_v`, `[N, 1]`.
    pub fn output(&self, g: &mut Graph, p: &Bound, d: Var, context: Var) -> Result<Var> {
        let dc = g.concat(&[d, context], 1)?;
        let z = g.matmul_t(dc, p[self.w_y])?;
        let z = g.add_row(z, p[self.b_w])?;
        let out = g.matmul_t(z, p[self.v_y])?;
        g.add_row(out, p[self.b_v])
    }

    /// Decoder part of the read-out, `v_y' W_y[:, :p] d`, on plain rows.
    fn decoder_projection(&self, g: &Graph, p: &Bound, rows: &[f64]) -> Vec<f64> {
        let (pp, m) = (self.decoder_hidden, self.hidden);
        let w = g.value(p[self.w_y]).data();
        let v = g.value(p[self.v_y]).data();
        let a: Vec<f64> = (0..pp)
            .map(|j| (0..pp).map(|i| v[i] * w[i * (pp + m) + j]).sum())
            .collect();
        rows.chunks(pp)
            .map(|r| r.iter().zip(&a).map(|(x, y)| x * y).sum())
            .collect()
    }
}

/// Encoder output: per-step particle means, window-major `[N * T, m]`.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub means: Vec<Var>,
    pub stacked: Var,
    pub last: Particles,
    pub log_weights: Vec<Var>,
    pub attention: Vec<Var>,
}

/// Decoder output.
#[derive(Clone, Debug)]
pub struct Decoded {
    pub mean: Var,
    pub context: Var,
    pub last: Particles,
    pub log_weights: Vec<Var>,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DarnnNet {
    pub encoder: Recurrent,
    pub decoder: Recurrent,
    /// Fixed projection ordering encoder particles for continuous resampling.
    pub encoder_projection: OutHead,
    pub attention: AttentionParams,
}

impl DarnnNet {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, spec: &ModelSpec, rng: &mut R) -> Self {
        let (m, p) = (spec.hidden, spec.decoder_hidden);
        let encoder = Recurrent::init(store, "enc", m, spec.drivers, spec.kind.cpf_encoder(), rng);
        let decoder = Recurrent::init(store, "dec", p, 1, spec.kind.cpf_decoder(), rng);
        let encoder_projection = OutHead::init(store, "enc.proj", m, rng);
        let attention = AttentionParams::init(store, spec.window, m, p, rng);
        DarnnNet {
            encoder,
            decoder,
            encoder_projection,
            attention,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn encode(
        &self,
        spec: &ModelSpec,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
        noise: bool,
        snapshot: &mut Option<Snapshot>,
    ) -> Result<Encoded> {
        let (n, big_t, drivers) = (batch.windows(), batch.window(), batch.drivers());
        let k = self.encoder.count(spec.particles);
        let m = self.encoder.hidden();
        let series = g.leaf(Tensor::matrix(n * drivers, big_t, batch.series_rows())?);
        let series_term = self.attention.series_term(g, p, series)?;
        let mut state = Particles::zeros(g, n, k, m);
        let mut h_bar = g.leaf(Tensor::zeros(&[n, m]));
        let mut s_bar = g.leaf(Tensor::zeros(&[n, m]));
        let mut means = Vec::with_capacity(big_t);
        let mut log_weights = Vec::new();
        let mut attention = Vec::with_capacity(big_t);
        for t in 0..big_t {
            let query = g.concat(&[h_bar, s_bar], 1)?;
            let alpha = self
                .attention
                .input_weights(g, p, query, series_term, drivers)?;
            let x = g.leaf(Tensor::matrix(n, drivers, batch.x_step(t))?);
            let x_tilde = g.mul(alpha, x)?;
            attention.push(alpha);
            let noise_rng = if noise { Some(&mut *rng) } else { None };
            state = self.encoder.transition(g, p, &state, x_tilde, noise_rng)?;
            if t + 1 < big_t && self.encoder.is_particle() {
                let proj =
                    project_rows(g, p, &self.encoder_projection, g.value(state.hidden).data());
                let y = batch.y_step(t);
                let (lw, next) =
                    self.encoder
                        .filter(g, p, &state, &y, &proj, spec.resampler, rng, snapshot)?;
                log_weights.extend(lw);
                state = next;
            }
            h_bar = particle_mean(g, state.hidden, n, k)?;
            s_bar = particle_mean(g, state.cell, n, k)?;
            means.push(h_bar);
        }
        let wide = g.concat(&means, 1)?;
        let stacked = g.reshape(wide, &[n * big_t, m])?;
        Ok(Encoded {
            means,
            stacked,
            last: state,
            log_weights,
            attention,
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn decode(
        &self,
        spec: &ModelSpec,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        encoded: &Encoded,
        rng: &mut ChaCha8Rng,
        noise: bool,
        snapshot: &mut Option<Snapshot>,
    ) -> Result<Decoded> {
        let (n, big_t) = (batch.windows(), batch.window());
        let k = self.decoder.count(spec.particles);
        let pp = self.decoder.hidden();
        let encoded_term = g.matmul_t(encoded.stacked, p[self.attention.u_d])?;
        let mut state = Particles::zeros(g, n, k, pp);
        let mut d_bar = g.leaf(Tensor::zeros(&[n, pp]));
        let mut s_bar = g.leaf(Tensor::zeros(&[n, pp]));
        let mut log_weights = Vec::new();
        let mut attention = Vec::with_capacity(big_t);
        for t in 0..big_t - 1 {
            let query = g.concat(&[d_bar, s_bar], 1)?;
            let (beta, context) =
                self.attention
                    .temporal(g, p, query, encoded.stacked, encoded_term)?;
            attention.push(beta);
            let y = g.leaf(Tensor::matrix(n, 1, batch.y_step(t))?);
            let y_tilde = self.attention.decoder_input(g, p, y, context)?;
            let noise_rng = if noise { Some(&mut *rng) } else { None };
            state = self.decoder.transition(g, p, &state, y_tilde, noise_rng)?;
            if t + 2 < big_t && self.decoder.is_particle() {
                let proj = self
                    .attention
                    .decoder_projection(g, p, g.value(state.hidden).data());
                let next_y = batch.y_step(t + 1);
                let (lw, next) = self.decoder.filter(
                    g,
                    p,
                    &state,
                    &next_y,
                    &proj,
                    spec.resampler,
                    rng,
                    snapshot,
                )?;
                log_weights.extend(lw);
                state = next;
            }
            d_bar = particle_mean(g, state.hidden, n, k)?;
            s_bar = particle_mean(g, state.cell, n, k)?;
        }
        let query = g.concat(&[d_bar, s_bar], 1)?;
        let (beta, context) =
            self.attention
                .temporal(g, p, query, encoded.stacked, encoded_term)?;
        attention.push(beta);
        Ok(Decoded {
            mean: d_bar,
            context,
            last: state,
            log_weights,
            attention,
        })
    }

    pub fn forward(
        &self,
        spec: &ModelSpec,
        g: &mut Graph,
        p: &Bound,
        batch: &Batch,
        rng: &mut ChaCha8Rng,
        noise: bool,
    ) -> Result<Forward> {
        let mut snapshot = None;
        let enc = self.encode(spec, g, p, batch, rng, noise, &mut snapshot)?;
        let dec = self.decode(spec, g, p, batch, &enc, rng, noise, &mut snapshot)?;
        let prediction = self.attention.output(g, p, dec.mean, dec.context)?;
        let mut log_weights = enc.log_weights;
        log_weights.extend(dec.log_weights);
        Ok(Forward {
            prediction,
            log_weights,
            snapshot,
        })
    }
}

fn row(g: &mut Graph, v: &[f64]) -> Result<Var> {
    Ok(g.leaf(Tensor::matrix(1, v.len(), v.to_vec())?))
}

/// Input attention for one window `x` (`[n, T]`, one driving series per row).
pub fn input_attention(
    store: &ParamStore,
    att: &AttentionParams,
    x: &[f64],
    h_bar: &[f64],
    s_bar: &[f64],
) -> Result<Vec<f64>> {
    if !x.len().is_multiple_of(att.window) || h_bar.len() != att.hidden || s_bar.len() != att.hidden
    {
        return Err(Error::ShapeMismatch {
            op: "input_attention",
            lhs: vec![x.len(), h_bar.len(), s_bar.len()],
            rhs: vec![att.window, att.hidden, att.hidden],
        });
    }
    let drivers = x.len() / att.window;
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let series = g.leaf(Tensor::matrix(drivers, att.window, x.to_vec())?);
    let term = att.series_term(&mut g, &p, series)?;
    let hs: Vec<f64> = h_bar.iter().chain(s_bar).copied().collect();
    let query = row(&mut g, &hs)?;
    let alpha = att.input_weights(&mut g, &p, query, term, drivers)?;
    Ok(g.value(alpha).data().to_vec())
}

/// Temporal attention over `encoded` (`[T, m]`). Returns `(β, context)`.
pub fn temporal_attention(
    store: &ParamStore,
    att: &AttentionParams,
    encoded: &[f64],
    d_bar: &[f64],
    s_bar: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !encoded.len().is_multiple_of(att.hidden)
        || d_bar.len() != att.decoder_hidden
        || s_bar.len() != att.decoder_hidden
    {
        return Err(Error::ShapeMismatch {
            op: "temporal_attention",
            lhs: vec![encoded.len(), d_bar.len(), s_bar.len()],
            rhs: vec![att.hidden, att.decoder_hidden, att.decoder_hidden],
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let enc = g.leaf(Tensor::matrix(
        encoded.len() / att.hidden,
        att.hidden,
        encoded.to_vec(),
    )?);
    let term = g.matmul_t(enc, p[att.u_d])?;
    let ds: Vec<f64> = d_bar.iter().chain(s_bar).copied().collect();
    let query = row(&mut g, &ds)?;
    let (beta, context) = att.temporal(&mut g, &p, query, enc, term)?;
    Ok((
        g.value(beta).data().to_vec(),
        g.value(context).data().to_vec(),
    ))
}

/// Read-out from the final decoder mean and context.
pub fn predict_darnn(
    store: &ParamStore,
    att: &AttentionParams,
    d_bar: &[f64],
    context: &[f64],
) -> Result<f64> {
    if d_bar.len() != att.decoder_hidden || context.len() != att.hidden {
        return Err(Error::ShapeMismatch {
            op: "predict_darnn",
            lhs: vec![d_bar.len(), context.len()],
            rhs: vec![att.decoder_hidden, att.hidden],
        });
    }
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let d = row(&mut g, d_bar)?;
    let c = row(&mut g, context)?;
    let y = att.output(&mut g, &p, d, c)?;
    Ok(g.value(y).data()[0])
}
