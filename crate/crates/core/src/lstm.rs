//! LSTM recurrence, batched over rows.
//!
//! ```text
//! f = σ(W_f [h; x] + b_f)     i = σ(W_i [h; x] + b_i)
//! o = σ(W_o [h; x] + b_o)     C̃ = tanh(W_C [h; x] + b_C)
//! C' = f * C + i * C̃          h' = o * tanh(C')
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{uniform, Bound, ParamId, ParamStore};
use crate::tensor::{Graph, Tensor, Var};

/// Gate weights (`hidden x (hidden + input)`, hidden-first concatenation)
/// and biases (`hidden`).
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    pub input: usize,
    pub w_f: ParamId,
    pub w_i: ParamId,
    pub w_o: ParamId,
    pub w_c: ParamId,
    pub b_f: ParamId,
    pub b_i: ParamId,
    pub b_o: ParamId,
    pub b_c: ParamId,
}

impl LstmParams {
    /// Weights uniform in `±1/sqrt(hidden + input)`, biases zero except the
    /// forget gate, which starts at one.
    pub fn init<R: rand::Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Self {
        let fan = hidden + input;
        let bound = 1.0 / (fan as f64).sqrt();
        let mut w = |gate: &str, rng: &mut R| {
            store.add(
                format!("{prefix}.w_{gate}"),
                uniform(&[hidden, fan], bound, rng),
            )
        };
        let w_f = w("f", rng);
        let w_i = w("i", rng);
        let w_o = w("o", rng);
        let w_c = w("c", rng);
        LstmParams {
            hidden,
            input,
            w_f,
            w_i,
            w_o,
            w_c,
            b_f: store.add(format!("{prefix}.b_f"), Tensor::full(&[hidden], 1.0)),
            b_i: store.add(format!("{prefix}.b_i"), Tensor::zeros(&[hidden])),
            b_o: store.add(format!("{prefix}.b_o"), Tensor::zeros(&[hidden])),
            b_c: store.add(format!("{prefix}.b_c"), Tensor::zeros(&[hidden])),
        }
    }

    /// One step for every row: `h`, `c` are `[rows, hidden]`, `x` is
    /// `[rows, input]`.
    pub fn step(&self, g: &mut Graph, p: &Bound, h: Var, c: Var, x: Var) -> Result<(Var, Var)> {
        let (hs, cs, xs) = (g.shape(h), g.shape(c), g.shape(x));
        if hs.len() != 2 || hs[1] != self.hidden || hs != cs {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: hs.to_vec(),
                rhs: vec![hs.first().copied().unwrap_or(0), self.hidden],
            });
        }
        if xs.len() != 2 || xs[0] != hs[0] || xs[1] != self.input {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                lhs: xs.to_vec(),
                rhs: vec![hs[0], self.input],
            });
        }
        let hx = g.concat(&[h, x], 1)?;
        let gate = |g: &mut Graph, w: ParamId, b: ParamId| -> Result<Var> {
            let z = g.matmul_t(hx, p[w])?;
            g.add_row(z, p[b])
        };
        let f = gate(g, self.w_f, self.b_f)?;
        let f = g.sigmoid(f);
        let i = gate(g, self.w_i, self.b_i)?;
        let i = g.sigmoid(i);
        let o = gate(g, self.w_o, self.b_o)?;
        let o = g.sigmoid(o);
        let cand = gate(g, self.w_c, self.b_c)?;
        let cand = g.tanh(cand);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }
}

/// Fresh parameters in their own store, deterministic in `seed`.
pub fn init_lstm(hidden: usize, input: usize, seed: u64) -> (ParamStore, LstmParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = LstmParams::init(&mut store, "lstm", hidden, input, &mut rng);
    (store, params)
}

/// Single unbatched step on plain vectors.
pub fn lstm_step(
    store: &ParamStore,
    params: &LstmParams,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let p = store.bind(&mut g);
    let h = g.leaf(Tensor::matrix(1, h_prev.len(), h_prev.to_vec())?);
    let c = g.leaf(Tensor::matrix(1, c_prev.len(), c_prev.to_vec())?);
    let x = g.leaf(Tensor::matrix(1, x.len(), x.to_vec())?);
    let (h, c) = params.step(&mut g, &p, h, c, x)?;
    Ok((g.value(h).data().to_vec(), g.value(c).data().to_vec()))
}
