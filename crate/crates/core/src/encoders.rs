//! Sequence encoders: stacked LSTM, GRU and Elman RNN cells, plus a
//! one-layer temporal convolution used as a non-recurrent baseline.
//!
//! All encoders work on mini-batches: a time step is an
//! `input_width x batch` matrix and hidden states are `hidden x batch`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, ParamId, ParamStore, Tape, Var};

/// Temporal convolution kernel width.
pub const CONV_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Lstm,
    Gru,
    Rnn,
    Cnn,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 4] = [
        EncoderKind::Lstm,
        EncoderKind::Gru,
        EncoderKind::Rnn,
        EncoderKind::Cnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm",
            EncoderKind::Gru => "gru",
            EncoderKind::Rnn => "rnn",
            EncoderKind::Cnn => "cnn",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(EncoderKind::Lstm),
            "gru" => Ok(EncoderKind::Gru),
            "rnn" => Ok(EncoderKind::Rnn),
            "cnn" => Ok(EncoderKind::Cnn),
            other => Err(Error::Config(format!("unknown encoder kind `{other}`"))),
        }
    }
}

/// LSTM cell: forget, input and output gates plus the candidate state.
/// Every weight is `hidden x (hidden + input)` and acts on `[h_{t-1}; x_t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    pub w_f: ParamId,
    pub w_j: ParamId,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub b_f: ParamId,
    pub b_j: ParamId,
    pub b_c: ParamId,
    pub b_o: ParamId,
    pub input_width: usize,
    pub hidden_width: usize,
}

/// GRU cell with reset gate `r`, update gate `z` and candidate weight `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct GruCellParams {
    pub w_r: ParamId,
    pub w_z: ParamId,
    pub w: ParamId,
    pub b_r: ParamId,
    pub b_z: ParamId,
    pub b_c: ParamId,
    pub input_width: usize,
    pub hidden_width: usize,
}

/// Elman cell, `h_t = tanh(W·[h_{t-1}; x_t] + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RnnCellParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input_width: usize,
    pub hidden_width: usize,
}

/// Kernel-3 temporal convolution with tanh, mean-pooled over time and
/// followed by a tanh dense layer to the representation width.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub kernel: ParamId,
    pub bias: ParamId,
    pub dense_w: ParamId,
    pub dense_b: ParamId,
    pub input_width: usize,
    pub channels: usize,
    pub hidden_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RecurrentLayer {
    Lstm(LstmCellParams),
    Gru(GruCellParams),
    Rnn(RnnCellParams),
}

#[derive(Clone, Debug, PartialEq)]
pub enum EncoderBody {
    Recurrent(Vec<RecurrentLayer>),
    Conv(ConvParams),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStack {
    pub kind: EncoderKind,
    pub input_width: usize,
    pub hidden_width: usize,
    pub body: EncoderBody,
}

fn gate_weight<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: String,
    input: usize,
    hidden: usize,
    rng: &mut R,
) -> ParamId {
    store.add_glorot(name, hidden, hidden + input, rng)
}

impl LstmCellParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_f: gate_weight(store, format!("{prefix}.w_f"), input, hidden, rng),
            w_j: gate_weight(store, format!("{prefix}.w_j"), input, hidden, rng),
            w_c: gate_weight(store, format!("{prefix}.w_c"), input, hidden, rng),
            w_o: gate_weight(store, format!("{prefix}.w_o"), input, hidden, rng),
            b_f: store.add_zeros(format!("{prefix}.b_f"), hidden, 1),
            b_j: store.add_zeros(format!("{prefix}.b_j"), hidden, 1),
            b_c: store.add_zeros(format!("{prefix}.b_c"), hidden, 1),
            b_o: store.add_zeros(format!("{prefix}.b_o"), hidden, 1),
            input_width: input,
            hidden_width: hidden,
        }
    }

    pub fn scalar_count(input: usize, hidden: usize) -> usize {
        4 * (hidden * (hidden + input) + hidden)
    }
}

impl GruCellParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w_r: gate_weight(store, format!("{prefix}.w_r"), input, hidden, rng),
            w_z: gate_weight(store, format!("{prefix}.w_z"), input, hidden, rng),
            w: gate_weight(store, format!("{prefix}.w"), input, hidden, rng),
            b_r: store.add_zeros(format!("{prefix}.b_r"), hidden, 1),
            b_z: store.add_zeros(format!("{prefix}.b_z"), hidden, 1),
            b_c: store.add_zeros(format!("{prefix}.b_c"), hidden, 1),
            input_width: input,
            hidden_width: hidden,
        }
    }

    pub fn scalar_count(input: usize, hidden: usize) -> usize {
        3 * (hidden * (hidden + input) + hidden)
    }
}

impl RnnCellParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            w: gate_weight(store, format!("{prefix}.w"), input, hidden, rng),
            b: store.add_zeros(format!("{prefix}.b"), hidden, 1),
            input_width: input,
            hidden_width: hidden,
        }
    }

    pub fn scalar_count(input: usize, hidden: usize) -> usize {
        hidden * (hidden + input) + hidden
    }
}

impl ConvParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        channels: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            kernel: store.add_glorot(format!("{prefix}.kernel"), channels, CONV_KERNEL * input, rng),
            bias: store.add_zeros(format!("{prefix}.bias"), channels, 1),
            dense_w: store.add_glorot(format!("{prefix}.dense_w"), hidden, channels, rng),
            dense_b: store.add_zeros(format!("{prefix}.dense_b"), hidden, 1),
            input_width: input,
            channels,
            hidden_width: hidden,
        }
    }

    pub fn scalar_count(input: usize, channels: usize, hidden: usize) -> usize {
        channels * (CONV_KERNEL * input + 1) + hidden * (channels + 1)
    }
}

impl EncoderStack {
    /// Builds a freshly initialized encoder; weights are Glorot-uniform,
    /// biases zero. For `Cnn`, `depth` is ignored and the convolution uses
    /// `hidden` channels.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        kind: EncoderKind,
        input_width: usize,
        hidden_width: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if depth == 0 || hidden_width == 0 || input_width == 0 {
            return Err(Error::contract(format!(
                "encoder needs depth, input and hidden widths >= 1 (got {depth}, {input_width}, {hidden_width})"
            )));
        }
        let body = if kind == EncoderKind::Cnn {
            EncoderBody::Conv(ConvParams::new(
                store,
                &format!("{prefix}.conv"),
                input_width,
                hidden_width,
                hidden_width,
                rng,
            ))
        } else {
            let layers = (0..depth)
                .map(|l| {
                    let input = if l == 0 { input_width } else { hidden_width };
                    let name = format!("{prefix}.l{l}");
                    match kind {
                        EncoderKind::Lstm => RecurrentLayer::Lstm(LstmCellParams::new(
                            store,
                            &name,
                            input,
                            hidden_width,
                            rng,
                        )),
                        EncoderKind::Gru => RecurrentLayer::Gru(GruCellParams::new(
                            store,
                            &name,
                            input,
                            hidden_width,
                            rng,
                        )),
                        _ => RecurrentLayer::Rnn(RnnCellParams::new(
                            store,
                            &name,
                            input,
                            hidden_width,
                            rng,
                        )),
                    }
                })
                .collect();
            EncoderBody::Recurrent(layers)
        };
        Ok(Self {
            kind,
            input_width,
            hidden_width,
            body,
        })
    }

    pub fn depth(&self) -> usize {
        match &self.body {
            EncoderBody::Recurrent(layers) => layers.len(),
            EncoderBody::Conv(_) => 1,
        }
    }

    /// Closed-form number of scalar parameters.
    pub fn scalar_count(kind: EncoderKind, input: usize, hidden: usize, depth: usize) -> usize {
        let per_layer = |i: usize| match kind {
            EncoderKind::Lstm => LstmCellParams::scalar_count(i, hidden),
            EncoderKind::Gru => GruCellParams::scalar_count(i, hidden),
            EncoderKind::Rnn => RnnCellParams::scalar_count(i, hidden),
            EncoderKind::Cnn => unreachable!(),
        };
        match kind {
            EncoderKind::Cnn => ConvParams::scalar_count(input, hidden, hidden),
            _ => per_layer(input) + (depth - 1) * per_layer(hidden),
        }
    }
}

fn check_step_shapes(
    tape: &Tape,
    x: Var,
    h: Var,
    input: usize,
    hidden: usize,
    op: &'static str,
) -> Result<()> {
    let (xs, hs) = (tape.value(x).shape(), tape.value(h).shape());
    if xs.0 != input || hs.0 != hidden || xs.1 != hs.1 {
        return Err(Error::Shape { op, left: xs, right: hs });
    }
    Ok(())
}

fn affine(tape: &mut Tape, w: ParamId, b: ParamId, input: Var) -> Result<Var> {
    let z = tape.matmul(tape.param(w), input)?;
    tape.add_bias(z, tape.param(b))
}

/// One LSTM step; returns `(h_t, c_t)`.
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmCellParams,
) -> Result<(Var, Var)> {
    check_step_shapes(tape, x, h_prev, p.input_width, p.hidden_width, "lstm_step")?;
    tape.value(c_prev).check_same_shape(tape.value(h_prev), "lstm_step")?;
    let hx = tape.vstack(&[h_prev, x])?;
    let f = affine(tape, p.w_f, p.b_f, hx)?;
    let f = tape.sigmoid(f);
    let j = affine(tape, p.w_j, p.b_j, hx)?;
    let j = tape.sigmoid(j);
    let cand = affine(tape, p.w_c, p.b_c, hx)?;
    let cand = tape.tanh(cand);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(j, cand)?;
    let c = tape.add(keep, write)?;
    let o = affine(tape, p.w_o, p.b_o, hx)?;
    let o = tape.sigmoid(o);
    let c_act = tape.tanh(c);
    let h = tape.mul(o, c_act)?;
    Ok((h, c))
}

pub fn gru_step(tape: &mut Tape, x: Var, h_prev: Var, p: &GruCellParams) -> Result<Var> {
    check_step_shapes(tape, x, h_prev, p.input_width, p.hidden_width, "gru_step")?;
    let hx = tape.vstack(&[h_prev, x])?;
    let r = affine(tape, p.w_r, p.b_r, hx)?;
    let r = tape.sigmoid(r);
    let z = affine(tape, p.w_z, p.b_z, hx)?;
    let z = tape.sigmoid(z);
    let rh = tape.mul(r, h_prev)?;
    let rhx = tape.vstack(&[rh, x])?;
    let cand = affine(tape, p.w, p.b_c, rhx)?;
    let cand = tape.tanh(cand);
    let keep_gate = tape.one_minus(z);
    let keep = tape.mul(keep_gate, h_prev)?;
    let write = tape.mul(z, cand)?;
    tape.add(keep, write)
}

pub fn rnn_step(tape: &mut Tape, x: Var, h_prev: Var, p: &RnnCellParams) -> Result<Var> {
    check_step_shapes(tape, x, h_prev, p.input_width, p.hidden_width, "rnn_step")?;
    let hx = tape.vstack(&[h_prev, x])?;
    let z = affine(tape, p.w, p.b, hx)?;
    Ok(tape.tanh(z))
}

/// Runs the encoder over a time-ordered window and returns the final
/// representation (`hidden x batch`).
///
/// Recurrent stacks start from zero states and return the top layer's last
/// hidden state. The convolutional encoder requires at least
/// [`CONV_KERNEL`] steps.
pub fn encode_sequence(tape: &mut Tape, window: &[Var], stack: &EncoderStack) -> Result<Var> {
    let first = *window
        .first()
        .ok_or_else(|| Error::contract("encode_sequence: empty window"))?;
    let batch = tape.value(first).cols();
    for &x in window {
        let s = tape.value(x).shape();
        if s != (stack.input_width, batch) {
            return Err(Error::Shape {
                op: "encode_sequence",
                left: s,
                right: (stack.input_width, batch),
            });
        }
    }
    match &stack.body {
        EncoderBody::Recurrent(layers) => {
            let zero = tape.input(Matrix::zeros(stack.hidden_width, batch));
            let mut h = vec![zero; layers.len()];
            let mut c = vec![zero; layers.len()];
            for &x in window {
                let mut below = x;
                for (l, layer) in layers.iter().enumerate() {
                    h[l] = match layer {
                        RecurrentLayer::Lstm(p) => {
                            let (hn, cn) = lstm_step(tape, below, h[l], c[l], p)?;
                            c[l] = cn;
                            hn
                        }
                        RecurrentLayer::Gru(p) => gru_step(tape, below, h[l], p)?,
                        RecurrentLayer::Rnn(p) => rnn_step(tape, below, h[l], p)?,
                    };
                    below = h[l];
                }
            }
            Ok(*h.last().expect("depth >= 1"))
        }
        EncoderBody::Conv(p) => conv_encode(tape, window, p),
    }
}

fn conv_encode(tape: &mut Tape, window: &[Var], p: &ConvParams) -> Result<Var> {
    if window.len() < CONV_KERNEL {
        return Err(Error::contract(format!(
            "convolutional encoder needs at least {CONV_KERNEL} steps, got {}",
            window.len()
        )));
    }
    let mut outputs = Vec::with_capacity(window.len() - CONV_KERNEL + 1);
    for span in window.windows(CONV_KERNEL) {
        let stacked = tape.vstack(span)?;
        let z = affine(tape, p.kernel, p.bias, stacked)?;
        outputs.push(tape.tanh(z));
    }
    let n = outputs.len() as f64;
    let total = tape.sum(&outputs)?;
    let pooled = tape.scale(total, 1.0 / n);
    let z = affine(tape, p.dense_w, p.dense_b, pooled)?;
    Ok(tape.tanh(z))
}

/// Evaluates an encoder on plain matrices (no gradients needed).
pub fn encode(store: &ParamStore, stack: &EncoderStack, window: &[Matrix]) -> Result<Matrix> {
    let mut tape = Tape::new();
    tape.bind(store);
    let vars: Vec<Var> = window.iter().map(|m| tape.input(m.clone())).collect();
    let out = encode_sequence(&mut tape, &vars, stack)?;
    Ok(tape.value(out).clone())
}
