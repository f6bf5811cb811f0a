//! Convolutional LSTM: gate and state transforms are 2-D convolutions, so
//! hidden state keeps the spatial layout of the input.
//!
//! Per step, with `∗` convolution and `∘` the pixel-wise product:
//!
//! ```text
//! C̃_t = tanh(W_xc ∗ x̂_t + W_hc ∗ H_{t−1} + b_c)
//! i_t  = σ(W_xi ∗ x̂_t + W_hi ∗ H_{t−1} + b_i)
//! f_t  = σ(W_xf ∗ x̂_t + W_hf ∗ H_{t−1} + b_f)
//! C_t  = f_t ∘ C_{t−1} + i_t ∘ C̃_t
//! o_t  = σ(W_xo ∗ x̂_t + W_ho ∗ H_{t−1} + b_o)
//! H_t  = o_t ∘ tanh(C_t)
//! ```
//!
//! Biases are optional (`bias: false` gives the literal bias-free equations,
//! which the transcription oracles use). All convolutions are "same"-padded,
//! so H and C never change spatial size across time.

use crate::error::{CrnError, Result};
use crate::params::{init_uniform, ParamBinding, ParamId, ParamSet};
use crate::tensor::{same_padding, Shape, Tape, Tensor, Var};

/// Hidden/cell pair for one layer at one time step.
#[derive(Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

/// The all-zero initial state H_0 = C_0 = 0.
pub fn zero_state(tape: &mut Tape, n: usize, ch: usize, h: usize, w: usize) -> LstmState {
    let z = Tensor::zeros(Shape::new(n, ch, h, w));
    LstmState {
        h: tape.constant(z.clone()),
        c: tape.constant(z),
    }
}

struct GateParams {
    wx: ParamId,
    wh: ParamId,
    bias: Option<ParamId>,
}

/// One ConvLSTM layer: four gates, each with an input-path and a hidden-path
/// kernel plus an optional bias.
pub struct ConvLstmLayer {
    pub cin: usize,
    pub ch: usize,
    pub kernel: usize,
    cell: GateParams,
    input: GateParams,
    forget: GateParams,
    output: GateParams,
}

impl ConvLstmLayer {
    /// Register parameters under `{prefix}.{Wxc,Whc,...,bo}`. Weights draw
    /// from name-keyed uniform `±sqrt(1/fan_in)` streams; biases start at 0.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cin: usize,
        ch: usize,
        kernel: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(CrnError::InvalidArgument(format!(
                "ConvLSTM kernel size must be odd, got {kernel}"
            )));
        }
        if cin == 0 || ch == 0 {
            return Err(CrnError::InvalidArgument(format!(
                "ConvLSTM channel counts must be positive, got cin={cin} ch={ch}"
            )));
        }
        let mut gate = |x_name: &str, h_name: &str, b_name: &str| -> Result<GateParams> {
            let xs = Shape::new(ch, cin, kernel, kernel);
            let hs = Shape::new(ch, ch, kernel, kernel);
            let x_full = format!("{prefix}.{x_name}");
            let h_full = format!("{prefix}.{h_name}");
            let wx = params.add(
                x_full.clone(),
                init_uniform(xs, cin * kernel * kernel, seed, &x_full),
            )?;
            let wh = params.add(
                h_full.clone(),
                init_uniform(hs, ch * kernel * kernel, seed, &h_full),
            )?;
            let b = if bias {
                Some(params.add(
                    format!("{prefix}.{b_name}"),
                    Tensor::zeros(Shape::channel_vec(ch)),
                )?)
            } else {
                None
            };
            Ok(GateParams { wx, wh, bias: b })
        };
        Ok(ConvLstmLayer {
            cin,
            ch,
            kernel,
            cell: gate("Wxc", "Whc", "bc")?,
            input: gate("Wxi", "Whi", "bi")?,
            forget: gate("Wxf", "Whf", "bf")?,
            output: gate("Wxo", "Who", "bo")?,
        })
    }

    /// Pre-activation of one gate: `Wx ∗ x̂ + Wh ∗ H_{t−1} (+ b)`.
    fn gate_preact(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        gate: &GateParams,
        x_hat: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let pad = same_padding(self.kernel, 1);
        let from_x = tape.conv2d(
            x_hat,
            bind.var(gate.wx),
            gate.bias.map(|b| bind.var(b)),
            (pad, pad),
            1,
        )?;
        let from_h = tape.conv2d(h_prev, bind.var(gate.wh), None, (pad, pad), 1)?;
        tape.add(from_x, from_h)
    }

    /// Advance one time step.
    pub fn step(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        x_hat: Var,
        prev: &LstmState,
    ) -> Result<LstmState> {
        if tape.shape(prev.h) != tape.shape(prev.c) {
            return Err(CrnError::ShapeMismatch(format!(
                "LSTM state H {} and C {} differ",
                tape.shape(prev.h),
                tape.shape(prev.c)
            )));
        }
        let pre_c = self.gate_preact(tape, bind, &self.cell, x_hat, prev.h)?;
        let c_tilde = tape.tanh(pre_c)?;
        let pre_i = self.gate_preact(tape, bind, &self.input, x_hat, prev.h)?;
        let i = tape.sigmoid(pre_i)?;
        let pre_f = self.gate_preact(tape, bind, &self.forget, x_hat, prev.h)?;
        let f = tape.sigmoid(pre_f)?;
        let keep = tape.hadamard(f, prev.c)?;
        let write = tape.hadamard(i, c_tilde)?;
        let c = tape.add(keep, write)?;
        let pre_o = self.gate_preact(tape, bind, &self.output, x_hat, prev.h)?;
        let o = tape.sigmoid(pre_o)?;
        let c_squashed = tape.tanh(c)?;
        let h = tape.hadamard(o, c_squashed)?;
        Ok(LstmState { h, c })
    }
}

/// Stack of ConvLSTM layers; layer i consumes layer i−1's hidden output at
/// the same time step.
pub struct ConvLstmStack {
    pub layers: Vec<ConvLstmLayer>,
}

impl ConvLstmStack {
    /// Layers register under `{prefix}.layer{i}.*`; layer 0 consumes `cin`
    /// channels, deeper layers consume `ch`.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        cin: usize,
        ch: usize,
        n_layers: usize,
        kernel: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if n_layers == 0 {
            return Err(CrnError::InvalidArgument(
                "ConvLSTM stack needs at least one layer".into(),
            ));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for i in 0..n_layers {
            let layer_cin = if i == 0 { cin } else { ch };
            layers.push(ConvLstmLayer::new(
                params,
                &format!("{prefix}.layer{i}"),
                layer_cin,
                ch,
                kernel,
                bias,
                seed,
            )?);
        }
        Ok(ConvLstmStack { layers })
    }

    pub fn hidden_channels(&self) -> usize {
        self.layers[0].ch
    }

    pub fn zero_states(&self, tape: &mut Tape, n: usize, h: usize, w: usize) -> Vec<LstmState> {
        self.layers
            .iter()
            .map(|l| zero_state(tape, n, l.ch, h, w))
            .collect()
    }

    /// Advance every layer one step; returns the new states and the top
    /// layer's hidden output.
    pub fn step(
        &self,
        tape: &mut Tape,
        bind: &ParamBinding,
        x_hat: Var,
        prev: &[LstmState],
    ) -> Result<(Vec<LstmState>, Var)> {
        if prev.len() != self.layers.len() {
            return Err(CrnError::ShapeMismatch(format!(
                "stack has {} layers but received {} previous states",
                self.layers.len(),
                prev.len()
            )));
        }
        let mut states = Vec::with_capacity(self.layers.len());
        let mut input = x_hat;
        for (layer, p) in self.layers.iter().zip(prev) {
            let s = layer.step(tape, bind, input, p)?;
            input = s.h;
            states.push(s);
        }
        let top = states.last().unwrap().h;
        Ok((states, top))
    }
}
