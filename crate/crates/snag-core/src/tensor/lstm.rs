//! A single-layer LSTM cell, shared by the sequence aggregators and the
//! architecture controller.

use rand::Rng;

use super::tape::{Tape, Var};
use super::{Tensor, TensorError};

/// Gate order everywhere: input, forget, output, candidate.
pub const GATES: usize = 4;

/// Parameters of one LSTM cell: per-gate input weights `wx [input, hidden]`,
/// recurrent weights `wh [hidden, hidden]`, and biases `b [1, hidden]`.
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub wx: Vec<Tensor>,
    pub wh: Vec<Tensor>,
    pub b: Vec<Tensor>,
}

impl LstmParams {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Result<Self, TensorError> {
        let mut wx = Vec::with_capacity(GATES);
        let mut wh = Vec::with_capacity(GATES);
        let mut b = Vec::with_capacity(GATES);
        for _ in 0..GATES {
            wx.push(Tensor::glorot(input_dim, hidden_dim, rng));
            wh.push(Tensor::glorot(hidden_dim, hidden_dim, rng));
            b.push(Tensor::zero_param(vec![1, hidden_dim])?);
        }
        Ok(LstmParams { wx, wh, b })
    }

    pub fn hidden_dim(&self) -> usize {
        self.b[0].shape()[1]
    }

    /// Flat parameter view in a stable order: wx gates, wh gates, biases.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.wx.iter().chain(self.wh.iter()).chain(self.b.iter()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.wx
            .iter_mut()
            .chain(self.wh.iter_mut())
            .chain(self.b.iter_mut())
            .collect()
    }
}

/// Tape handles for one cell's parameters.
#[derive(Debug, Clone)]
pub struct LstmVars {
    wx: Vec<Var>,
    wh: Vec<Var>,
    b: Vec<Var>,
}

pub fn bind(tape: &mut Tape, params: &LstmParams) -> LstmVars {
    LstmVars {
        wx: params.wx.iter().map(|t| tape.leaf(t)).collect(),
        wh: params.wh.iter().map(|t| tape.leaf(t)).collect(),
        b: params.b.iter().map(|t| tape.leaf(t)).collect(),
    }
}

/// Rebinds a cell from 12 already-created handles in [`LstmParams::tensors`]
/// order (wx gates, wh gates, biases).
pub fn bind_vars(vars: &[Var]) -> LstmVars {
    assert_eq!(vars.len(), 3 * GATES, "an LSTM cell has 12 parameter tensors");
    LstmVars {
        wx: vars[0..4].to_vec(),
        wh: vars[4..8].to_vec(),
        b: vars[8..12].to_vec(),
    }
}

/// One step over a batch: `x [n, input]`, `h`/`c` `[n, hidden]`. Returns the
/// next `(h, c)`.
pub fn lstm_step(tape: &mut Tape, vars: &LstmVars, x: Var, h: Var, c: Var) -> Result<(Var, Var), TensorError> {
    let mut pre = Vec::with_capacity(GATES);
    for gate in 0..GATES {
        let xw = tape.matmul(x, vars.wx[gate])?;
        let hw = tape.matmul(h, vars.wh[gate])?;
        let s = tape.add(xw, hw)?;
        pre.push(tape.add_bias(s, vars.b[gate])?);
    }
    let i = tape.sigmoid(pre[0])?;
    let f = tape.sigmoid(pre[1])?;
    let o = tape.sigmoid(pre[2])?;
    let g = tape.tanh(pre[3])?;
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next)?;
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}
