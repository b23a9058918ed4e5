//! Single LSTM step, in two interchangeable forms: a plain function for
//! inference over frozen weights, and a tape builder for training. Both
//! share gate order (input, forget, cell, output) packed row-wise into the
//! 4H-tall weight matrices, and both perform arithmetic in the same order
//! so their outputs agree bit for bit.

use crate::error::{Error, Result};
use crate::neural::tape::{sigmoid, NodeId, Tape};
use crate::neural::tensor::{matvec, Tensor};

/// Validates the [4H x In] / [4H x H] / [4H] weight layout and returns H.
pub fn hidden_size(w_ih: &Tensor, w_hh: &Tensor, b: &Tensor) -> Result<usize> {
    if b.numel() % 4 != 0 {
        return Err(Error::dimension("lstm bias", "a multiple of 4", b.numel().to_string()));
    }
    let hidden = b.numel() / 4;
    if w_ih.rows() != 4 * hidden {
        return Err(Error::dimension(
            "lstm w_ih rows",
            (4 * hidden).to_string(),
            w_ih.rows().to_string(),
        ));
    }
    if w_hh.rows() != 4 * hidden || w_hh.cols() != hidden {
        return Err(Error::dimension(
            "lstm w_hh",
            format!("[{} x {hidden}]", 4 * hidden),
            format!("[{} x {}]", w_hh.rows(), w_hh.cols()),
        ));
    }
    Ok(hidden)
}

/// One step over frozen weights: returns (h', c').
pub fn step(
    w_ih: &Tensor,
    w_hh: &Tensor,
    b: &Tensor,
    x: &[f64],
    h: &[f64],
    c: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let hidden = b.numel() / 4;
    debug_assert_eq!(h.len(), hidden);
    debug_assert_eq!(c.len(), hidden);
    let from_x = matvec(w_ih, x);
    let from_h = matvec(w_hh, h);
    let bias = b.data();
    let pre = |k: usize| (from_x[k] + from_h[k]) + bias[k];
    let mut h_new = vec![0.0; hidden];
    let mut c_new = vec![0.0; hidden];
    for j in 0..hidden {
        let i = sigmoid(pre(j));
        let f = sigmoid(pre(hidden + j));
        let g = pre(2 * hidden + j).tanh();
        let o = sigmoid(pre(3 * hidden + j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

/// Weight nodes for the tape form, typically leaves over the same tensors
/// `step` would receive.
#[derive(Clone, Copy, Debug)]
pub struct LstmNodes {
    pub w_ih: NodeId,
    pub w_hh: NodeId,
    pub b: NodeId,
}

/// One step recorded on the tape: returns (h', c') node ids.
pub fn step_tape(tape: &mut Tape, w: &LstmNodes, x: NodeId, h: NodeId, c: NodeId) -> (NodeId, NodeId) {
    let hidden = tape.value(w.b).len() / 4;
    let from_x = tape.matvec(w.w_ih, x);
    let from_h = tape.matvec(w.w_hh, h);
    let lin = tape.add(from_x, from_h);
    let pre = tape.add(lin, w.b);
    let i_pre = tape.slice(pre, 0, hidden);
    let i = tape.sigmoid(i_pre);
    let f_pre = tape.slice(pre, hidden, hidden);
    let f = tape.sigmoid(f_pre);
    let g_pre = tape.slice(pre, 2 * hidden, hidden);
    let g = tape.tanh(g_pre);
    let o_pre = tape.slice(pre, 3 * hidden, hidden);
    let o = tape.sigmoid(o_pre);
    let fc = tape.hadamard(f, c);
    let ig = tape.hadamard(i, g);
    let c_new = tape.add(fc, ig);
    let c_act = tape.tanh(c_new);
    let h_new = tape.hadamard(o, c_act);
    (h_new, c_new)
}
