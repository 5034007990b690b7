//! LSTM cells and (bi)directional stacks built from tape primitives.

use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Weights of one LSTM cell. Gate rows are ordered input, forget, output,
/// candidate; `w` multiplies `[x; h_prev]`.
#[derive(Clone, Debug)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize) -> Result<Self> {
        let w = store.add(&format!("{prefix}.w"), &[4 * hidden, input + hidden], Init::FanIn)?;
        let b = store.add(&format!("{prefix}.b"), &[4 * hidden], Init::Zeros)?;
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].iter_mut().for_each(|v| *v = 1.0);
        store.set_value(b, Tensor::vector(bias))?;
        Ok(Self {
            w,
            b,
            input,
            hidden,
        })
    }
}

/// One LSTM step: returns `(h, c)`.
pub fn lstm_cell_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmParams,
) -> Result<(Var, Var)> {
    let hd = p.hidden;
    for (what, v, want) in [("input", x, p.input), ("hidden", h_prev, hd), ("cell", c_prev, hd)] {
        if tape.shape(v) != [want] {
            return Err(Error::config(format!(
                "lstm {what} has shape {:?}, expected [{want}]",
                tape.shape(v)
            )));
        }
    }
    let xh = tape.concat(&[x, h_prev])?;
    let w = tape.param(p.w);
    let b = tape.param(p.b);
    let z = tape.matvec(w, xh)?;
    let z = tape.add(z, b)?;
    let i = tape.slice(z, 0, hd)?;
    let i = tape.sigmoid(i)?;
    let f = tape.slice(z, hd, hd)?;
    let f = tape.sigmoid(f)?;
    let o = tape.slice(z, 2 * hd, hd)?;
    let o = tape.sigmoid(o)?;
    let g = tape.slice(z, 3 * hd, hd)?;
    let g = tape.tanh(g)?;
    let fc = tape.hadamard(f, c_prev)?;
    let ig = tape.hadamard(i, g)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.hadamard(o, tc)?;
    Ok((h, c))
}

/// Runs a cell over `inputs` from zero state. Outputs are aligned with the
/// input positions regardless of direction.
pub fn run_direction(
    tape: &mut Tape,
    p: &LstmParams,
    inputs: &[Var],
    reverse: bool,
) -> Result<Vec<Var>> {
    let mut h = tape.zeros(p.hidden);
    let mut c = tape.zeros(p.hidden);
    let mut out = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let (h2, c2) = lstm_cell_step(tape, inputs[t], h, c, p)?;
        h = h2;
        c = c2;
        out[t] = h;
    }
    Ok(out)
}

/// Stacked bidirectional LSTM; layer `k+1` reads the concatenated outputs of
/// layer `k`.
#[derive(Clone, Debug)]
pub struct BiLstm {
    pub layers: Vec<(LstmParams, LstmParams)>,
    pub hidden: usize,
}

/// Per-position outputs plus the final state of each direction of the top
/// layer (forward at the last position, backward at the first).
pub struct BiLstmOutput {
    pub states: Vec<Var>,
    pub last_forward: Var,
    pub last_backward: Var,
}

impl BiLstm {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        layers: usize,
    ) -> Result<Self> {
        let mut v = Vec::with_capacity(layers);
        for k in 0..layers {
            let inp = if k == 0 { input } else { 2 * hidden };
            let f = LstmParams::new(store, &format!("{prefix}.l{k}.fwd"), inp, hidden)?;
            let b = LstmParams::new(store, &format!("{prefix}.l{k}.bwd"), inp, hidden)?;
            v.push((f, b));
        }
        Ok(Self { layers: v, hidden })
    }

    pub fn output_width(&self) -> usize {
        2 * self.hidden
    }

    pub fn run(&self, tape: &mut Tape, inputs: &[Var]) -> Result<BiLstmOutput> {
        if inputs.is_empty() {
            return Err(Error::usage("bilstm over an empty sequence"));
        }
        let mut xs = inputs.to_vec();
        let mut last = (xs[0], xs[0]);
        for (f, b) in &self.layers {
            let fw = run_direction(tape, f, &xs, false)?;
            let bw = run_direction(tape, b, &xs, true)?;
            last = (*fw.last().unwrap(), bw[0]);
            xs = fw
                .iter()
                .zip(&bw)
                .map(|(a, c)| tape.concat(&[*a, *c]))
                .collect::<Result<_>>()?;
        }
        Ok(BiLstmOutput {
            states: xs,
            last_forward: last.0,
            last_backward: last.1,
        })
    }
}
