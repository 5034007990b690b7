//! Additive attention: `score_i = v · tanh(W_q q + W_k k_i)`.

use crate::error::Result;
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub v: ParamId,
}

impl AttentionParams {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        query: usize,
        key: usize,
        attn: usize,
    ) -> Result<Self> {
        Ok(Self {
            w_q: store.add(&format!("{prefix}.w_q"), &[attn, query], Init::FanIn)?,
            // stored transposed so a whole key matrix projects with one matmul
            w_k: store.add(&format!("{prefix}.w_k"), &[key, attn], Init::FanIn)?,
            v: store.add(&format!("{prefix}.v"), &[attn], Init::FanIn)?,
        })
    }
}

/// A key matrix together with its projection `K W_k`, computed once per
/// sequence.
#[derive(Clone, Copy, Debug)]
pub struct Keys {
    pub values: Var,
    pub projected: Var,
}

pub fn prepare_keys(tape: &mut Tape, p: &AttentionParams, values: Var) -> Result<Keys> {
    let w_k = tape.param(p.w_k);
    let projected = tape.matmul(values, w_k)?;
    Ok(Keys { values, projected })
}

/// Returns `(weights, context)`. A mask with no true entry is a usage error.
pub fn attend(
    tape: &mut Tape,
    p: &AttentionParams,
    query: Var,
    keys: &Keys,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let w_q = tape.param(p.w_q);
    let q = tape.matvec(w_q, query)?;
    let e = tape.add_row(keys.projected, q)?;
    let e = tape.tanh(e)?;
    let v = tape.param(p.v);
    let scores = tape.matvec(e, v)?;
    let weights = tape.masked_softmax(scores, mask)?;
    let context = tape.vecmat(weights, keys.values)?;
    Ok((weights, context))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::tensor::Tensor;

    fn setup() -> (ParamStore, AttentionParams) {
        let mut store = ParamStore::new(5);
        let p = AttentionParams::new(&mut store, "a", 4, 3, 5).unwrap();
        (store, p)
    }

    #[test]
    fn identical_keys_give_uniform_weights() {
        let (store, p) = setup();
        let mut tape = Tape::new(&store);
        let k = tape.constant(Tensor::matrix(4, 3, [0.2, -0.1, 0.4].repeat(4)).unwrap());
        let keys = prepare_keys(&mut tape, &p, k).unwrap();
        let q = tape.constant(Tensor::vector(vec![0.3, 0.1, -0.5, 0.2]));
        let mask = [true, true, false, true];
        let (w, _) = attend(&mut tape, &p, q, &keys, Some(&mask)).unwrap();
        let w = tape.value(w);
        for (i, &m) in mask.iter().enumerate() {
            let want = if m { 1.0 / 3.0 } else { 0.0 };
            assert!((w[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_unmasked_key_takes_all_weight() {
        let (store, p) = setup();
        let mut tape = Tape::new(&store);
        let k = tape.constant(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]).unwrap());
        let keys = prepare_keys(&mut tape, &p, k).unwrap();
        let q = tape.constant(Tensor::vector(vec![0.3, 0.1, -0.5, 0.2]));
        let (w, c) = attend(&mut tape, &p, q, &keys, Some(&[false, true])).unwrap();
        assert_eq!(tape.value(w), [0.0, 1.0]);
        assert_eq!(tape.value(c), [-1.0, 0.5, 0.0]);
    }

    #[test]
    fn fully_masked_is_usage_error() {
        let (store, p) = setup();
        let mut tape = Tape::new(&store);
        let k = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let keys = prepare_keys(&mut tape, &p, k).unwrap();
        let q = tape.constant(Tensor::vector(vec![0.0; 4]));
        let r = attend(&mut tape, &p, q, &keys, Some(&[false, false]));
        assert!(matches!(r, Err(Error::Usage(_))));
    }
}
