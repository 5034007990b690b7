//! The preliminary and refinement decoders, copy mixing and coverage.

use crate::attention::{attend, prepare_keys, AttentionParams, Keys};
use crate::encoder::{mean_rows, PassageEncoding};
use crate::error::Result;
use crate::lstm::{lstm_cell_step, LstmParams};
use crate::model::ModelConfig;
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};

/// Hidden and cell state of every layer of a stacked decoder.
#[derive(Clone, Debug)]
pub struct DecState {
    pub h: Vec<Var>,
    pub c: Vec<Var>,
}

impl DecState {
    pub fn top(&self) -> Var {
        *self.h.last().unwrap()
    }
}

/// Learned map from `[mean(U); h^a]` to the initial state of every layer.
#[derive(Clone, Debug)]
pub struct StateInit {
    pub w: ParamId,
    pub b: ParamId,
    pub layers: usize,
    pub width: usize,
}

impl StateInit {
    fn new(store: &mut ParamStore, prefix: &str, layers: usize, l: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{prefix}.init.w"), &[2 * layers * l, 2 * l], Init::FanIn)?,
            b: store.add(&format!("{prefix}.init.b"), &[2 * layers * l], Init::Zeros)?,
            layers,
            width: l,
        })
    }

    pub fn initial(&self, tape: &mut Tape, enc: &PassageEncoding) -> Result<DecState> {
        let mean = mean_rows(tape, enc.u_mat)?;
        let x = tape.concat(&[mean, enc.ha])?;
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let z = tape.matvec(w, x)?;
        let z = tape.add(z, b)?;
        let mut h = Vec::with_capacity(self.layers);
        let mut c = Vec::with_capacity(self.layers);
        for k in 0..self.layers {
            let hk = tape.slice(z, 2 * k * self.width, self.width)?;
            h.push(tape.tanh(hk)?);
            c.push(tape.slice(z, (2 * k + 1) * self.width, self.width)?);
        }
        Ok(DecState { h, c })
    }
}

/// `p_gen = sigmoid(w · x + b)`.
#[derive(Clone, Debug)]
pub struct CopyGate {
    pub w: ParamId,
    pub b: ParamId,
}

impl CopyGate {
    fn new(store: &mut ParamStore, prefix: &str, input: usize) -> Result<Self> {
        Ok(Self {
            w: store.add(&format!("{prefix}.gate.w"), &[1, input], Init::FanIn)?,
            b: store.add(&format!("{prefix}.gate.b"), &[1], Init::Zeros)?,
        })
    }

    pub fn p_gen(&self, tape: &mut Tape, parts: &[Var]) -> Result<Var> {
        let x = tape.concat(parts)?;
        let w = tape.param(self.w);
        let b = tape.param(self.b);
        let z = tape.matvec(w, x)?;
        let z = tape.add(z, b)?;
        tape.sigmoid(z)
    }
}

/// `p_gen * [vocab; 0] + (1 - p_gen) * scatter(attention, extended_ids)`.
pub fn copy_mix(
    tape: &mut Tape,
    vocab_dist: Var,
    attention: Var,
    p_gen: Var,
    extended_ids: &[usize],
    extended_size: usize,
) -> Result<Var> {
    let v = tape.shape(vocab_dist)[0];
    let padded = tape.pad(vocab_dist, extended_size - v)?;
    let gen = tape.scale_by(padded, p_gen)?;
    let copy = tape.scatter_add(attention, extended_ids, extended_size)?;
    let q = tape.affine(p_gen, -1.0, 1.0)?;
    let copy = tape.scale_by(copy, q)?;
    tape.add(gen, copy)
}

/// Returns `(coverage + attention, sum_i min(coverage_i, attention_i))`.
pub fn coverage_step(tape: &mut Tape, coverage: Var, attention: Var) -> Result<(Var, Var)> {
    let m = tape.min(coverage, attention)?;
    let penalty = tape.sum(m)?;
    let next = tape.add(coverage, attention)?;
    Ok((next, penalty))
}

/// Passage-side inputs shared by every step of one decode.
#[derive(Clone, Debug)]
pub struct PassageMemory {
    pub keys: Keys,
    pub ha: Var,
    pub mask: Vec<bool>,
    pub extended_ids: Vec<usize>,
    pub extended_size: usize,
}

/// Everything one decoder step produces.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub state: DecState,
    /// Passage context of this step (`c̃_t` or `c_t`).
    pub context: Var,
    /// Draft context `g_t` (refinement decoder only).
    pub draft_context: Option<Var>,
    /// Distribution over the fixed vocabulary, before copy mixing.
    pub vocab: Var,
    /// Distribution over the extended vocabulary.
    pub dist: Var,
    pub attention: Var,
    pub draft_attention: Option<Var>,
    pub p_gen: Option<Var>,
    pub coverage: Var,
    pub penalty: Var,
}

fn stacked_step(
    tape: &mut Tape,
    layers: &[LstmParams],
    x: Var,
    state: &DecState,
) -> Result<DecState> {
    let mut h = Vec::with_capacity(layers.len());
    let mut c = Vec::with_capacity(layers.len());
    let mut input = x;
    for (k, p) in layers.iter().enumerate() {
        let (hk, ck) = lstm_cell_step(tape, input, state.h[k], state.c[k], p)?;
        h.push(hk);
        c.push(ck);
        input = hk;
    }
    Ok(DecState { h, c })
}

fn project(tape: &mut Tape, w_c: ParamId, w_o: ParamId, parts: &[Var]) -> Result<Var> {
    let x = tape.concat(parts)?;
    let w_c = tape.param(w_c);
    let o = tape.matvec(w_c, x)?;
    let w_o = tape.param(w_o);
    let logits = tape.matvec(w_o, o)?;
    tape.softmax(logits)
}

fn finish(
    tape: &mut Tape,
    cfg: &ModelConfig,
    gate: &CopyGate,
    mem: &PassageMemory,
    vocab: Var,
    attention: Var,
    gate_in: &[Var],
) -> Result<(Var, Option<Var>)> {
    if cfg.use_copy {
        let p = gate.p_gen(tape, gate_in)?;
        let d = copy_mix(tape, vocab, attention, p, &mem.extended_ids, mem.extended_size)?;
        Ok((d, Some(p)))
    } else {
        let v = tape.shape(vocab)[0];
        Ok((tape.pad(vocab, mem.extended_size - v)?, None))
    }
}

#[derive(Clone, Debug)]
pub struct PreliminaryDecoder {
    pub layers: Vec<LstmParams>,
    pub attn: AttentionParams,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub gate: CopyGate,
    pub init: StateInit,
}

impl PreliminaryDecoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, w_o: ParamId) -> Result<Self> {
        let l = cfg.l();
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for k in 0..cfg.decoder_layers {
            let input = if k == 0 { cfg.word_dim + 2 * l } else { l };
            layers.push(LstmParams::new(store, &format!("prelim.l{k}"), input, l)?);
        }
        Ok(Self {
            layers,
            attn: AttentionParams::new(store, "prelim.a1", l, l, cfg.attn_dim)?,
            w_c: store.add("prelim.w_c", &[l, 2 * l], Init::FanIn)?,
            w_o,
            gate: CopyGate::new(store, "prelim", 2 * l + cfg.word_dim)?,
            init: StateInit::new(store, "prelim", cfg.decoder_layers, l)?,
        })
    }

    pub fn memory(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        extended_ids: &[usize],
        extended_size: usize,
    ) -> Result<PassageMemory> {
        Ok(PassageMemory {
            keys: prepare_keys(tape, &self.attn, enc.u_mat)?,
            ha: enc.ha,
            mask: enc.mask.clone(),
            extended_ids: extended_ids.to_vec(),
            extended_size,
        })
    }

    /// `h̃_t = LSTM([e_w(q̃_{t-1}); c̃_{t-1}; h^a])`, then A1 over `U` and
    /// `softmax(W_o W_c [h̃_t; c̃_t])`.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        mem: &PassageMemory,
        prev_emb: Var,
        prev_context: Var,
        state: &DecState,
        coverage: Var,
    ) -> Result<StepOutput> {
        let x = tape.concat(&[prev_emb, prev_context, mem.ha])?;
        let state = stacked_step(tape, &self.layers, x, state)?;
        let h = state.top();
        let (attention, context) = attend(tape, &self.attn, h, &mem.keys, Some(&mem.mask))?;
        let vocab = project(tape, self.w_c, self.w_o, &[h, context])?;
        let (dist, p_gen) = finish(tape, cfg, &self.gate, mem, vocab, attention, &[h, context, prev_emb])?;
        let (coverage, penalty) = coverage_step(tape, coverage, attention)?;
        Ok(StepOutput {
            state,
            context,
            draft_context: None,
            vocab,
            dist,
            attention,
            draft_attention: None,
            p_gen,
            coverage,
            penalty,
        })
    }
}

/// Draft-side inputs of the refinement decoder: the draft token embeddings
/// and their A3 projection.
#[derive(Clone, Debug)]
pub struct DraftMemory {
    pub keys: Keys,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct RefinementDecoder {
    pub layers: Vec<LstmParams>,
    pub a2: AttentionParams,
    pub a3: AttentionParams,
    pub w_c: ParamId,
    pub w_o: ParamId,
    pub gate: CopyGate,
    pub init: StateInit,
}

impl RefinementDecoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig, w_o: ParamId) -> Result<Self> {
        let l = cfg.l();
        let e = cfg.word_dim;
        let mut layers = Vec::with_capacity(cfg.decoder_layers);
        for k in 0..cfg.decoder_layers {
            let input = if k == 0 { 2 * e + 2 * l } else { l };
            layers.push(LstmParams::new(store, &format!("refine.l{k}"), input, l)?);
        }
        Ok(Self {
            layers,
            a2: AttentionParams::new(store, "refine.a2", l, l, cfg.attn_dim)?,
            a3: AttentionParams::new(store, "refine.a3", l, e, cfg.attn_dim)?,
            w_c: store.add("refine.w_c", &[l, 2 * l + e], Init::FanIn)?,
            w_o,
            gate: CopyGate::new(store, "refine", 2 * l + e)?,
            init: StateInit::new(store, "refine", cfg.decoder_layers, l)?,
        })
    }

    pub fn memory(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        extended_ids: &[usize],
        extended_size: usize,
    ) -> Result<PassageMemory> {
        Ok(PassageMemory {
            keys: prepare_keys(tape, &self.a2, enc.u_mat)?,
            ha: enc.ha,
            mask: enc.mask.clone(),
            extended_ids: extended_ids.to_vec(),
            extended_size,
        })
    }

    /// `embeddings` are the draft tokens' word-table rows.
    pub fn draft_memory(&self, tape: &mut Tape, embeddings: &[Var]) -> Result<DraftMemory> {
        let m = tape.stack_rows(embeddings)?;
        Ok(DraftMemory {
            keys: prepare_keys(tape, &self.a3, m)?,
            len: embeddings.len(),
        })
    }

    /// A2 over `U` and A3 over the draft embeddings, both queried with `h`.
    /// Returns `(γ, c_t, β, g_t)`; with A3 disabled `β` is `None` and `g_t`
    /// is zero.
    pub fn dual_attention(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        h: Var,
        mem: &PassageMemory,
        draft: &DraftMemory,
    ) -> Result<(Var, Var, Option<Var>, Var)> {
        let (gamma, c) = attend(tape, &self.a2, h, &mem.keys, Some(&mem.mask))?;
        if cfg.use_a3 {
            let (beta, g) = attend(tape, &self.a3, h, &draft.keys, None)?;
            Ok((gamma, c, Some(beta), g))
        } else {
            Ok((gamma, c, None, tape.zeros(cfg.word_dim)))
        }
    }

    /// `h_t = LSTM([e(q_{t-1}); c_{t-1}; g_{t-1}; h^a])`, dual attention, and
    /// `softmax(W_o W'_c [h_t; c; g])` with `(c, g)` from the previous step
    /// when `cfg.lagged_output` is set, else from this step.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        mem: &PassageMemory,
        draft: &DraftMemory,
        prev_emb: Var,
        prev_context: Var,
        prev_draft_context: Var,
        state: &DecState,
        coverage: Var,
    ) -> Result<StepOutput> {
        let x = tape.concat(&[prev_emb, prev_context, prev_draft_context, mem.ha])?;
        let state = stacked_step(tape, &self.layers, x, state)?;
        let h = state.top();
        let (gamma, c, beta, g) = self.dual_attention(tape, cfg, h, mem, draft)?;
        let (oc, og) = if cfg.lagged_output {
            (prev_context, prev_draft_context)
        } else {
            (c, g)
        };
        let vocab = project(tape, self.w_c, self.w_o, &[h, oc, og])?;
        let (dist, p_gen) = finish(tape, cfg, &self.gate, mem, vocab, gamma, &[h, c, prev_emb])?;
        let (coverage, penalty) = coverage_step(tape, coverage, gamma)?;
        Ok(StepOutput {
            state,
            context: c,
            draft_context: Some(g),
            vocab,
            dist,
            attention: gamma,
            draft_attention: beta,
            p_gen,
            coverage,
            penalty,
        })
    }
}
