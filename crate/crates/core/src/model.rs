//! The assembled network: shared encoder, preliminary decoder, refinement
//! decoder and the shared output projection `W_o`.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedExample, UNK};
use crate::decoder::{DecState, PassageMemory, PreliminaryDecoder, RefinementDecoder, StepOutput, DraftMemory};
use crate::encoder::{Encoder, PassageEncoding};
use crate::error::{Error, Result};
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub word_dim: usize,
    pub char_dim: usize,
    pub char_out: usize,
    pub tag_dim: usize,
    pub pos_dim: usize,
    pub clip: usize,
    /// Per-direction hidden size of the encoder LSTMs; decoders use `2 * hidden`.
    pub hidden: usize,
    pub encoder_layers: usize,
    pub answer_layers: usize,
    pub decoder_layers: usize,
    pub attn_dim: usize,
    pub use_chars: bool,
    pub use_tags: bool,
    pub use_positions: bool,
    pub use_answer_vector: bool,
    pub use_copy: bool,
    pub use_a3: bool,
    /// Feed `c_{t-1}, g_{t-1}` (instead of `c_t, g_t`) to the refinement output.
    pub lagged_output: bool,
    pub max_decode_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: crate::data::vocab::DEFAULT_VOCAB_CAP + 4,
            word_dim: 300,
            char_dim: 20,
            char_out: 100,
            tag_dim: 3,
            pos_dim: 16,
            clip: crate::data::tagging::DEFAULT_CLIP,
            hidden: 512,
            encoder_layers: 2,
            answer_layers: 1,
            decoder_layers: 2,
            attn_dim: 512,
            use_chars: true,
            use_tags: true,
            use_positions: true,
            use_answer_vector: true,
            use_copy: true,
            use_a3: true,
            lagged_output: true,
            max_decode_len: 30,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every component.
    pub fn tiny(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            word_dim: 6,
            char_dim: 3,
            char_out: 4,
            tag_dim: 3,
            pos_dim: 2,
            hidden: 8,
            attn_dim: 8,
            max_decode_len: 8,
            ..Self::default()
        }
    }

    /// Desk-scale configuration for the synthetic corpora.
    pub fn toy(vocab_size: usize, hidden: usize) -> Self {
        Self {
            vocab_size,
            word_dim: 32,
            char_dim: 8,
            char_out: 16,
            tag_dim: 3,
            pos_dim: 8,
            hidden,
            attn_dim: 2 * hidden,
            max_decode_len: 20,
            ..Self::default()
        }
    }

    /// Bidirectional width `l`.
    pub fn l(&self) -> usize {
        2 * self.hidden
    }

    /// Passage embedding width `d`.
    pub fn embed_dim(&self) -> usize {
        self.word_dim + self.char_out + self.tag_dim + self.pos_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_out", self.char_out),
            ("tag_dim", self.tag_dim),
            ("pos_dim", self.pos_dim),
            ("hidden", self.hidden),
            ("encoder_layers", self.encoder_layers),
            ("answer_layers", self.answer_layers),
            ("decoder_layers", self.decoder_layers),
            ("attn_dim", self.attn_dim),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size <= 4 {
            return Err(Error::config("vocab_size must exceed the 4 reserved ids"));
        }
        Ok(())
    }
}

/// Token ids and per-step statistics of the preliminary decoder's output.
#[derive(Clone, Debug, PartialEq)]
pub struct Draft {
    /// Extended ids, ending with EOS unless the length limit was hit.
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    /// A1 weights per step.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct RefNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub encoder: Encoder,
    pub prelim: PreliminaryDecoder,
    pub refine: RefinementDecoder,
    pub w_o: ParamId,
}

impl RefNet {
    /// Parameters are created in a fixed order from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed);
        let encoder = Encoder::new(&mut params, &config)?;
        let w_o = params.add("output.w_o", &[config.vocab_size, config.l()], Init::FanIn)?;
        let prelim = PreliminaryDecoder::new(&mut params, &config, w_o)?;
        let refine = RefinementDecoder::new(&mut params, &config, w_o)?;
        Ok(Self {
            config,
            params,
            encoder,
            prelim,
            refine,
            w_o,
        })
    }

    pub fn encode(&self, tape: &mut Tape, ex: &EncodedExample) -> Result<PassageEncoding> {
        self.encoder.encode(tape, &self.config, ex)
    }

    /// Training target for an extended id: copy-only ids become UNK when the
    /// copy mechanism is off.
    pub fn target(&self, id: usize) -> usize {
        if !self.config.use_copy && id >= self.config.vocab_size {
            UNK
        } else {
            id
        }
    }

    pub fn embed_token(&self, tape: &mut Tape, id: usize) -> Result<Var> {
        self.encoder.tables.word_row(tape, id, self.config.vocab_size)
    }

    pub fn prelim_memory(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        ex: &EncodedExample,
    ) -> Result<PassageMemory> {
        self.prelim
            .memory(tape, enc, &ex.passage_ext, ex.extended_size(self.config.vocab_size))
    }

    pub fn refine_memory(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        ex: &EncodedExample,
    ) -> Result<PassageMemory> {
        self.refine
            .memory(tape, enc, &ex.passage_ext, ex.extended_size(self.config.vocab_size))
    }

    /// A3 memory over the word-table rows of `tokens`.
    pub fn draft_memory(&self, tape: &mut Tape, tokens: &[usize]) -> Result<DraftMemory> {
        if tokens.is_empty() {
            return Err(Error::usage("empty draft"));
        }
        let rows: Vec<Var> = tokens
            .iter()
            .map(|&t| self.embed_token(tape, t))
            .collect::<Result<_>>()?;
        self.refine.draft_memory(tape, &rows)
    }

    /// Runs the preliminary decoder over `inputs` (starting with SOS),
    /// feeding each given token regardless of the prediction.
    pub fn preliminary_forced(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        ex: &EncodedExample,
        inputs: &[usize],
    ) -> Result<Vec<StepOutput>> {
        let mem = self.prelim_memory(tape, enc, ex)?;
        let mut run = PrelimRun::start(self, tape, enc)?;
        inputs
            .iter()
            .map(|&tok| run.step(self, tape, &mem, tok))
            .collect()
    }

    /// Runs the refinement decoder over `inputs` given draft tokens.
    pub fn refinement_forced(
        &self,
        tape: &mut Tape,
        enc: &PassageEncoding,
        ex: &EncodedExample,
        draft: &[usize],
        inputs: &[usize],
    ) -> Result<Vec<StepOutput>> {
        let mem = self.refine_memory(tape, enc, ex)?;
        let dm = self.draft_memory(tape, draft)?;
        let mut run = RefineRun::start(self, tape, enc)?;
        inputs
            .iter()
            .map(|&tok| run.step(self, tape, &mem, &dm, tok))
            .collect()
    }

    /// Parameters used only by the preliminary decoder.
    pub fn preliminary_only(&self) -> Vec<ParamId> {
        self.params
            .iter()
            .filter(|(_, p)| p.name.starts_with("prelim."))
            .map(|(id, _)| id)
            .collect()
    }
}

/// Recurrent state of one refinement decode.
#[derive(Clone, Debug)]
pub struct RefineRun {
    pub state: DecState,
    pub context: Var,
    pub draft_context: Var,
    pub coverage: Var,
}

impl RefineRun {
    pub fn start(model: &RefNet, tape: &mut Tape, enc: &PassageEncoding) -> Result<Self> {
        Ok(Self {
            state: model.refine.init.initial(tape, enc)?,
            context: tape.zeros(model.config.l()),
            draft_context: tape.zeros(model.config.word_dim),
            coverage: tape.zeros(enc.u.len()),
        })
    }

    /// Feeds `prev` and advances; returns the step output.
    pub fn step(
        &mut self,
        model: &RefNet,
        tape: &mut Tape,
        mem: &PassageMemory,
        draft: &DraftMemory,
        prev: usize,
    ) -> Result<StepOutput> {
        let emb = model.embed_token(tape, prev)?;
        let s = model.refine.step(
            tape,
            &model.config,
            mem,
            draft,
            emb,
            self.context,
            self.draft_context,
            &self.state,
            self.coverage,
        )?;
        self.state = s.state.clone();
        self.context = s.context;
        self.draft_context = s.draft_context.unwrap();
        self.coverage = s.coverage;
        Ok(s)
    }
}

/// Recurrent state of one preliminary decode.
#[derive(Clone, Debug)]
pub struct PrelimRun {
    pub state: DecState,
    pub context: Var,
    pub coverage: Var,
}

impl PrelimRun {
    pub fn start(model: &RefNet, tape: &mut Tape, enc: &PassageEncoding) -> Result<Self> {
        Ok(Self {
            state: model.prelim.init.initial(tape, enc)?,
            context: tape.zeros(model.config.l()),
            coverage: tape.zeros(enc.u.len()),
        })
    }

    pub fn step(
        &mut self,
        model: &RefNet,
        tape: &mut Tape,
        mem: &PassageMemory,
        prev: usize,
    ) -> Result<StepOutput> {
        let emb = model.embed_token(tape, prev)?;
        let s = model
            .prelim
            .step(tape, &model.config, mem, emb, self.context, &self.state, self.coverage)?;
        self.state = s.state.clone();
        self.context = s.context;
        self.coverage = s.coverage;
        Ok(s)
    }
}
