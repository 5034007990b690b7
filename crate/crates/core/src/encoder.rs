//! Passage/answer encoder: embeddings, contextual BiLSTM, answer encoder and
//! passage-answer fusion.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::data::chars::char_count;
use crate::data::{EncodedExample, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::lstm::BiLstm;
use crate::model::ModelConfig;
use crate::params::{Init, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub chars: ParamId,
    pub char_proj: ParamId,
    pub tag: ParamId,
    pub position: ParamId,
}

impl EmbeddingTables {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let word = store.add("embed.word", &[cfg.vocab_size, cfg.word_dim], Init::Uniform(0.1))?;
        let mut w = store.value(word).clone();
        w.data_mut()[PAD * cfg.word_dim..(PAD + 1) * cfg.word_dim].fill(0.0);
        store.set_value(word, w)?;
        let mut frozen = vec![false; cfg.vocab_size];
        frozen[PAD] = true;
        store.set_frozen_rows(word, frozen);
        let chars = store.add("embed.char", &[char_count(), cfg.char_dim], Init::Uniform(0.1))?;
        let char_proj = store.add("embed.char_proj", &[cfg.char_dim, cfg.char_out], Init::FanIn)?;
        let tag = store.add("embed.tag", &[3, cfg.tag_dim], Init::Uniform(0.1))?;
        let position = store.add(
            "embed.position",
            &[2 * cfg.clip + 1, cfg.pos_dim],
            Init::Uniform(0.1),
        )?;
        Ok(Self {
            word,
            chars,
            char_proj,
            tag,
            position,
        })
    }

    /// Word-table row for an extended id; copy-only ids read the UNK row.
    pub fn word_row(&self, tape: &mut Tape, id: usize, vocab_size: usize) -> Result<Var> {
        let table = tape.param(self.word);
        let id = if id >= vocab_size { crate::data::UNK } else { id };
        tape.row(table, id)
    }

    /// Max-pool over the projected character vectors of one token.
    pub fn char_embed(&self, tape: &mut Tape, chars: &[usize]) -> Result<Var> {
        let table = tape.param(self.chars);
        let rows: Vec<Var> = chars
            .iter()
            .map(|&c| tape.row(table, c))
            .collect::<Result<_>>()?;
        let m = tape.stack_rows(&rows)?;
        let proj = tape.param(self.char_proj);
        let p = tape.matmul(m, proj)?;
        tape.max_rows(p)
    }

    /// Word + character embedding of a token (zeros for disabled parts).
    pub fn token_embed(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        id: usize,
        chars: &[usize],
    ) -> Result<Var> {
        let w = self.word_row(tape, id, cfg.vocab_size)?;
        let c = if cfg.use_chars {
            self.char_embed(tape, chars)?
        } else {
            tape.zeros(cfg.char_out)
        };
        tape.concat(&[w, c])
    }

    /// Copies vectors from a Glove-format text file into the word table and
    /// freezes those rows. Returns the number of rows loaded.
    pub fn load_pretrained(
        &self,
        store: &mut ParamStore,
        vocab: &Vocabulary,
        path: &Path,
    ) -> Result<usize> {
        let vectors = read_glove(path, vocab)?;
        let dim = store.value(self.word).cols();
        let mut table = store.value(self.word).clone();
        let mut frozen = store
            .get(self.word)
            .frozen_rows
            .clone()
            .unwrap_or_else(|| vec![false; vocab.len()]);
        let mut loaded = 0;
        for (id, v) in vectors {
            if v.len() != dim {
                return Err(Error::data(format!(
                    "{}: vector for {:?} has {} values, expected {dim}",
                    path.display(),
                    vocab.token(id).unwrap_or("?"),
                    v.len()
                )));
            }
            if id == PAD {
                continue;
            }
            table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&v);
            frozen[id] = true;
            loaded += 1;
        }
        store.set_value(self.word, table)?;
        store.set_frozen_rows(self.word, frozen);
        Ok(loaded)
    }
}

/// Vectors for vocabulary words found in a Glove text file.
pub fn read_glove(path: &Path, vocab: &Vocabulary) -> Result<HashMap<usize, Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        if !vocab.contains(word) {
            continue;
        }
        let v: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
        let v = v.map_err(|e| Error::data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.entry(vocab.id(word)).or_insert(v);
    }
    Ok(out)
}

/// Fused answer-aware passage states and the answer vector.
#[derive(Clone, Debug)]
pub struct PassageEncoding {
    /// Rows of `U`.
    pub u: Vec<Var>,
    /// `U` as an `m x l` matrix.
    pub u_mat: Var,
    /// Contextual states before fusion.
    pub hp: Vec<Var>,
    pub ha: Var,
    pub mask: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub tables: EmbeddingTables,
    pub context: BiLstm,
    pub answer: BiLstm,
    pub w_u: ParamId,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, cfg: &ModelConfig) -> Result<Self> {
        let tables = EmbeddingTables::new(store, cfg)?;
        let l = cfg.l();
        let context = BiLstm::new(store, "enc.context", cfg.embed_dim(), cfg.hidden, cfg.encoder_layers)?;
        let answer = BiLstm::new(
            store,
            "enc.answer",
            cfg.word_dim + cfg.char_out + l,
            cfg.hidden,
            cfg.answer_layers,
        )?;
        let w_u = store.add("enc.fuse.w_u", &[l, 3 * l], Init::FanIn)?;
        Ok(Self {
            tables,
            context,
            answer,
            w_u,
        })
    }

    /// Per-token passage embeddings `[word; char; tag; position]`.
    pub fn embed_passage(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        ex: &EncodedExample,
    ) -> Result<Vec<Var>> {
        let tag_t = tape.param(self.tables.tag);
        let pos_t = tape.param(self.tables.position);
        let mut out = Vec::with_capacity(ex.passage.len());
        for i in 0..ex.passage.len() {
            let wc = self.tables.token_embed(tape, cfg, ex.passage[i], &ex.passage_chars[i])?;
            let tag = if cfg.use_tags {
                tape.row(tag_t, ex.tags[i])?
            } else {
                tape.zeros(cfg.tag_dim)
            };
            let pos = if cfg.use_positions {
                tape.row(pos_t, ex.positions[i])?
            } else {
                tape.zeros(cfg.pos_dim)
            };
            out.push(tape.concat(&[wc, tag, pos])?);
        }
        Ok(out)
    }

    pub fn contextual(&self, tape: &mut Tape, embeddings: &[Var]) -> Result<Vec<Var>> {
        Ok(self.context.run(tape, embeddings)?.states)
    }

    /// `h^a`: span answers read `[e(w^a_t); h^p_{j+t}]`, other answers
    /// `[e(w^a_t); 0]`.
    pub fn encode_answer(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        ex: &EncodedExample,
        hp: &[Var],
    ) -> Result<Var> {
        let l = cfg.l();
        let mut inputs = Vec::with_capacity(ex.answer.len());
        for t in 0..ex.answer.len() {
            let e = self.tables.token_embed(tape, cfg, ex.answer[t], &ex.answer_chars[t])?;
            let ctx = match ex.answer_span {
                Some(s) if s.start + t < hp.len() => hp[s.start + t],
                _ => tape.zeros(l),
            };
            inputs.push(tape.concat(&[e, ctx])?);
        }
        let out = self.answer.run(tape, &inputs)?;
        tape.concat(&[out.last_forward, out.last_backward])
    }

    /// `tanh(W_u [h^p_i; h^a; h^p_i * h^a])`.
    pub fn fuse(&self, tape: &mut Tape, hp_i: Var, ha: Var) -> Result<Var> {
        let prod = tape.hadamard(hp_i, ha)?;
        let x = tape.concat(&[hp_i, ha, prod])?;
        let w = tape.param(self.w_u);
        let z = tape.matvec(w, x)?;
        tape.tanh(z)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        cfg: &ModelConfig,
        ex: &EncodedExample,
    ) -> Result<PassageEncoding> {
        if ex.passage.is_empty() || ex.answer.is_empty() {
            return Err(Error::data(format!("example {} has an empty passage or answer", ex.id)));
        }
        let emb = self.embed_passage(tape, cfg, ex)?;
        let hp = self.contextual(tape, &emb)?;
        let ha = if cfg.use_answer_vector {
            self.encode_answer(tape, cfg, ex, &hp)?
        } else {
            tape.zeros(cfg.l())
        };
        let u: Vec<Var> = hp
            .iter()
            .map(|&h| self.fuse(tape, h, ha))
            .collect::<Result<_>>()?;
        let u_mat = tape.stack_rows(&u)?;
        Ok(PassageEncoding {
            mask: vec![true; u.len()],
            u,
            u_mat,
            hp,
            ha,
        })
    }
}

/// Mean of the rows of `m` (an `r x c` matrix).
pub fn mean_rows(tape: &mut Tape, m: Var) -> Result<Var> {
    let r = tape.shape(m)[0];
    let w = tape.constant(Tensor::vector(vec![1.0 / r as f64; r]));
    tape.vecmat(w, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{encode_example, Example, Limits, Vocabulary};
    use crate::model::ModelConfig;

    fn setup(span: bool) -> (ModelConfig, ParamStore, Encoder, EncodedExample, Vocabulary) {
        let ex = if span {
            Example::from_text("e", "alice saw the red barn .", "who saw the red barn ?", "alice", Some(0)).unwrap()
        } else {
            Example::from_text("e", "alice saw the red barn .", "who saw the red barn ?", "alice", None).unwrap()
        };
        let vocab = Vocabulary::from_tokens(ex.passage.iter().chain(&ex.question).cloned());
        let cfg = ModelConfig::tiny(vocab.len());
        let mut store = ParamStore::new(3);
        let enc = Encoder::new(&mut store, &cfg).unwrap();
        let (e, _) = encode_example(&ex, &vocab, &Limits::default()).unwrap().unwrap();
        (cfg, store, enc, e, vocab)
    }

    fn values(tape: &Tape, vs: &[Var]) -> Vec<Vec<f64>> {
        vs.iter().map(|&v| tape.value(v).to_vec()).collect()
    }

    #[test]
    fn embedding_width_is_sum_of_parts() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.embed_dim(), 300 + 100 + 3 + 16);
        assert_eq!(cfg.embed_dim(), 419);
    }

    #[test]
    fn pad_row_is_zero_and_frozen() {
        let (cfg, store, enc, _, _) = setup(true);
        let t = store.value(enc.tables.word);
        assert!(t.row(PAD).iter().all(|&v| v == 0.0));
        assert!(store.get(enc.tables.word).frozen_rows.as_ref().unwrap()[PAD]);
        let mut tape = Tape::new(&store);
        let r = enc.tables.word_row(&mut tape, PAD, cfg.vocab_size).unwrap();
        assert!(tape.value(r).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn char_embedding_is_order_invariant_max_pool() {
        let (_, store, enc, _, _) = setup(true);
        let mut tape = Tape::new(&store);
        use crate::data::chars::{char_ids, CHAR_UNK};
        let a = enc.tables.char_embed(&mut tape, &char_ids("abc")).unwrap();
        let b = enc.tables.char_embed(&mut tape, &char_ids("cab")).unwrap();
        assert_eq!(tape.value(a), tape.value(b));
        let single = enc.tables.char_embed(&mut tape, &char_ids("q")).unwrap();
        let row = tape.param(enc.tables.chars);
        let q = tape.row(row, char_ids("q")[0]).unwrap();
        let proj = tape.param(enc.tables.char_proj);
        let qm = tape.stack_rows(&[q]).unwrap();
        let pq = tape.matmul(qm, proj).unwrap();
        assert_eq!(tape.value(single), tape.value(pq));
        let unk = enc.tables.char_embed(&mut tape, &char_ids("ж")).unwrap();
        let u = tape.row(row, CHAR_UNK).unwrap();
        let um = tape.stack_rows(&[u]).unwrap();
        let pu = tape.matmul(um, proj).unwrap();
        assert_eq!(tape.value(unk), tape.value(pu));
    }

    #[test]
    fn tag_block_differs_between_b_and_o() {
        let (cfg, store, enc, mut e, _) = setup(true);
        // same word at position 0 with tag B vs O
        let mut tape = Tape::new(&store);
        let b = enc.embed_passage(&mut tape, &cfg, &e).unwrap()[0];
        e.tags[0] = 0;
        let o = enc.embed_passage(&mut tape, &cfg, &e).unwrap()[0];
        let w = cfg.word_dim + cfg.char_out;
        assert_eq!(tape.value(b)[..w], tape.value(o)[..w]);
        assert_ne!(tape.value(b)[w..w + cfg.tag_dim], tape.value(o)[w..w + cfg.tag_dim]);
    }

    #[test]
    fn zero_weights_give_zero_states() {
        let (cfg, mut store, enc, e, _) = setup(true);
        for id in store.ids().collect::<Vec<_>>() {
            let name = store.get(id).name.clone();
            if name.starts_with("enc.") {
                let z = Tensor::zeros(store.value(id).shape());
                store.set_value(id, z).unwrap();
            }
        }
        let mut tape = Tape::new(&store);
        let pe = enc.encode(&mut tape, &cfg, &e).unwrap();
        assert!(values(&tape, &pe.hp).iter().flatten().all(|&v| v == 0.0));
        assert!(tape.value(pe.ha).iter().all(|&v| v == 0.0));
        assert!(values(&tape, &pe.u).iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn reversed_input_swaps_direction_halves() {
        let (cfg, mut store, _, _, _) = setup(true);
        let bi = BiLstm::new(&mut store, "rev", 3, 4, 1).unwrap();
        // same weights in both directions
        let (f, b) = bi.layers[0].clone();
        for (src, dst) in [(f.w, b.w), (f.b, b.b)] {
            let v = store.value(src).clone();
            store.set_value(dst, v).unwrap();
        }
        let _ = cfg;
        let mut tape = Tape::new(&store);
        let xs: Vec<Var> = [[0.1, -0.2, 0.3], [0.5, 0.0, -0.4], [-0.3, 0.2, 0.9]]
            .iter()
            .map(|r| tape.constant(Tensor::vector(r.to_vec())))
            .collect();
        let rev: Vec<Var> = xs.iter().rev().copied().collect();
        let a = bi.run(&mut tape, &xs).unwrap();
        let r = bi.run(&mut tape, &rev).unwrap();
        assert_eq!(tape.value(a.last_forward), tape.value(r.last_backward));
        assert_eq!(tape.value(a.last_backward), tape.value(r.last_forward));
    }

    #[test]
    fn answer_vector_width_and_span_dependence() {
        let (cfg, store, enc, e, _) = setup(true);
        let mut tape = Tape::new(&store);
        let pe = enc.encode(&mut tape, &cfg, &e).unwrap();
        assert_eq!(tape.shape(pe.ha), [cfg.l()]);
        let mut ns = e.clone();
        ns.answer_span = None;
        let ha2 = enc.encode_answer(&mut tape, &cfg, &ns, &pe.hp).unwrap();
        assert_ne!(tape.value(pe.ha), tape.value(ha2));
    }

    #[test]
    fn fusion_with_zero_answer_uses_first_block_only() {
        let (cfg, store, enc, _, _) = setup(true);
        let l = cfg.l();
        let mut tape = Tape::new(&store);
        let h = tape.constant(Tensor::vector((0..l).map(|i| (i as f64 * 0.37).sin()).collect()));
        let z = tape.zeros(l);
        let f = enc.fuse(&mut tape, h, z).unwrap();
        let w = store.value(enc.w_u);
        let want: Vec<f64> = (0..l)
            .map(|r| {
                (0..l)
                    .map(|c| w.data()[r * 3 * l + c] * tape.value(h)[c])
                    .sum::<f64>()
                    .tanh()
            })
            .collect();
        for (a, b) in tape.value(f).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fused_states_are_bounded() {
        let (cfg, store, enc, e, _) = setup(false);
        let mut tape = Tape::new(&store);
        let pe = enc.encode(&mut tape, &cfg, &e).unwrap();
        assert!(values(&tape, &pe.u).iter().flatten().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn ablation_removes_answer_dependence() {
        let (mut cfg, store, enc, e, _) = setup(true);
        cfg.use_tags = false;
        cfg.use_positions = false;
        cfg.use_answer_vector = false;
        let mut other = e.clone();
        other.answer = vec![e.passage[3]];
        other.answer_chars = vec![e.passage_chars[3].clone()];
        other.tags = vec![0; e.tags.len()];
        other.positions = vec![1; e.positions.len()];
        let mut tape = Tape::new(&store);
        let a = enc.encode(&mut tape, &cfg, &e).unwrap();
        let b = enc.encode(&mut tape, &cfg, &other).unwrap();
        assert_eq!(values(&tape, &a.u), values(&tape, &b.u));
    }

    #[test]
    fn glove_rows_are_loaded_and_frozen() {
        let (cfg, mut store, enc, _, vocab) = setup(true);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.txt");
        let vec: Vec<String> = (0..cfg.word_dim).map(|i| format!("{}", i as f64 * 0.5)).collect();
        std::fs::write(&p, format!("barn {}\nzzz {}\n", vec.join(" "), vec.join(" "))).unwrap();
        let n = enc.tables.load_pretrained(&mut store, &vocab, &p).unwrap();
        assert_eq!(n, 1);
        let id = vocab.id("barn");
        assert_eq!(store.value(enc.tables.word).row(id)[1], 0.5);
        assert!(store.get(enc.tables.word).frozen_rows.as_ref().unwrap()[id]);
        std::fs::write(&p, "barn 1 2\n").unwrap();
        assert!(matches!(
            enc.tables.load_pretrained(&mut store, &vocab, &p),
            Err(Error::Data(_))
        ));
    }
}
