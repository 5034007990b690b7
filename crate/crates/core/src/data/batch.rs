use serde::{Deserialize, Serialize};

use crate::data::chars::{char_ids, CHAR_PAD};
use crate::data::tagging::{tag_answer, DEFAULT_CLIP};
use crate::data::vocab::{Vocabulary, EOS, PAD, SOS, UNK};
use crate::data::{Example, Span};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_passage: usize,
    pub max_question: usize,
    pub clip: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_passage: 100,
            max_question: 30,
            clip: DEFAULT_CLIP,
        }
    }
}

/// Unpadded id view of one example, the unit the model consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub passage: Vec<usize>,
    /// Passage ids in the per-example extended vocabulary: an out-of-vocabulary
    /// token gets `vocab_size + k` where `k` indexes `oovs`.
    pub passage_ext: Vec<usize>,
    pub oovs: Vec<String>,
    pub passage_tokens: Vec<String>,
    pub passage_chars: Vec<Vec<usize>>,
    pub tags: Vec<usize>,
    pub positions: Vec<usize>,
    pub answer: Vec<usize>,
    pub answer_chars: Vec<Vec<usize>>,
    pub answer_span: Option<Span>,
    /// SOS followed by the question ids (UNK for anything outside the vocabulary).
    pub question_in: Vec<usize>,
    /// Question ids in the extended vocabulary followed by EOS.
    pub question_target: Vec<usize>,
    pub question_tokens: Vec<String>,
}

impl EncodedExample {
    pub fn extended_size(&self, vocab_size: usize) -> usize {
        vocab_size + self.oovs.len()
    }

    /// Maps an extended id back to its token.
    pub fn ext_token<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> &'a str {
        if id >= vocab.len() {
            self.oovs
                .get(id - vocab.len())
                .map(String::as_str)
                .unwrap_or("<unk>")
        } else {
            vocab.token(id).unwrap_or("<unk>")
        }
    }

    /// Extended ids to tokens, stopping at EOS.
    pub fn detokenize(&self, vocab: &Vocabulary, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.ext_token(vocab, i).to_string())
            .collect()
    }
}

/// Encodes one example. Returns `Ok(None)` when the question exceeds
/// `limits.max_question`; the passage is truncated to `limits.max_passage`.
pub fn encode_example(
    ex: &Example,
    vocab: &Vocabulary,
    limits: &Limits,
) -> Result<Option<(EncodedExample, bool)>> {
    if ex.question.len() > limits.max_question {
        return Ok(None);
    }
    let mut ex2;
    let mut ex = ex;
    let truncated = ex.passage.len() > limits.max_passage;
    if truncated {
        ex2 = ex.clone();
        ex2.passage.truncate(limits.max_passage);
        ex2.raw_passage.truncate(limits.max_passage);
        if ex2.answer_span.is_some_and(|s| s.end() > limits.max_passage) {
            ex2.answer_span = None;
        }
        ex = &ex2;
    }
    let tags = tag_answer(ex, limits.clip)?;
    let vsize = vocab.len();
    let mut oovs: Vec<String> = Vec::new();
    let mut passage = Vec::with_capacity(ex.passage.len());
    let mut passage_ext = Vec::with_capacity(ex.passage.len());
    for t in &ex.passage {
        let id = vocab.id(t);
        passage.push(id);
        if vocab.contains(t) {
            passage_ext.push(id);
        } else {
            let k = match oovs.iter().position(|o| o == t) {
                Some(k) => k,
                None => {
                    oovs.push(t.clone());
                    oovs.len() - 1
                }
            };
            passage_ext.push(vsize + k);
        }
    }
    let mut question_in = vec![SOS];
    let mut question_target = Vec::with_capacity(ex.question.len() + 1);
    for t in &ex.question {
        question_in.push(vocab.id(t));
        let tid = if vocab.contains(t) {
            vocab.id(t)
        } else {
            oovs.iter().position(|o| o == t).map_or(UNK, |k| vsize + k)
        };
        question_target.push(tid);
    }
    question_target.push(EOS);
    let enc = EncodedExample {
        id: ex.id.clone(),
        passage,
        passage_ext,
        oovs,
        passage_tokens: ex.passage.clone(),
        passage_chars: ex.passage.iter().map(|t| char_ids(t)).collect(),
        tags: tags.tags.iter().map(|t| *t as usize).collect(),
        positions: (0..ex.passage.len())
            .map(|i| tags.position_index(i, limits.clip))
            .collect(),
        answer: ex.answer.iter().map(|t| vocab.id(t)).collect(),
        answer_chars: ex.answer.iter().map(|t| char_ids(t)).collect(),
        answer_span: ex.answer_span,
        question_in,
        question_target,
        question_tokens: ex.question.clone(),
    };
    Ok(Some((enc, truncated)))
}

/// Padded batch. Padding positions hold PAD (or `CHAR_PAD`) and are never read
/// by the model: [`Batch::example`] slices each row back to its length.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub passage: Vec<Vec<usize>>,
    pub passage_len: Vec<usize>,
    pub passage_ext: Vec<Vec<usize>>,
    pub oovs: Vec<Vec<String>>,
    pub passage_tokens: Vec<Vec<String>>,
    pub tags: Vec<Vec<usize>>,
    pub positions: Vec<Vec<usize>>,
    pub answer: Vec<Vec<usize>>,
    pub answer_len: Vec<usize>,
    pub answer_span: Vec<Option<Span>>,
    pub question_in: Vec<Vec<usize>>,
    pub question_target: Vec<Vec<usize>>,
    pub question_len: Vec<usize>,
    pub question_tokens: Vec<Vec<String>>,
    /// `[example][token][char]`, padded in both inner dimensions.
    pub passage_chars: Vec<Vec<Vec<usize>>>,
    pub answer_chars: Vec<Vec<Vec<usize>>>,
    pub char_len_passage: Vec<Vec<usize>>,
    pub char_len_answer: Vec<Vec<usize>>,
}

fn pad_to(v: &[usize], n: usize, with: usize) -> Vec<usize> {
    let mut out = v.to_vec();
    out.resize(n, with);
    out
}

fn pad_chars(rows: &[Vec<usize>], n: usize, width: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut out: Vec<Vec<usize>> = rows.iter().map(|r| pad_to(r, width, CHAR_PAD)).collect();
    let mut lens: Vec<usize> = rows.iter().map(Vec::len).collect();
    out.resize(n, vec![CHAR_PAD; width]);
    lens.resize(n, 0);
    (out, lens)
}

impl Batch {
    pub fn from_examples(items: &[EncodedExample]) -> Self {
        let mp = items.iter().map(|e| e.passage.len()).max().unwrap_or(0);
        let ma = items.iter().map(|e| e.answer.len()).max().unwrap_or(0);
        let mq = items.iter().map(|e| e.question_in.len()).max().unwrap_or(0);
        let mc = items
            .iter()
            .flat_map(|e| e.passage_chars.iter().chain(&e.answer_chars))
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let mut b = Batch {
            ids: Vec::new(),
            passage: Vec::new(),
            passage_len: Vec::new(),
            passage_ext: Vec::new(),
            oovs: Vec::new(),
            passage_tokens: Vec::new(),
            tags: Vec::new(),
            positions: Vec::new(),
            answer: Vec::new(),
            answer_len: Vec::new(),
            answer_span: Vec::new(),
            question_in: Vec::new(),
            question_target: Vec::new(),
            question_len: Vec::new(),
            question_tokens: Vec::new(),
            passage_chars: Vec::new(),
            answer_chars: Vec::new(),
            char_len_passage: Vec::new(),
            char_len_answer: Vec::new(),
        };
        for e in items {
            b.ids.push(e.id.clone());
            b.passage.push(pad_to(&e.passage, mp, PAD));
            b.passage_len.push(e.passage.len());
            b.passage_ext.push(pad_to(&e.passage_ext, mp, PAD));
            b.oovs.push(e.oovs.clone());
            b.passage_tokens.push(e.passage_tokens.clone());
            b.tags.push(pad_to(&e.tags, mp, 0));
            b.positions.push(pad_to(&e.positions, mp, 0));
            b.answer.push(pad_to(&e.answer, ma, PAD));
            b.answer_len.push(e.answer.len());
            b.answer_span.push(e.answer_span);
            b.question_in.push(pad_to(&e.question_in, mq, PAD));
            b.question_target.push(pad_to(&e.question_target, mq, PAD));
            b.question_len.push(e.question_in.len());
            b.question_tokens.push(e.question_tokens.clone());
            let (pc, pl) = pad_chars(&e.passage_chars, mp, mc);
            b.passage_chars.push(pc);
            b.char_len_passage.push(pl);
            let (ac, al) = pad_chars(&e.answer_chars, ma, mc);
            b.answer_chars.push(ac);
            b.char_len_answer.push(al);
        }
        b
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Mask over passage positions of example `i` (true = real token).
    pub fn passage_mask(&self, i: usize) -> Vec<bool> {
        (0..self.passage[i].len())
            .map(|k| k < self.passage_len[i])
            .collect()
    }

    /// Unpadded view of example `i`.
    pub fn example(&self, i: usize) -> EncodedExample {
        let m = self.passage_len[i];
        let a = self.answer_len[i];
        let q = self.question_len[i];
        let chars = |rows: &[Vec<usize>], lens: &[usize], n: usize| -> Vec<Vec<usize>> {
            rows[..n]
                .iter()
                .zip(lens)
                .map(|(r, &l)| r[..l].to_vec())
                .collect()
        };
        EncodedExample {
            id: self.ids[i].clone(),
            passage: self.passage[i][..m].to_vec(),
            passage_ext: self.passage_ext[i][..m].to_vec(),
            oovs: self.oovs[i].clone(),
            passage_tokens: self.passage_tokens[i].clone(),
            passage_chars: chars(&self.passage_chars[i], &self.char_len_passage[i], m),
            tags: self.tags[i][..m].to_vec(),
            positions: self.positions[i][..m].to_vec(),
            answer: self.answer[i][..a].to_vec(),
            answer_chars: chars(&self.answer_chars[i], &self.char_len_answer[i], a),
            answer_span: self.answer_span[i],
            question_in: self.question_in[i][..q].to_vec(),
            question_target: self.question_target[i][..q].to_vec(),
            question_tokens: self.question_tokens[i].clone(),
        }
    }

    pub fn examples(&self) -> Vec<EncodedExample> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub truncated: usize,
    pub dropped: usize,
}

/// Buckets examples by passage length (ties by id), pads and computes the
/// per-example extended vocabularies.
pub fn make_batches(
    examples: &[Example],
    vocab: &Vocabulary,
    batch_size: usize,
    limits: &Limits,
) -> Result<(Vec<Batch>, BatchStats)> {
    if batch_size == 0 {
        return Err(Error::usage("batch_size must be at least 1"));
    }
    let mut stats = BatchStats::default();
    let mut encoded = Vec::with_capacity(examples.len());
    for ex in examples {
        match encode_example(ex, vocab, limits)? {
            Some((e, truncated)) => {
                if truncated {
                    stats.truncated += 1;
                }
                encoded.push(e);
            }
            None => stats.dropped += 1,
        }
    }
    encoded.sort_by(|a, b| a.passage.len().cmp(&b.passage.len()).then_with(|| a.id.cmp(&b.id)));
    let batches = encoded.chunks(batch_size).map(Batch::from_examples).collect();
    Ok((batches, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::vocab::build_vocab;

    fn ex(id: &str, passage: &str, q: &str, ans: &str, start: usize) -> Example {
        Example::from_text(id, passage, q, ans, Some(start)).unwrap()
    }

    #[test]
    fn no_oov_extended_equals_plain() {
        let e = ex("a", "the cat sat", "who sat ?", "cat", 1);
        let v = build_vocab(std::slice::from_ref(&e), 100).unwrap();
        let (b, _) = make_batches(&[e], &v, 4, &Limits::default()).unwrap();
        assert_eq!(b[0].passage_ext[0], b[0].passage[0]);
        assert!(b[0].oovs[0].is_empty());
    }

    #[test]
    fn unknown_token_gets_first_extended_slot() {
        let base = ex("a", "the cat sat", "who sat ?", "cat", 1);
        let v = build_vocab(&[base], 100).unwrap();
        let e = ex("b", "the xylography sat", "what sat ?", "xylography", 1);
        let (b, _) = make_batches(&[e], &v, 1, &Limits::default()).unwrap();
        assert_eq!(b[0].passage_ext[0][1], v.len());
        assert_eq!(b[0].oovs[0], vec!["xylography".to_string()]);
        assert_eq!(b[0].passage[0][1], UNK);
    }

    #[test]
    fn extended_ids_are_per_example() {
        let base = ex("a", "the cat sat", "who sat ?", "cat", 1);
        let v = build_vocab(&[base], 100).unwrap();
        let e1 = ex("b", "the zyx sat", "what sat ?", "zyx", 1);
        let e2 = ex("c", "qwv sat", "what sat ?", "qwv", 0);
        let (b, _) = make_batches(&[e1, e2], &v, 2, &Limits::default()).unwrap();
        let b = &b[0];
        let x1 = b.example(0);
        let x2 = b.example(1);
        assert!(x1.passage_ext.contains(&v.len()));
        assert!(x2.passage_ext.contains(&v.len()));
        assert_eq!(x1.oovs.len(), 1);
        assert_eq!(x2.oovs.len(), 1);
        assert_ne!(x1.oovs, x2.oovs);
    }

    #[test]
    fn question_copies_resolve_to_extended_ids() {
        let base = ex("a", "the cat sat", "who sat ?", "cat", 1);
        let v = build_vocab(&[base], 100).unwrap();
        let e = ex("b", "the zyx sat", "what did zyx do ?", "zyx", 1);
        let (b, _) = make_batches(&[e], &v, 1, &Limits::default()).unwrap();
        let x = b[0].example(0);
        assert_eq!(x.question_target[2], v.len());
        assert_eq!(x.question_in[3], UNK);
        assert_eq!(x.question_target[1], UNK); // "did" is neither in vocab nor passage
        assert_eq!(*x.question_target.last().unwrap(), EOS);
        assert_eq!(x.question_in[0], SOS);
    }

    #[test]
    fn padding_and_truncation() {
        let e1 = ex("a", "a b c d e f", "q ?", "b", 1);
        let e2 = ex("b", "a b", "q r s ?", "a", 0);
        let e3 = ex("c", "a b", "q r s t u v w ?", "a", 0);
        let v = build_vocab(&[e1.clone(), e2.clone()], 100).unwrap();
        let limits = Limits {
            max_passage: 4,
            max_question: 6,
            clip: 10,
        };
        let (bs, stats) = make_batches(&[e1, e2, e3], &v, 8, &limits).unwrap();
        assert_eq!(stats, BatchStats { truncated: 1, dropped: 1 });
        let b = &bs[0];
        assert_eq!(b.passage[0], vec![v.id("a"), v.id("b"), PAD, PAD]);
        assert_eq!(b.passage_mask(0), vec![true, true, false, false]);
        assert_eq!(b.example(1).passage.len(), 4);
        assert_eq!(b.question_target[0][4], EOS);
        assert_eq!(b.question_target[1][2..], [EOS, PAD, PAD]);
    }

    #[test]
    fn zero_batch_size_rejected() {
        let v = Vocabulary::from_tokens(Vec::<String>::new());
        assert!(make_batches(&[], &v, 0, &Limits::default()).is_err());
    }
}
