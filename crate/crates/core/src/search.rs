//! Greedy, sampled and beam decoding.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{EncodedExample, EOS, SOS};
use crate::encoder::PassageEncoding;
use crate::error::Result;
use crate::model::{Draft, PrelimRun, RefNet, RefineRun};
use crate::tape::{Tape, Var};

pub const DEFAULT_BEAM: usize = 5;

/// How the next token is chosen.
pub enum Mode<'r> {
    Greedy,
    Sample(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    fn pick(&mut self, dist: &[f64]) -> usize {
        match self {
            Mode::Greedy => argmax(dist),
            Mode::Sample(rng) => sample(dist, rng),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Draws an index with probability proportional to `v`.
pub fn sample(v: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = v.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    let mut last = 0;
    for (i, &p) in v.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        last = i;
        if u < p {
            return i;
        }
        u -= p;
    }
    last
}

/// Runs the preliminary decoder from SOS until EOS or `max_len` tokens.
pub fn decode_draft(
    model: &RefNet,
    tape: &mut Tape,
    enc: &PassageEncoding,
    ex: &EncodedExample,
    mut mode: Mode,
    max_len: usize,
) -> Result<Draft> {
    let mem = model.prelim_memory(tape, enc, ex)?;
    let mut run = PrelimRun::start(model, tape, enc)?;
    let mut draft = Draft {
        tokens: Vec::new(),
        logprobs: Vec::new(),
        attention: Vec::new(),
    };
    let mut prev = SOS;
    for _ in 0..max_len.max(1) {
        let s = run.step(model, tape, &mem, prev)?;
        let dist = tape.value(s.dist);
        let tok = mode.pick(dist);
        draft.tokens.push(tok);
        draft.logprobs.push(dist[tok].ln());
        draft.attention.push(tape.value(s.attention).to_vec());
        if tok == EOS {
            break;
        }
        prev = tok;
    }
    Ok(draft)
}

/// Output of one refinement decode.
#[derive(Clone, Debug)]
pub struct Decoded {
    /// Extended ids, ending with EOS unless the length limit was hit.
    pub tokens: Vec<usize>,
    pub logprobs: Vec<f64>,
    /// `-ln p(token)` of each chosen token, on the tape.
    pub nll: Vec<Var>,
    /// A2 weights per step.
    pub attention: Vec<Vec<f64>>,
    /// A3 weights per step (empty when A3 is disabled).
    pub draft_attention: Vec<Vec<f64>>,
}

impl Decoded {
    pub fn logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

pub fn decode_refinement(
    model: &RefNet,
    tape: &mut Tape,
    enc: &PassageEncoding,
    ex: &EncodedExample,
    draft: &[usize],
    mut mode: Mode,
    max_len: usize,
) -> Result<Decoded> {
    let mem = model.refine_memory(tape, enc, ex)?;
    let dm = model.draft_memory(tape, draft)?;
    let mut run = RefineRun::start(model, tape, enc)?;
    let mut out = Decoded {
        tokens: Vec::new(),
        logprobs: Vec::new(),
        nll: Vec::new(),
        attention: Vec::new(),
        draft_attention: Vec::new(),
    };
    let mut prev = SOS;
    for _ in 0..max_len.max(1) {
        let s = run.step(model, tape, &mem, &dm, prev)?;
        let tok = mode.pick(tape.value(s.dist));
        let nll = tape.nll(s.dist, tok)?;
        out.tokens.push(tok);
        out.logprobs.push(-tape.scalar(nll));
        out.nll.push(nll);
        out.attention.push(tape.value(s.attention).to_vec());
        if let Some(b) = s.draft_attention {
            out.draft_attention.push(tape.value(b).to_vec());
        }
        if tok == EOS {
            break;
        }
        prev = tok;
    }
    Ok(out)
}

/// A finished beam-search result.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Sum of token log-probabilities.
    pub logprob: f64,
}

impl Hypothesis {
    fn score(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.logprob / self.tokens.len() as f64
        } else {
            self.logprob
        }
    }
}

/// Best first by score, then by lexicographically smallest ids.
fn better(a: &Hypothesis, b: &Hypothesis, length_norm: bool) -> std::cmp::Ordering {
    b.score(length_norm)
        .total_cmp(&a.score(length_norm))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

struct Live {
    hyp: Hypothesis,
    run: RefineRun,
}

/// Beam search over the refinement decoder given a draft. The greedy
/// refinement decode is entered as a finished candidate, so the result never
/// scores below it; with `beam == 1` the result is the greedy decode.
#[allow(clippy::too_many_arguments)]
pub fn beam_search(
    model: &RefNet,
    tape: &mut Tape,
    enc: &PassageEncoding,
    ex: &EncodedExample,
    draft: &[usize],
    beam: usize,
    max_len: usize,
    length_norm: bool,
) -> Result<Hypothesis> {
    let beam = beam.max(1);
    let max_len = max_len.max(1);
    let greedy = decode_refinement(model, tape, enc, ex, draft, Mode::Greedy, max_len)?;
    let mut finished = vec![Hypothesis {
        logprob: greedy.logprob(),
        tokens: greedy.tokens,
    }];
    let mem = model.refine_memory(tape, enc, ex)?;
    let dm = model.draft_memory(tape, draft)?;
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            logprob: 0.0,
        },
        run: RefineRun::start(model, tape, enc)?,
    }];
    for t in 0..max_len {
        let mut cands: Vec<(Hypothesis, usize)> = Vec::new();
        let mut runs = Vec::with_capacity(live.len());
        for (k, h) in live.iter().enumerate() {
            let mut run = h.run.clone();
            let prev = h.hyp.tokens.last().copied().unwrap_or(SOS);
            let s = run.step(model, tape, &mem, &dm, prev)?;
            let dist = tape.value(s.dist);
            let mut order: Vec<usize> = (0..dist.len()).filter(|&i| dist[i] > 0.0).collect();
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(beam) {
                let mut tokens = h.hyp.tokens.clone();
                tokens.push(tok);
                cands.push((
                    Hypothesis {
                        tokens,
                        logprob: h.hyp.logprob + dist[tok].ln(),
                    },
                    k,
                ));
            }
            runs.push(run);
        }
        cands.sort_by(|a, b| better(&a.0, &b.0, length_norm));
        let mut next = Vec::new();
        for (hyp, k) in cands.into_iter().take(beam) {
            if *hyp.tokens.last().unwrap() == EOS || t + 1 == max_len {
                finished.push(hyp);
            } else {
                next.push(Live {
                    hyp,
                    run: runs[k].clone(),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if !length_norm {
            let best = finished.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if live.iter().all(|l| l.hyp.logprob < best) {
                break;
            }
        }
    }
    finished.sort_by(|a, b| better(a, b, length_norm));
    Ok(finished.swap_remove(0))
}

/// Draft plus final question for one example.
#[derive(Clone, Debug)]
pub struct Generation {
    pub draft: Draft,
    pub question: Vec<usize>,
    pub logprob: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GenerateOptions {
    pub beam: usize,
    pub max_len: usize,
    pub length_norm: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            beam: DEFAULT_BEAM,
            max_len: 30,
            length_norm: true,
        }
    }
}

/// Greedy draft, then greedy (`beam == 1`) or beam refinement.
pub fn generate(model: &RefNet, ex: &EncodedExample, opts: &GenerateOptions) -> Result<Generation> {
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, ex)?;
    let draft = decode_draft(model, &mut tape, &enc, ex, Mode::Greedy, opts.max_len)?;
    let (question, logprob) = if opts.beam <= 1 {
        let d = decode_refinement(model, &mut tape, &enc, ex, &draft.tokens, Mode::Greedy, opts.max_len)?;
        let lp = d.logprob();
        (d.tokens, lp)
    } else {
        let h = beam_search(
            model,
            &mut tape,
            &enc,
            ex,
            &draft.tokens,
            opts.beam,
            opts.max_len,
            opts.length_norm,
        )?;
        (h.tokens, h.logprob)
    };
    Ok(Generation {
        draft,
        question,
        logprob,
    })
}

/// Strips a trailing EOS.
pub fn strip_eos(tokens: &[usize]) -> &[usize] {
    match tokens.last() {
        Some(&EOS) => &tokens[..tokens.len() - 1],
        _ => tokens,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0]), 0);
    }

    #[test]
    fn sampling_is_seeded_and_skips_zeros() {
        let d = [0.0, 0.5, 0.0, 0.5];
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<usize> = (0..50).map(|_| sample(&d, &mut a)).collect();
        let ys: Vec<usize> = (0..50).map(|_| sample(&d, &mut b)).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().all(|&i| i == 1 || i == 3));
    }

    #[test]
    fn strip_eos_only_strips_trailing() {
        assert_eq!(strip_eos(&[5, 6, EOS]), &[5, 6]);
        assert_eq!(strip_eos(&[5, 6]), &[5, 6]);
    }
}
