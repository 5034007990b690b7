//! Invariant checks on a tiny model: gradient fidelity, distribution
//! validity and checkpoint round trip.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::{encode_example, EncodedExample, Example, Limits, Span, Vocabulary, EOS};
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheckReport};
use crate::model::{ModelConfig, RefNet};
use crate::search::{generate, GenerateOptions};
use crate::tape::Tape;
use crate::training::{joint_mle_loss, DraftSource, LossWeights};

const WORDS: [&str; 16] = [
    "the", "a", "who", "what", "built", "saw", "tower", "river", "in", "paris", "oslo", "?", ".",
    "red", "old", "is",
];

/// 16 words plus the 4 reserved ids.
pub fn tiny_vocab() -> Vocabulary {
    Vocabulary::from_tokens(WORDS.iter().map(|w| w.to_string()))
}

/// Passage of 5 tokens (one out of vocabulary), a 4-token question and a
/// fixed 4-token draft.
pub fn tiny_fixture(seed: u64) -> Result<(RefNet, EncodedExample, Vec<usize>)> {
    let vocab = tiny_vocab();
    let words = |s: &str| s.split(' ').map(String::from).collect::<Vec<_>>();
    let ex = Example::new(
        "tiny",
        words("Gustave built the tower ."),
        words("gustave"),
        Some(Span { start: 0, len: 1 }),
        words("who built tower ?"),
    )?;
    let (enc, _) = encode_example(&ex, &vocab, &Limits::default())?
        .expect("question within limits");
    let model = RefNet::new(ModelConfig::tiny(vocab.len()), seed)?;
    let draft = vec![vocab.id("who"), vocab.id("saw"), vocab.id("?"), EOS];
    Ok((model, enc, draft))
}

/// Central-difference check of the joint loss over every trainable
/// parameter of the tiny model.
pub fn model_grad_check(seed: u64, eps: f64) -> Result<GradCheckReport> {
    let (mut model, ex, draft) = tiny_fixture(seed)?;
    let weights = LossWeights::default();
    let snapshot = model.clone();
    grad_check(&mut model.params, eps, |tape: &mut Tape| {
        // values are read through the tape; the clone only supplies structure
        let parts = joint_mle_loss(&snapshot, tape, &ex, &weights, DraftSource::Gold, Some(&draft))?;
        Ok(parts.loss)
    })
}

/// Worst deviation found by [`distribution_sweep`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SweepReport {
    pub steps: usize,
    pub distributions: usize,
    pub max_sum_error: f64,
    pub min_entry: f64,
}

fn check_dist(r: &mut SweepReport, d: &[f64]) {
    let s: f64 = d.iter().sum();
    r.max_sum_error = r.max_sum_error.max((s - 1.0).abs());
    r.min_entry = d.iter().copied().fold(r.min_entry, f64::min);
    r.distributions += 1;
}

/// Forward steps of both decoders on random models and inputs, checking the
/// vocabulary softmax and the copy-mixed output at every step.
pub fn distribution_sweep(steps: usize, seed: u64) -> Result<SweepReport> {
    let vocab = tiny_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport {
        min_entry: f64::INFINITY,
        ..Default::default()
    };
    let pool: Vec<&str> = WORDS.iter().copied().chain(["zorb", "Quill", "1901"]).collect();
    while report.steps < steps {
        let mut cfg = ModelConfig::tiny(vocab.len());
        cfg.use_copy = rng.gen_bool(0.8);
        cfg.use_a3 = rng.gen_bool(0.8);
        cfg.lagged_output = rng.gen_bool(0.5);
        let model = RefNet::new(cfg, rng.gen())?;
        let plen = rng.gen_range(2..9);
        let passage: Vec<String> = (0..plen).map(|_| pool[rng.gen_range(0..pool.len())].to_string()).collect();
        let start = rng.gen_range(0..plen);
        let answer = vec![passage[start].to_lowercase()];
        let qlen = rng.gen_range(1..6);
        let question: Vec<String> = (0..qlen).map(|_| pool[rng.gen_range(0..pool.len())].to_string()).collect();
        let ex = Example::new("sweep", passage, answer, Some(Span { start, len: 1 }), question)?;
        let Some((ex, _)) = encode_example(&ex, &vocab, &Limits::default())? else {
            continue;
        };
        let ext = ex.extended_size(vocab.len());
        let draft: Vec<usize> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..ext)).collect();
        let mut tape = Tape::new(&model.params);
        let enc = model.encode(&mut tape, &ex)?;
        let prelim = model.preliminary_forced(&mut tape, &enc, &ex, &ex.question_in)?;
        let refine = model.refinement_forced(&mut tape, &enc, &ex, &draft, &ex.question_in)?;
        for s in prelim.iter().chain(&refine) {
            check_dist(&mut report, tape.value(s.vocab));
            check_dist(&mut report, tape.value(s.dist));
            report.steps += 1;
        }
    }
    Ok(report)
}

/// Saves and reloads the tiny model; true when parameters and a beam decode
/// agree bitwise.
pub fn checkpoint_round_trip(seed: u64) -> Result<bool> {
    let (model, ex, _) = tiny_fixture(seed)?;
    let ck = Checkpoint::from_model(&model, &tiny_vocab().hash());
    let back: Checkpoint = serde_json::from_str(&ck.to_json()).map_err(|e| crate::Error::data(e.to_string()))?;
    let restored = back.into_model()?;
    let same_params = model
        .params
        .iter()
        .zip(restored.params.iter())
        .all(|((_, a), (_, b))| {
            a.value.data().iter().map(|v| v.to_bits()).eq(b.value.data().iter().map(|v| v.to_bits()))
        });
    let opts = GenerateOptions {
        beam: 3,
        max_len: 6,
        length_norm: true,
    };
    let g1 = generate(&model, &ex, &opts)?;
    let g2 = generate(&restored, &ex, &opts)?;
    Ok(same_params && g1.question == g2.question && g1.logprob.to_bits() == g2.logprob.to_bits())
}

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const GRAD_EPS: f64 = 1e-3;
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs all checks; `sweep_steps` controls the size of the distribution sweep.
pub fn run_all(sweep_steps: usize) -> Vec<CheckOutcome> {
    let mut out = Vec::new();
    let t = Instant::now();
    out.push(match model_grad_check(1, GRAD_EPS) {
        Ok(r) => CheckOutcome {
            name: "grad_check",
            passed: r.max_rel_error < GRAD_TOLERANCE,
            detail: format!(
                "max relative error {:.3e} at {}[{}] over {} entries ({:.1}s)",
                r.max_rel_error,
                r.worst_param.as_deref().unwrap_or("-"),
                r.worst_index,
                r.checked,
                t.elapsed().as_secs_f64()
            ),
        },
        Err(e) => CheckOutcome {
            name: "grad_check",
            passed: false,
            detail: e.to_string(),
        },
    });
    out.push(match distribution_sweep(sweep_steps, 2) {
        Ok(r) => CheckOutcome {
            name: "distribution",
            passed: r.max_sum_error <= SUM_TOLERANCE && r.min_entry >= 0.0,
            detail: format!(
                "{} steps, {} distributions, max |sum - 1| {:.2e}, min entry {:.2e}",
                r.steps, r.distributions, r.max_sum_error, r.min_entry
            ),
        },
        Err(e) => CheckOutcome {
            name: "distribution",
            passed: false,
            detail: e.to_string(),
        },
    });
    out.push(match checkpoint_round_trip(3) {
        Ok(ok) => CheckOutcome {
            name: "checkpoint",
            passed: ok,
            detail: if ok { "bitwise round trip".into() } else { "reloaded model differs".into() },
        },
        Err(e) => CheckOutcome {
            name: "checkpoint",
            passed: false,
            detail: e.to_string(),
        },
    });
    out
}
