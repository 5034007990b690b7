//! Joint maximum-likelihood training of both decoders and REINFORCE
//! fine-tuning with the preliminary decoder's reward as baseline.

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_example, EncodedExample, Example, Limits, Vocabulary};
use crate::error::{Error, Result};
use crate::metrics::{corpus_bleu, NeLexicon};
use crate::model::RefNet;
use crate::optim::{adam_step, AdamConfig, AdamState, DEFAULT_LR};
use crate::params::ParamId;
use crate::rewards::{RewardContext, RewardFn, RewardKind};
use crate::search::{decode_draft, decode_refinement, strip_eos, Mode};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::Tensor;

/// What the refinement decoder reads as its draft during MLE training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DraftSource {
    /// Greedy output of the current preliminary decoder.
    Greedy,
    /// The reference question.
    Gold,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub reward_epochs: usize,
    pub finetune_lr: f64,
    pub batch_size: usize,
    pub limits: Limits,
    pub lambda_cov: f64,
    /// Epochs of training before the coverage penalty is switched on.
    pub coverage_warmup: usize,
    pub w_prelim: f64,
    pub w_refine: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub reward: String,
    /// Weight of the refinement MLE loss added to the REINFORCE loss.
    pub mle_mix: f64,
    pub draft_source: DraftSource,
    /// Whether reward fine-tuning updates the encoder.
    pub finetune_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: DEFAULT_LR,
            epochs: 10,
            reward_epochs: 3,
            finetune_lr: DEFAULT_LR,
            batch_size: 32,
            limits: Limits::default(),
            lambda_cov: 1.0,
            coverage_warmup: 1,
            w_prelim: 1.0,
            w_refine: 1.0,
            clip_norm: 5.0,
            seed: 0,
            reward: "fluency".to_string(),
            mle_mix: 0.0,
            draft_source: DraftSource::Greedy,
            finetune_encoder: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("lr", self.lr),
            ("finetune_lr", self.finetune_lr),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in pos {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonneg = [
            ("lambda_cov", self.lambda_cov),
            ("w_prelim", self.w_prelim),
            ("w_refine", self.w_refine),
            ("mle_mix", self.mle_mix),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        self.reward.parse::<RewardKind>()?;
        Ok(())
    }
}

/// An encoded example plus the entity lexicon used by answerability rewards.
#[derive(Clone, Debug)]
pub struct TrainItem {
    pub ex: EncodedExample,
    pub lexicon: NeLexicon,
}

/// Encodes examples, dropping those whose question is too long.
pub fn prepare(examples: &[Example], vocab: &Vocabulary, limits: &Limits) -> Result<Vec<TrainItem>> {
    let mut out = Vec::with_capacity(examples.len());
    let (mut dropped, mut truncated) = (0, 0);
    for e in examples {
        match encode_example(e, vocab, limits)? {
            Some((ex, cut)) => {
                truncated += cut as usize;
                let raw = e.raw_passage.iter().chain(&e.raw_question).map(String::as_str);
                out.push(TrainItem {
                    ex,
                    lexicon: NeLexicon::from_raw(raw),
                });
            }
            None => dropped += 1,
        }
    }
    if dropped + truncated > 0 {
        log::info!("{dropped} examples dropped (question too long), {truncated} passages truncated");
    }
    Ok(out)
}

/// Per-example parts of the joint loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub loss: Var,
    pub ce_prelim: f64,
    pub ce_refine: f64,
    pub coverage: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossWeights {
    pub w_prelim: f64,
    pub w_refine: f64,
    pub lambda_cov: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_prelim: 1.0,
            w_refine: 1.0,
            lambda_cov: 1.0,
        }
    }
}

/// Token-mean cross-entropy of `dists` against `targets`, and the step-mean
/// coverage penalty.
fn sequence_ce(
    model: &RefNet,
    tape: &mut Tape,
    steps: &[crate::decoder::StepOutput],
    targets: &[usize],
) -> Result<(Var, Var)> {
    let mut nll = Vec::with_capacity(steps.len());
    let mut cov = Vec::with_capacity(steps.len());
    for (s, &t) in steps.iter().zip(targets) {
        nll.push(tape.nll(s.dist, model.target(t))?);
        cov.push(s.penalty);
    }
    let n = steps.len() as f64;
    let ce = tape.sum_scalars(&nll)?;
    let ce = tape.affine(ce, 1.0 / n, 0.0)?;
    let c = tape.sum_scalars(&cov)?;
    let c = tape.affine(c, 1.0 / n, 0.0)?;
    Ok((ce, c))
}

/// `w_p · CE_prelim + w_r · CE_refine + λ · coverage` for one example.
/// `draft` overrides the configured draft source.
pub fn joint_mle_loss(
    model: &RefNet,
    tape: &mut Tape,
    ex: &EncodedExample,
    weights: &LossWeights,
    source: DraftSource,
    draft: Option<&[usize]>,
) -> Result<LossParts> {
    let enc = model.encode(tape, ex)?;
    let prelim = model.preliminary_forced(tape, &enc, ex, &ex.question_in)?;
    let (ce_p, cov_p) = sequence_ce(model, tape, &prelim, &ex.question_target)?;
    let draft_tokens: Vec<usize> = match (draft, source) {
        (Some(d), _) => d.to_vec(),
        (None, DraftSource::Gold) => ex.question_target.clone(),
        (None, DraftSource::Greedy) => {
            decode_draft(model, tape, &enc, ex, Mode::Greedy, model.config.max_decode_len)?.tokens
        }
    };
    let refine = model.refinement_forced(tape, &enc, ex, &draft_tokens, &ex.question_in)?;
    let (ce_r, cov_r) = sequence_ce(model, tape, &refine, &ex.question_target)?;
    let a = tape.affine(ce_p, weights.w_prelim, 0.0)?;
    let b = tape.affine(ce_r, weights.w_refine, 0.0)?;
    let cov = tape.add(cov_p, cov_r)?;
    let cov_value = tape.scalar(cov);
    let mut loss = tape.add(a, b)?;
    if weights.lambda_cov > 0.0 {
        let c = tape.affine(cov, weights.lambda_cov, 0.0)?;
        loss = tape.add(loss, c)?;
    }
    Ok(LossParts {
        loss,
        ce_prelim: tape.scalar(ce_p),
        ce_refine: tape.scalar(ce_r),
        coverage: cov_value,
    })
}

/// `−(r(Q) − r(Q̃)) · Σ_t log p(q_t)`, written with the per-token negative
/// log-likelihoods `nll_t = −log p(q_t)`. Rewards are constants.
pub fn reinforce_loss(tape: &mut Tape, nll: &[Var], reward: f64, baseline: f64) -> Result<Var> {
    let advantage = reward - baseline;
    let total = tape.sum_scalars(nll)?;
    tape.affine(total, advantage, 0.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_bleu4: f64,
    pub wall_ms: u64,
}

/// Snapshot of all parameter values.
pub fn snapshot(model: &RefNet) -> Vec<Tensor> {
    model.params.iter().map(|(_, p)| p.value.clone()).collect()
}

pub fn restore(model: &mut RefNet, values: &[Tensor]) -> Result<()> {
    let ids: Vec<ParamId> = model.params.ids().collect();
    for (id, v) in ids.into_iter().zip(values) {
        model.params.set_value(id, v.clone())?;
    }
    Ok(())
}

fn tag_step(e: Error, epoch: usize, step: usize) -> Error {
    match e {
        Error::NonFinite { op } => Error::NonFinite {
            op: format!("{op} (epoch {epoch}, step {step})"),
        },
        other => other,
    }
}

/// Greedy draft then greedy refinement, as detokenized tokens without EOS.
pub fn greedy_outputs(model: &RefNet, vocab: &Vocabulary, ex: &EncodedExample) -> Result<(Vec<String>, Vec<String>)> {
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, ex)?;
    let max_len = model.config.max_decode_len;
    let draft = decode_draft(model, &mut tape, &enc, ex, Mode::Greedy, max_len)?;
    let refined = decode_refinement(model, &mut tape, &enc, ex, &draft.tokens, Mode::Greedy, max_len)?;
    Ok((
        ex.detokenize(vocab, &draft.tokens),
        ex.detokenize(vocab, &refined.tokens),
    ))
}

/// Corpus BLEU-4 of greedy refinement outputs (and of the drafts).
pub fn evaluate_bleu(model: &RefNet, vocab: &Vocabulary, items: &[TrainItem]) -> Result<(f64, f64)> {
    let mut draft_pairs = Vec::with_capacity(items.len());
    let mut refined_pairs = Vec::with_capacity(items.len());
    for it in items {
        let (d, r) = greedy_outputs(model, vocab, &it.ex)?;
        let reference = vec![it.ex.question_tokens.clone()];
        draft_pairs.push((d, reference.clone()));
        refined_pairs.push((r, reference));
    }
    Ok((corpus_bleu(&refined_pairs, 4), corpus_bleu(&draft_pairs, 4)))
}

/// Mean token cross-entropy of both decoders over `items` (refinement on
/// the configured draft source).
pub fn mean_ce(model: &RefNet, items: &[TrainItem], source: DraftSource) -> Result<(f64, f64)> {
    let (mut p, mut r) = (0.0, 0.0);
    for it in items {
        let mut tape = Tape::new(&model.params);
        let parts = joint_mle_loss(model, &mut tape, &it.ex, &LossWeights::default(), source, None)?;
        p += parts.ce_prelim;
        r += parts.ce_refine;
    }
    let n = items.len().max(1) as f64;
    Ok((p / n, r / n))
}

/// Result of [`fit`]: per-epoch log and the epoch whose validation BLEU-4
/// was best (the model is left holding those parameters; the last epoch when
/// there is no validation split).
#[derive(Clone, Debug)]
pub struct FitResult {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_bleu4: f64,
}

fn batches(n: usize, size: usize, rng: &mut ChaCha8Rng, items: &[TrainItem]) -> Vec<Vec<usize>> {
    // bucket by passage length, then shuffle the bucket order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (items[i].ex.passage.len(), items[i].ex.id.clone()));
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    out.shuffle(rng);
    out
}

/// Joint MLE training with Adam; after every epoch the validation split is
/// decoded greedily and the best BLEU-4 parameters are kept.
pub fn fit(
    model: &mut RefNet,
    vocab: &Vocabulary,
    train: &[TrainItem],
    validation: &[TrainItem],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitResult> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(AdamConfig::default());
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Tensor>)> = None;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let weights = LossWeights {
            w_prelim: cfg.w_prelim,
            w_refine: cfg.w_refine,
            lambda_cov: if epoch > cfg.coverage_warmup { cfg.lambda_cov } else { 0.0 },
        };
        let mut total = 0.0;
        for batch in batches(train.len(), cfg.batch_size, &mut rng, train) {
            step += 1;
            model.params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &i in &batch {
                let grads = {
                    let mut tape = Tape::new(&model.params);
                    let parts = joint_mle_loss(model, &mut tape, &train[i].ex, &weights, cfg.draft_source, None)
                        .map_err(|e| tag_step(e, epoch, step))?;
                    total += tape.scalar(parts.loss);
                    let mut g = tape.backward(parts.loss).map_err(|e| tag_step(e, epoch, step))?;
                    g.scale(scale);
                    g
                };
                model.params.accumulate(&grads);
            }
            model.params.clip_grad_norm(cfg.clip_norm);
            adam_step(&mut model.params, &mut adam, cfg.lr)?;
        }
        let val_bleu4 = if validation.is_empty() {
            0.0
        } else {
            evaluate_bleu(model, vocab, validation)?.0
        };
        let log = EpochLog {
            epoch,
            train_loss: total / train.len() as f64,
            val_bleu4,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "epoch {epoch}: loss {:.4} val BLEU-4 {:.4}",
            log.train_loss,
            log.val_bleu4
        );
        on_epoch(&log);
        history.push(log);
        if !validation.is_empty() && best.as_ref().is_none_or(|(_, b, _)| val_bleu4 > *b) {
            best = Some((epoch, val_bleu4, snapshot(model)));
        }
    }
    let (best_epoch, best_val_bleu4) = match best {
        Some((e, b, values)) => {
            restore(model, &values)?;
            (e, b)
        }
        // without a validation split the final parameters are kept
        None => (cfg.epochs, 0.0),
    };
    Ok(FitResult {
        history,
        best_epoch,
        best_val_bleu4,
    })
}

/// Per-epoch record of reward fine-tuning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardLog {
    pub epoch: usize,
    pub mean_reward: f64,
    pub mean_baseline: f64,
    pub val_bleu4: f64,
    pub wall_ms: u64,
}

/// Sets trainability for fine-tuning and returns the previous flags.
fn freeze_for_finetune(model: &mut RefNet, encoder: bool) -> Vec<(ParamId, bool)> {
    let prelim: Vec<ParamId> = model.preliminary_only();
    let mut saved = Vec::new();
    let ids: Vec<(ParamId, String)> = model
        .params
        .iter()
        .map(|(id, p)| (id, p.name.clone()))
        .collect();
    for (id, name) in ids {
        saved.push((id, model.params.is_trainable(id)));
        let frozen = prelim.contains(&id)
            || (!encoder && (name.starts_with("enc.") || name.starts_with("embed.")));
        if frozen {
            model.params.set_trainable(id, false);
        }
    }
    saved
}

/// REINFORCE loss of one example: sample from the refinement decoder given
/// the greedy draft, reward both, weight the sample's log-likelihood by the
/// advantage. Returns `(gradients, r(Q), r(Q̃))`.
pub fn reinforce_example(
    model: &RefNet,
    vocab: &Vocabulary,
    item: &TrainItem,
    reward: &RewardFn,
    mle_mix: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Gradients, f64, f64)> {
    let ex = &item.ex;
    let mut tape = Tape::new(&model.params);
    let enc = model.encode(&mut tape, ex)?;
    let max_len = model.config.max_decode_len;
    let draft = decode_draft(model, &mut tape, &enc, ex, Mode::Greedy, max_len)?;
    let sample = decode_refinement(model, &mut tape, &enc, ex, &draft.tokens, Mode::Sample(rng), max_len)?;
    let ctx = RewardContext {
        reference: &ex.question_tokens,
        passage: &ex.passage_tokens,
        lexicon: &item.lexicon,
    };
    let r_q = reward.score(&ex.detokenize(vocab, &sample.tokens), &ctx);
    let r_base = reward.score(&ex.detokenize(vocab, strip_eos(&draft.tokens)), &ctx);
    let mut loss = reinforce_loss(&mut tape, &sample.nll, r_q, r_base)?;
    if mle_mix > 0.0 {
        let steps = model.refinement_forced(&mut tape, &enc, ex, &draft.tokens, &ex.question_in)?;
        let (ce, _) = sequence_ce(model, &mut tape, &steps, &ex.question_target)?;
        let ce = tape.affine(ce, mle_mix, 0.0)?;
        loss = tape.add(loss, ce)?;
    }
    Ok((tape.backward(loss)?, r_q, r_base))
}

/// Mean reward of greedy refinement outputs over `items`.
pub fn mean_reward(model: &RefNet, vocab: &Vocabulary, items: &[TrainItem], reward: &RewardFn) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        let (_, refined) = greedy_outputs(model, vocab, &it.ex)?;
        let ctx = RewardContext {
            reference: &it.ex.question_tokens,
            passage: &it.ex.passage_tokens,
            lexicon: &it.lexicon,
        };
        total += reward.score(&refined, &ctx);
    }
    Ok(total / items.len().max(1) as f64)
}

/// Mean `r(Q) − r(Q̃)` of greedy outputs (refined minus draft).
pub fn mean_advantage(model: &RefNet, vocab: &Vocabulary, items: &[TrainItem], reward: &RewardFn) -> Result<f64> {
    let mut total = 0.0;
    for it in items {
        let (d, r) = greedy_outputs(model, vocab, &it.ex)?;
        let ctx = RewardContext {
            reference: &it.ex.question_tokens,
            passage: &it.ex.passage_tokens,
            lexicon: &it.lexicon,
        };
        total += reward.score(&r, &ctx) - reward.score(&d, &ctx);
    }
    Ok(total / items.len().max(1) as f64)
}

/// REINFORCE fine-tuning for `cfg.reward_epochs`. Preliminary-decoder
/// parameters stay frozen so the baseline is stationary.
pub fn finetune_reward(
    model: &mut RefNet,
    vocab: &Vocabulary,
    train: &[TrainItem],
    validation: &[TrainItem],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&RewardLog),
) -> Result<Vec<RewardLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::data("training split is empty"));
    }
    let reward = RewardFn::new(cfg.reward.parse()?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f1e1);
    let mut adam = AdamState::new(AdamConfig::default());
    let saved = freeze_for_finetune(model, cfg.finetune_encoder);
    let mut logs = Vec::new();
    let result = (|| -> Result<()> {
        for epoch in 1..=cfg.reward_epochs {
            let start = Instant::now();
            let (mut sum_r, mut sum_b, mut nonzero) = (0.0, 0.0, 0usize);
            for batch in batches(train.len(), cfg.batch_size, &mut rng, train) {
                model.params.zero_grad();
                let scale = 1.0 / batch.len() as f64;
                let mut acc: Option<Gradients> = None;
                let mut informative = false;
                for &i in &batch {
                    let (mut g, r, b) = reinforce_example(model, vocab, &train[i], &reward, cfg.mle_mix, &mut rng)?;
                    sum_r += r;
                    sum_b += b;
                    nonzero += (r != b) as usize;
                    informative |= r != b;
                    g.scale(scale);
                    match &mut acc {
                        Some(a) => a.add_assign(&g),
                        None => acc = Some(g),
                    }
                }
                // with every advantage zero there is nothing to learn, and a
                // step would only replay Adam's momentum
                if !informative && cfg.mle_mix == 0.0 {
                    continue;
                }
                if let Some(g) = acc {
                    model.params.accumulate(&g);
                }
                model.params.clip_grad_norm(cfg.clip_norm);
                adam_step(&mut model.params, &mut adam, cfg.finetune_lr)?;
            }
            if nonzero == 0 {
                log::warn!("reward epoch {epoch}: every advantage was zero");
            }
            let val_bleu4 = if validation.is_empty() {
                0.0
            } else {
                evaluate_bleu(model, vocab, validation)?.0
            };
            let n = train.len() as f64;
            let log = RewardLog {
                epoch,
                mean_reward: sum_r / n,
                mean_baseline: sum_b / n,
                val_bleu4,
                wall_ms: start.elapsed().as_millis() as u64,
            };
            log::info!(
                "reward epoch {epoch}: r(Q) {:.4} r(draft) {:.4} val BLEU-4 {:.4}",
                log.mean_reward,
                log.mean_baseline,
                log.val_bleu4
            );
            on_epoch(&log);
            logs.push(log);
        }
        Ok(())
    })();
    for (id, t) in saved {
        model.params.set_trainable(id, t);
    }
    result.map(|_| logs)
}

/// Reference-question lookup by id, used when scoring generated files.
pub fn by_id(items: &[TrainItem]) -> HashMap<&str, &TrainItem> {
    items.iter().map(|it| (it.ex.id.as_str(), it)).collect()
}
