//! Training invariants over many seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refnet::data::{build_vocab, make_toy_corpus, Limits, ToySizes, Vocabulary};
use refnet::optim::{adam_step, AdamConfig, AdamState};
use refnet::search::{decode_draft, decode_refinement, Mode};
use refnet::training::{fit, joint_mle_loss, prepare, reinforce_loss, snapshot, DraftSource, LossWeights, TrainConfig, TrainItem};
use refnet::{ModelConfig, RefNet, Tape};

fn corpus(seed: u64) -> (Vocabulary, Vec<TrainItem>) {
    let c = make_toy_corpus("copy-span", ToySizes::new(16, 0, 0), seed).unwrap();
    let vocab = build_vocab(&c.train, 1000).unwrap();
    let items = prepare(&c.train, &vocab, &Limits::default()).unwrap();
    (vocab, items)
}

fn mean_loss(model: &RefNet, items: &[TrainItem]) -> f64 {
    let w = LossWeights {
        lambda_cov: 0.0,
        ..LossWeights::default()
    };
    let mut total = 0.0;
    for it in items {
        let mut tape = Tape::new(&model.params);
        let parts = joint_mle_loss(model, &mut tape, &it.ex, &w, DraftSource::Gold, None).unwrap();
        total += tape.scalar(parts.loss);
    }
    total / items.len() as f64
}

#[test]
fn joint_loss_falls_within_twenty_steps() {
    let seeds = 20u64;
    let mut fell = 0;
    for seed in 0..seeds {
        let (vocab, items) = corpus(seed);
        let mut model = RefNet::new(ModelConfig::toy(vocab.len(), 16), seed).unwrap();
        let before = mean_loss(&model, &items);
        // 16 examples in batches of 4: five epochs are twenty updates
        let cfg = TrainConfig {
            lr: 0.005,
            epochs: 5,
            batch_size: 4,
            seed,
            ..TrainConfig::default()
        };
        fit(&mut model, &vocab, &items, &[], &cfg, |_| {}).unwrap();
        let after = mean_loss(&model, &items);
        fell += (after < before) as usize;
    }
    assert!(fell * 100 >= 95 * seeds as usize, "loss fell for {fell}/{seeds} seeds");
}

#[test]
fn tied_rewards_leave_parameters_untouched() {
    let (vocab, items) = corpus(3);
    let mut model = RefNet::new(ModelConfig::toy(vocab.len(), 16), 3).unwrap();
    let before = snapshot(&model);
    let mut adam = AdamState::new(AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for it in &items {
        let grads = {
            let mut tape = Tape::new(&model.params);
            let enc = model.encode(&mut tape, &it.ex).unwrap();
            let max_len = model.config.max_decode_len;
            let draft = decode_draft(&model, &mut tape, &enc, &it.ex, Mode::Greedy, max_len).unwrap();
            let sample =
                decode_refinement(&model, &mut tape, &enc, &it.ex, &draft.tokens, Mode::Sample(&mut rng), max_len)
                    .unwrap();
            let loss = reinforce_loss(&mut tape, &sample.nll, 0.37, 0.37).unwrap();
            tape.backward(loss).unwrap()
        };
        model.params.zero_grad();
        model.params.accumulate(&grads);
        adam_step(&mut model.params, &mut adam, 0.01).unwrap();
    }
    let after = snapshot(&model);
    for (a, b) in before.iter().zip(&after) {
        let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same);
    }
}
