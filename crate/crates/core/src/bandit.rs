//! Two-token bandit with a frozen feature vector and a linear softmax
//! policy, trained with the same REINFORCE loss as the question decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::params::{Init, ParamId, ParamStore};
use crate::search::{argmax, sample};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::training::reinforce_loss;

/// Stands in for a fixed encoder output.
const FEATURES: [f64; 4] = [0.5, -1.0, 0.25, 1.0];

#[derive(Clone, Debug)]
pub struct Bandit {
    pub store: ParamStore,
    pub head: ParamId,
    /// Reward of each token.
    pub rewards: [f64; 2],
}

impl Bandit {
    /// Zero-initialised head, so both tokens start at probability 0.5.
    pub fn new(rewards: [f64; 2]) -> Result<Self> {
        let mut store = ParamStore::new(0);
        let head = store.add("bandit.head", &[2, FEATURES.len()], Init::Zeros)?;
        Ok(Self { store, head, rewards })
    }

    fn policy(&self, tape: &mut Tape) -> Result<crate::tape::Var> {
        let w = tape.param(self.head);
        let x = tape.constant(Tensor::vector(FEATURES.to_vec()));
        let logits = tape.matvec(w, x)?;
        tape.softmax(logits)
    }

    pub fn probs(&self) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let p = self.policy(&mut tape)?;
        Ok(tape.value(p).to_vec())
    }

    pub fn expected_reward(&self) -> Result<f64> {
        Ok(self.probs()?.iter().zip(self.rewards).map(|(p, r)| p * r).sum())
    }

    /// One sampled REINFORCE step with the greedy token's reward as baseline.
    /// Returns the sampled reward.
    pub fn step(&mut self, adam: &mut AdamState, lr: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
        let grads = {
            let mut tape = Tape::new(&self.store);
            let p = self.policy(&mut tape)?;
            let probs = tape.value(p).to_vec();
            let a = sample(&probs, rng);
            let baseline = self.rewards[argmax(&probs)];
            let nll = tape.nll(p, a)?;
            let loss = reinforce_loss(&mut tape, &[nll], self.rewards[a], baseline)?;
            (tape.backward(loss)?, self.rewards[a])
        };
        self.store.zero_grad();
        self.store.accumulate(&grads.0);
        adam_step(&mut self.store, adam, lr)?;
        Ok(grads.1)
    }

    /// Expected reward after each of `steps` updates.
    pub fn train(&mut self, steps: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            self.step(&mut adam, lr, &mut rng)?;
            trace.push(self.expected_reward()?);
        }
        Ok(trace)
    }

    /// Gradient of the REINFORCE loss in expectation over both tokens,
    /// i.e. `Σ_a p_a (r_a − b) ∇ nll_a` with `p_a` held constant.
    pub fn policy_gradient(&self, baseline: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new(&self.store);
        let p = self.policy(&mut tape)?;
        let probs = tape.value(p).to_vec();
        let mut terms = Vec::new();
        for (a, &pa) in probs.iter().enumerate() {
            let nll = tape.nll(p, a)?;
            let l = reinforce_loss(&mut tape, &[nll], self.rewards[a], baseline)?;
            terms.push(tape.affine(l, pa, 0.0)?);
        }
        let loss = tape.sum_scalars(&terms)?;
        let g = tape.backward(loss)?;
        Ok(g.get(self.head).map(<[f64]>::to_vec).unwrap_or_default())
    }

    /// Central difference of `−E[r]` with respect to every head entry.
    pub fn finite_difference(&self, eps: f64) -> Result<Vec<f64>> {
        let n = self.store.value(self.head).len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut probe = self.clone();
            let base = probe.store.value(self.head).clone();
            let mut at = |delta: f64| -> Result<f64> {
                let mut t = base.clone();
                t.data_mut()[i] += delta;
                probe.store.set_value(self.head, t)?;
                Ok(-probe.expected_reward()?)
            };
            let (hi, lo) = (at(eps)?, at(-eps)?);
            out.push((hi - lo) / (2.0 * eps));
        }
        Ok(out)
    }

    pub fn set_head(&mut self, values: Vec<f64>) -> Result<()> {
        let t = Tensor::new(vec![2, FEATURES.len()], values)?;
        self.store.set_value(self.head, t)
    }
}
