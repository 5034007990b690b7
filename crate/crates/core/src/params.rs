use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::Gradients;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a parameter is initialized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in `[-bound, bound]`.
    Uniform(f64),
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, fan_in = last dimension.
    FanIn,
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub init: Init,
    pub trainable: bool,
    /// Rows (of a matrix parameter) that never receive gradient.
    pub frozen_rows: Option<Vec<bool>>,
}

/// Named, ordered collection of model parameters.
///
/// Parameters are created in a fixed order from a seeded generator, so two
/// stores built by the same code with the same seed are bitwise identical.
#[derive(Clone, Debug)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, ParamId>,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], init: Init) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        let n: usize = shape.iter().product();
        let fan_in = *shape.last().unwrap_or(&1) as f64;
        let data: Vec<f64> = match &init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![*c; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.gen_range(-*b..=*b)).collect(),
            Init::FanIn => {
                let b = 1.0 / fan_in.sqrt();
                (0..n).map(|_| self.rng.gen_range(-b..=b)).collect()
            }
        };
        let value = Tensor::new(shape.to_vec(), data)?;
        let id = ParamId(self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: None,
            init,
            trainable: true,
            frozen_rows: None,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a parameter value. The shape may not change.
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_value",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
        Ok(())
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.params[id.0].trainable
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    pub fn set_frozen_rows(&mut self, id: ParamId, rows: Vec<bool>) {
        self.params[id.0].frozen_rows = Some(rows);
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    pub fn has_grads(&self) -> bool {
        self.params.iter().any(|p| p.grad.is_some())
    }

    /// Adds `grads` into the stored gradients. Every trainable parameter gets
    /// a gradient buffer (zeros where the loss did not reach it).
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let buf = p
                .grad
                .get_or_insert_with(|| Tensor::zeros(p.value.shape()));
            if let Some(g) = grads.get(ParamId(i)) {
                let cols = p.value.cols();
                for (k, (b, v)) in buf.data_mut().iter_mut().zip(g).enumerate() {
                    if let Some(rows) = &p.frozen_rows {
                        if rows[k / cols] {
                            continue;
                        }
                    }
                    *b += v;
                }
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global L2 norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = &mut p.grad {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        norm
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new(0);
        s.add("w", &[2, 2], Init::FanIn).unwrap();
        assert!(s.add("w", &[2, 2], Init::FanIn).is_err());
    }

    #[test]
    fn fan_in_bound_and_determinism() {
        let mut a = ParamStore::new(3);
        let mut b = ParamStore::new(3);
        let ia = a.add("w", &[4, 16], Init::FanIn).unwrap();
        let ib = b.add("w", &[4, 16], Init::FanIn).unwrap();
        assert_eq!(a.value(ia), b.value(ib));
        assert!(a.value(ia).data().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn set_value_keeps_shape() {
        let mut s = ParamStore::new(0);
        let id = s.add("b", &[3], Init::Zeros).unwrap();
        assert!(s.set_value(id, Tensor::vector(vec![1.0; 4])).is_err());
        assert!(s.set_value(id, Tensor::vector(vec![1.0; 3])).is_ok());
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut s = ParamStore::new(0);
        let id = s.add("b", &[2], Init::Zeros).unwrap();
        s.get_mut(id).grad = Some(Tensor::vector(vec![30.0, 40.0]));
        let before = s.clip_grad_norm(5.0);
        assert_eq!(before, 50.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }
}
