//! Adam optimizer and the named parameter registry used by checkpoints.

use std::collections::HashMap;

use super::{el, Element, Tensor};
use crate::error::{Error, Result};

/// Ordered, name-addressed collection of trainable tensors. Iteration order
/// is insertion order, which fixes the checkpoint manifest layout.
pub struct ParamSet<E: Element> {
    entries: Vec<(String, Tensor<E>)>,
    by_name: HashMap<String, usize>,
}

impl<E: Element> Default for ParamSet<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> ParamSet<E> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new(), by_name: HashMap::new() }
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.by_name.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<E>> {
        self.by_name.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad_all(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Move every entry of `other` into `self` under `prefix.name`.
    pub fn absorb(&mut self, prefix: &str, other: ParamSet<E>) -> Result<()> {
        for (name, tensor) in other.entries {
            self.insert(&format!("{prefix}.{name}"), tensor)?;
        }
        Ok(())
    }
}

struct Slot<E> {
    m: Vec<E>,
    v: Vec<E>,
}

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8). Moment state
/// is keyed by parameter name; a parameter changing shape between steps is
/// an error rather than a silent reset.
pub struct Adam<E: Element> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    state: HashMap<String, Slot<E>>,
}

impl<E: Element> Adam<E> {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, state: HashMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update to every parameter in `params` that has a gradient.
    /// Parameters without a gradient (frozen or unused this step) are skipped
    /// without advancing their moment state.
    pub fn step(&mut self, params: &ParamSet<E>) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (el::<E>(self.beta1), el::<E>(self.beta2));
        let (omb1, omb2) = (el::<E>(1.0 - self.beta1), el::<E>(1.0 - self.beta2));
        let eps = el::<E>(self.eps);
        // step size with bias correction folded in: lr * sqrt(bc2) / bc1
        let alpha = el::<E>(self.lr * bc2.sqrt() / bc1);
        for (name, tensor) in params.iter() {
            let Some(grad) = tensor.grad() else { continue };
            let slot = self
                .state
                .entry(name.to_string())
                .or_insert_with(|| Slot { m: vec![E::zero(); grad.len()], v: vec![E::zero(); grad.len()] });
            if slot.m.len() != grad.len() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: vec![slot.m.len()],
                    right: vec![grad.len()],
                });
            }
            tensor.with_data_mut(|data| {
                for i in 0..data.len() {
                    let g = grad[i];
                    slot.m[i] = b1 * slot.m[i] + omb1 * g;
                    slot.v[i] = b2 * slot.v[i] + omb2 * g * g;
                    data[i] = data[i] - alpha * slot.m[i] / (slot.v[i].sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}
