//! Named parameter sets and the AdamW optimizer.

use super::{CheckpointEntry, Tensor, TensorError};
use crate::scalar::{r, Real};

pub type ParamId = usize;

/// Ordered collection of named trainable tensors.
///
/// Layers hold `ParamId`s; optimizer steps replace tensors functionally, so
/// parameters must always be fetched through the set.
pub struct ParamSet<T: Real> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        assert!(
            self.find(name).is_none(),
            "duplicate parameter name `{name}`"
        );
        self.entries.push((name.to_string(), tensor));
        self.entries.len() - 1
    }

    pub fn get(&self, id: ParamId) -> Tensor<T> {
        self.entries[id].1.clone()
    }

    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) {
        self.entries[id].1 = tensor;
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn zero_grads(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// Replace every tensor with a detached (non-trainable) copy.
    pub fn freeze(&mut self) {
        for (_, t) in &mut self.entries {
            *t = t.detach();
        }
    }

    pub fn is_frozen(&self) -> bool {
        self.entries.iter().all(|(_, t)| !t.requires_grad())
    }

    /// Flat f32 view of all parameters, in registration order.
    pub fn flat_f32(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.total_scalars());
        for (_, t) in &self.entries {
            out.extend(t.data().iter().map(|v| v.as_f32()));
        }
        out
    }

    pub fn to_checkpoint_entries(&self) -> Vec<CheckpointEntry> {
        self.entries
            .iter()
            .map(|(n, t)| CheckpointEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
                data: t.to_f32_vec(),
            })
            .collect()
    }

    /// Load matching entries by name. Every parameter in the set must be
    /// present with an identical shape. `trainable` controls whether the
    /// loaded tensors participate in autodiff.
    pub fn load_entries(
        &mut self,
        entries: &[CheckpointEntry],
        trainable: bool,
    ) -> Result<(), TensorError> {
        for (name, t) in &mut self.entries {
            let e = entries
                .iter()
                .find(|e| &e.name == name)
                .ok_or_else(|| TensorError::MissingGrad(format!("checkpoint entry `{name}`")))?;
            if e.shape != t.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "load_entries".into(),
                    details: format!("`{name}`: checkpoint {:?} vs param {:?}", e.shape, t.shape()),
                });
            }
            let data: Vec<T> = e.data.iter().map(|&v| T::of_f32(v)).collect();
            *t = if trainable {
                Tensor::param(&e.shape, data)
            } else {
                Tensor::from_vec(&e.shape, data)
            };
        }
        Ok(())
    }
}

/// Decoupled weight-decay Adam.
pub struct AdamW<T: Real> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamW<T> {
    pub fn new(lr: T, weight_decay: T) -> Self {
        AdamW {
            lr,
            beta1: r(0.9),
            beta2: r(0.999),
            eps: r(1e-8),
            weight_decay,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update using the gradients currently held by the parameters.
    /// Replaces each parameter with a fresh leaf; grads are reset afterwards.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<(), TensorError> {
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
            self.v = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "optimizer bound to a different param set");
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for id in 0..params.len() {
            let (name, grad, old, shape);
            {
                let tensor = params.get(id);
                name = params.iter().nth(id).unwrap().0.to_string();
                grad = tensor
                    .grad()
                    .ok_or_else(|| TensorError::MissingGrad(name.clone()))?;
                old = tensor.data().to_vec();
                shape = tensor.shape().to_vec();
            }
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            let mut new = old;
            for i in 0..new.len() {
                let g = grad[i];
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g * g;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                new[i] = new[i] - self.lr * (mh / (vh.sqrt() + self.eps)) - self.lr * self.weight_decay * new[i];
            }
            params.set(id, Tensor::param(&shape, new));
        }
        Ok(())
    }

    /// Moment buffers and step counter as checkpoint entries under "opt/".
    pub fn to_checkpoint_entries(&self, params: &ParamSet<T>) -> Vec<CheckpointEntry> {
        let mut out = vec![CheckpointEntry {
            name: "opt/step".into(),
            shape: vec![1],
            data: vec![self.step_count as f32],
        }];
        for (id, (name, t)) in params.iter().enumerate() {
            if self.m.is_empty() {
                break;
            }
            out.push(CheckpointEntry {
                name: format!("opt/{name}/m"),
                shape: t.shape().to_vec(),
                data: self.m[id].iter().map(|x| x.as_f32()).collect(),
            });
            out.push(CheckpointEntry {
                name: format!("opt/{name}/v"),
                shape: t.shape().to_vec(),
                data: self.v[id].iter().map(|x| x.as_f32()).collect(),
            });
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut params = ParamSet::<f32>::new();
        params.add("w", Tensor::param(&[2], vec![1.5, -0.5]));
        params.zero_grads();
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut params).unwrap();
        assert_eq!(params.get(0).data(), &[1.5, -0.5]);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn first_step_matches_hand_update() {
        // p=1, g=1, lr=0.1, betas (0.9, 0.999), wd=0 -> p ~= 0.9 after bias correction.
        let mut params = ParamSet::<f64>::new();
        let id = params.add("w", Tensor::param(&[1], vec![1.0]));
        params.zero_grads();
        let w = params.get(id);
        let loss = w.sum_all();
        backward(&loss).unwrap(); // grad = 1
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut params).unwrap();
        let p = params.get(id).data()[0];
        assert!((p - 0.9).abs() < 1e-6, "p = {p}");
    }

    #[test]
    fn missing_grads_error_out() {
        let mut params = ParamSet::<f32>::new();
        params.add("w", Tensor::param(&[1], vec![1.0]));
        let mut opt = AdamW::new(0.1, 0.0);
        assert!(opt.step(&mut params).is_err());
    }
}
