//! Named parameter collections and the Adam optimizer.

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// An ordered, uniquely-named collection of trainable tensors. Order is
/// insertion order and determines update order, checkpoint layout, and the
/// layout of [`Attached`] handles.
#[derive(Debug, Clone)]
pub struct ParameterSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParameterSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet {
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::DuplicateParam(name));
        }
        self.entries.push((name, tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    /// Copy every parameter onto a tape as a leaf. With `trainable = false`
    /// the leaves carry no `requires_grad` flag and the tape stays free of
    /// gradient state.
    pub fn attach(&self, tape: &mut Tape<T>, trainable: bool) -> Attached {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut names = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            vars.push(tape.leaf_from(t, trainable && t.requires_grad));
            names.push(name.clone());
        }
        Attached { vars, names }
    }

    /// Add the tape's leaf gradients into this set's gradient buffers.
    pub fn accumulate_grads(&mut self, tape: &Tape<T>, attached: &Attached) {
        for ((_, t), &v) in self.entries.iter_mut().zip(&attached.vars) {
            if let Some(g) = tape.grad(v) {
                t.accumulate_grad(g);
            }
        }
    }

    /// Add another gradient buffer set (layout must match) into this one.
    pub fn accumulate_grad_vecs(&mut self, grads: &[Vec<T>]) {
        debug_assert_eq!(grads.len(), self.entries.len());
        for ((_, t), g) in self.entries.iter_mut().zip(grads) {
            if !g.is_empty() {
                t.accumulate_grad(g);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for (_, t) in &mut self.entries {
            t.zero_grad();
        }
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        for (_, t) in &mut self.entries {
            t.requires_grad = on;
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterSet<U> {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .map(|(n, t)| (n.clone(), t.cast::<U>()))
                .collect(),
        }
    }

    /// FNV-1a hash over the raw parameter bits; used to verify freeze
    /// contracts.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |byte: u8| {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (name, t) in &self.entries {
            for &b in name.as_bytes() {
                feed(b);
            }
            for v in t.data() {
                for b in v.as_f64().to_le_bytes() {
                    feed(b);
                }
            }
        }
        h
    }
}

/// Tape handles for an attached [`ParameterSet`], in set order.
#[derive(Debug, Clone)]
pub struct Attached {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl Attached {
    /// Handle of a parameter by name. Panics on unknown names: model builders
    /// only ask for parameters they created.
    pub fn var(&self, name: &str) -> Var {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.vars[i],
            None => panic!("no parameter named `{name}` attached"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Collect per-parameter leaf gradients from a tape (empty vec for
    /// parameters that received none).
    pub fn grads_from<T: Real>(&self, tape: &Tape<T>) -> Vec<Vec<T>> {
        self.vars
            .iter()
            .map(|&v| tape.grad(v).map(|g| g.to_vec()).unwrap_or_default())
            .collect()
    }
}

/// Adam with bias correction. Moment buffers are laid out in parameter-set
/// order and sized on first use.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: T) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: T::from_f64(0.9),
            beta2: T::from_f64(0.999),
            eps: T::from_f64(1e-8),
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One Adam update over every parameter in the set, then zero the grads.
    /// Every parameter must have a populated gradient.
    pub fn step(&mut self, params: &mut ParameterSet<T>) -> Result<()> {
        for (name, t) in params.iter() {
            if t.grad.is_none() {
                return Err(Error::MissingGrad {
                    name: name.to_string(),
                });
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, t)| vec![T::zero(); t.numel()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t_f = self.step as f64;
        let bc1 = T::from_f64(1.0 - self.beta1.as_f64().powf(t_f));
        let bc2 = T::from_f64(1.0 - self.beta2.as_f64().powf(t_f));
        let one = T::one();
        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let g = p.grad.as_ref().expect("checked above").clone();
            let (m, v) = (&mut self.m[idx], &mut self.v[idx]);
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (one - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (one - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] = data[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> ParameterSet<f64> {
        let mut p = ParameterSet::new();
        p.insert("p", Tensor::new(vec![1], vec![v]).unwrap().with_grad())
            .unwrap();
        p
    }

    #[test]
    fn first_adam_step_has_unit_scale() {
        // g = 1, lr = 1e-3, defaults → Δp ≈ -1e-3 after bias correction.
        let mut params = scalar_param(0.0);
        params.get_mut("p").unwrap().accumulate_grad(&[1.0]);
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut params).unwrap();
        let p = params.get("p").unwrap().data()[0];
        assert!((p + 1e-3).abs() < 1e-8, "p = {p}");
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut params = scalar_param(1.5);
        params.get_mut("p").unwrap().accumulate_grad(&[0.0]);
        let mut adam = AdamState::new(0.1);
        adam.step(&mut params).unwrap();
        assert_eq!(params.get("p").unwrap().data()[0], 1.5);
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // 200 steps on f(p) = (p-3)², lr = 0.1 → |p-3| < 0.05.
        let mut params = scalar_param(0.0);
        let mut adam = AdamState::new(0.1);
        for _ in 0..200 {
            let p = params.get("p").unwrap().data()[0];
            let g = 2.0 * (p - 3.0);
            params.get_mut("p").unwrap().accumulate_grad(&[g]);
            adam.step(&mut params).unwrap();
        }
        let p = params.get("p").unwrap().data()[0];
        assert!((p - 3.0).abs() < 0.05, "p = {p}");
    }

    #[test]
    fn missing_grad_is_a_contract_error() {
        let mut params = scalar_param(0.0);
        let mut adam = AdamState::new(0.1);
        let err = adam.step(&mut params).unwrap_err();
        assert!(matches!(err, Error::MissingGrad { .. }));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = ParameterSet::<f32>::new();
        p.insert("w", Tensor::zeros(vec![2])).unwrap();
        assert!(matches!(
            p.insert("w", Tensor::zeros(vec![2])),
            Err(Error::DuplicateParam(_))
        ));
    }

    #[test]
    fn checksum_tracks_content() {
        let a = scalar_param(1.0);
        let b = scalar_param(1.0);
        assert_eq!(a.checksum(), b.checksum());
        let c = scalar_param(1.0 + 1e-12);
        assert_ne!(a.checksum(), c.checksum());
    }
}
