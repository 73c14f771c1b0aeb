use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A learnable tensor together with its gradient and Adam moment estimates.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub step_count: u64,
    grad_fresh: bool,
}

impl Parameter {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            grad: Tensor::zeros(&shape),
            adam_m: Tensor::zeros(&shape),
            adam_v: Tensor::zeros(&shape),
            value,
            step_count: 0,
            grad_fresh: false,
        }
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) {
        self.grad.add_assign(g);
        self.grad_fresh = true;
    }

    pub fn set_grad(&mut self, g: Tensor) {
        debug_assert_eq!(g.shape(), self.value.shape());
        self.grad = g;
        self.grad_fresh = true;
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
        self.grad_fresh = false;
    }

    pub fn has_fresh_grad(&self) -> bool {
        self.grad_fresh
    }
}

/// Glorot-uniform sample for a weight tensor with the given fans.
pub fn glorot_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-limit..limit)).collect())
        .expect("shape and data length agree")
}

/// Named parameters in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.params[i] = Parameter::new(value),
            None => {
                self.index.insert(name.clone(), self.names.len());
                self.names.push(name);
                self.params.push(Parameter::new(value));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn slot(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Argument(format!("no parameter named {name}")))
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        Ok(&self.params[self.slot(name)?])
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        let i = self.slot(name)?;
        Ok(&mut self.params[i])
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.params[slot].value
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.names.iter().map(String::as_str).zip(self.params.iter_mut())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Adds a buffer of gradients (aligned with this store) into each parameter.
    pub fn accumulate(&mut self, grads: &GradBuffer) {
        for (p, g) in self.params.iter_mut().zip(&grads.grads) {
            p.accumulate_grad(g);
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(Parameter::zero_grad);
    }

    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }
}

/// Gradient accumulator aligned slot-for-slot with a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct GradBuffer {
    grads: Vec<Tensor>,
}

impl GradBuffer {
    pub fn zeros_like(store: &ParamStore) -> Self {
        GradBuffer {
            grads: store.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    pub fn add(&mut self, slot: usize, g: &Tensor) {
        self.grads[slot].add_assign(g);
    }

    pub fn merge(&mut self, other: &GradBuffer) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.grads.iter_mut().for_each(|g| g.scale(k));
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.grads[slot]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update on a parameter; consumes its gradient.
    pub fn update(&self, p: &mut Parameter) {
        debug_assert!(
            p.grad_fresh,
            "adam step on a parameter whose gradient was already consumed"
        );
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let g = p.grad.data();
        let m = p.adam_m.data_mut();
        for (mi, &gi) in m.iter_mut().zip(g) {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
        }
        let v = p.adam_v.data_mut();
        for (vi, &gi) in v.iter_mut().zip(g) {
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
        }
        let (m, v) = (p.adam_m.data(), p.adam_v.data());
        for ((w, &mi), &vi) in p.value.data_mut().iter_mut().zip(m).zip(v) {
            let m_hat = mi / c1;
            let v_hat = vi / c2;
            *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        p.zero_grad();
    }

    pub fn step(&self, store: &mut ParamStore) {
        for (_, p) in store.iter_mut() {
            self.update(p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn single_step_moves_by_lr() {
        let adam = Adam::new(0.01);
        let mut p = Parameter::new(Tensor::from_vec(vec![1.0, -2.0, 0.5]));
        p.set_grad(Tensor::from_vec(vec![0.3, -4.0, 1e-3]));
        adam.update(&mut p);
        // m_hat = g, v_hat = g², so the step is lr·g/(|g|+eps)
        let expected = [
            1.0 - 0.01 * 0.3 / (0.3 + 1e-8),
            -2.0 + 0.01 * 4.0 / (4.0 + 1e-8),
            0.5 - 0.01 * 1e-3 / (1e-3 + 1e-8),
        ];
        for (a, b) in p.value.data().iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert_eq!(p.step_count, 1);
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn two_step_hand_computation() {
        // w = [1, 2], g = [0.5, -1] on both steps, lr 0.1
        // step 1: m = [0.05, -0.1], v = [2.5e-4, 1e-3]; m̂ = g, v̂ = g² → Δ = -0.1·sign(g)
        // step 2: m = 0.19·g, v = 0.001999·g²; m̂ = 0.19/0.19·g, v̂ = 0.001999/0.001999·g²
        let lr = 0.1;
        let adam = Adam::new(lr);
        let g = [0.5, -1.0];
        let mut p = Parameter::new(Tensor::from_vec(vec![1.0, 2.0]));
        let mut w = [1.0f64, 2.0];
        let (mut m, mut v) = ([0.0f64; 2], [0.0f64; 2]);
        for t in 1..=2 {
            p.set_grad(Tensor::from_vec(g.to_vec()));
            adam.update(&mut p);
            for i in 0..2 {
                m[i] = 0.9 * m[i] + 0.1 * g[i];
                v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
                let mh = m[i] / (1.0 - 0.9f64.powi(t));
                let vh = v[i] / (1.0 - 0.999f64.powi(t));
                w[i] -= lr * mh / (vh.sqrt() + 1e-8);
            }
        }
        assert_relative_eq!(p.value.data()[0], w[0], epsilon = 1e-14);
        assert_relative_eq!(p.value.data()[1], w[1], epsilon = 1e-14);
        // both steps move a full lr against the gradient sign
        assert_relative_eq!(w[0], 0.8, epsilon = 1e-6);
        assert_relative_eq!(w[1], 2.2, epsilon = 1e-6);
        assert_eq!(p.step_count, 2);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let adam = Adam::new(7e-5);
        let mut p = Parameter::new(Tensor::from_vec(vec![0.25, -1.0]));
        p.set_grad(Tensor::zeros(&[2]));
        adam.update(&mut p);
        assert_eq!(p.value.data(), &[0.25, -1.0]);
        assert_eq!(p.step_count, 1);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "already consumed")]
    fn stale_gradient_is_flagged() {
        let adam = Adam::new(0.1);
        let mut p = Parameter::new(Tensor::from_vec(vec![1.0]));
        p.set_grad(Tensor::from_vec(vec![1.0]));
        adam.update(&mut p);
        adam.update(&mut p);
    }

    proptest! {
        #[test]
        fn zero_gradients_never_move_values(vals in proptest::collection::vec(-10.0f64..10.0, 1..20),
                                            lr in 1e-6f64..1.0, steps in 1usize..5) {
            let adam = Adam::new(lr);
            let mut p = Parameter::new(Tensor::from_vec(vals.clone()));
            for _ in 0..steps {
                p.set_grad(Tensor::zeros(&[vals.len()]));
                adam.update(&mut p);
            }
            prop_assert_eq!(p.value.data(), &vals[..]);
            prop_assert_eq!(p.step_count, steps as u64);
        }
    }
}
