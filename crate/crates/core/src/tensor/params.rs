use indexmap::IndexMap;
use rand::Rng;

use super::{Bound, Graph, Tensor};
use crate::error::{Error, Result};

/// Named trainable tensors with insertion-ordered, run-stable iteration and
/// an optional gradient buffer per entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    values: IndexMap<String, Tensor>,
    grads: Option<Vec<Tensor>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.values.contains_key(&name) {
            return Err(Error::ParamMismatch(format!("duplicate parameter `{name}`")));
        }
        self.values.insert(name, value);
        self.grads = None;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.values.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.values.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.values.values().map(Tensor::len).sum()
    }

    pub fn grads(&self) -> Option<&[Tensor]> {
        self.grads.as_deref()
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        let idx = self.values.get_index_of(name)?;
        self.grads.as_ref().map(|g| &g[idx])
    }

    pub fn zero_grads(&mut self) {
        self.grads = None;
    }

    /// Add the gradients computed on `graph` for `bound` into this set's
    /// buffer. Parameters the loss did not reach contribute zeros.
    pub fn accumulate_grads(&mut self, graph: &Graph, bound: &Bound) -> Result<()> {
        if !bound.is_trainable() {
            return Err(Error::ParamMismatch("cannot take gradients of a frozen binding".into()));
        }
        if bound.len() != self.values.len() {
            return Err(Error::ParamMismatch(format!(
                "binding has {} parameters, set has {}",
                bound.len(),
                self.values.len()
            )));
        }
        let grads = self
            .grads
            .get_or_insert_with(|| self.values.values().map(|v| Tensor::zeros(v.shape().to_vec())).collect());
        for ((slot, (name, value)), (bname, var)) in grads.iter_mut().zip(&self.values).zip(bound.iter()) {
            if name != bname || graph.shape(var) != value.shape() {
                return Err(Error::ParamMismatch(format!("binding entry `{bname}` does not match `{name}`")));
            }
            if let Some(g) = graph.grad(var) {
                slot.add_assign(g);
            }
        }
        Ok(())
    }

    /// Euclidean norm over all gradient entries.
    pub fn grad_norm(&self) -> Option<f64> {
        self.grads.as_ref().map(|gs| {
            gs.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt()
        })
    }

    /// Rescale gradients so their global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let Some(norm) = self.grad_norm() else { return };
        if norm > max_norm && norm > 0.0 {
            let f = max_norm / norm;
            for g in self.grads.iter_mut().flatten() {
                g.data_mut().iter_mut().for_each(|v| *v *= f);
            }
        }
    }

    /// `v ← v − lr · grad(v)` for every parameter, then clear the gradients.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be a finite non-negative number, got {lr}")));
        }
        let grads = self.grads.take().ok_or(Error::MissingGrads)?;
        for (value, grad) in self.values.values_mut().zip(&grads) {
            for (v, g) in value.data_mut().iter_mut().zip(grad.data()) {
                *v -= lr * g;
            }
        }
        Ok(())
    }

    /// Adam step with bias-corrected moments kept in `state`, then clear the
    /// gradients.
    pub fn adam_step(&mut self, state: &mut AdamState, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be a finite non-negative number, got {lr}")));
        }
        let grads = self.grads.take().ok_or(Error::MissingGrads)?;
        if state.m.is_empty() {
            state.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            state.v = state.m.clone();
        }
        if state.m.len() != grads.len() || state.m.iter().zip(&grads).any(|(m, g)| m.len() != g.len()) {
            return Err(Error::ParamMismatch("optimizer state does not match the parameter set".into()));
        }
        state.t += 1;
        let (b1, b2) = (state.beta1, state.beta2);
        let c1 = 1.0 - b1.powi(state.t as i32);
        let c2 = 1.0 - b2.powi(state.t as i32);
        for (((value, grad), m), v) in self.values.values_mut().zip(&grads).zip(&mut state.m).zip(&mut state.v) {
            for (((x, &g), m), v) in value.data_mut().iter_mut().zip(grad.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + state.eps);
            }
        }
        Ok(())
    }

    fn check_compatible(&self, other: &ParameterSet) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::ParamMismatch(format!(
                "sets have {} and {} parameters",
                self.values.len(),
                other.values.len()
            )));
        }
        for ((a, ta), (b, tb)) in self.values.iter().zip(&other.values) {
            if a != b || ta.shape() != tb.shape() {
                return Err(Error::ParamMismatch(format!(
                    "`{a}` {:?} vs `{b}` {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }

    /// Overwrite values with those of `other` (same names and shapes).
    pub fn copy_from(&mut self, other: &ParameterSet) -> Result<()> {
        self.check_compatible(other)?;
        for (dst, src) in self.values.values_mut().zip(other.values.values()) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

/// First and second moment estimates for [`ParameterSet::adam_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl AdamState {
    pub fn steps(&self) -> u64 {
        self.t
    }
}

/// Blend `online` into `target`: `θ' ← τ·θ + (1 − τ)·θ'`.
pub fn soft_update(target: &mut ParameterSet, online: &ParameterSet, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Config(format!("soft-update rate must lie in (0, 1], got {tau}")));
    }
    target.check_compatible(online)?;
    for (dst, src) in target.values.values_mut().zip(online.values.values()) {
        for (t, o) in dst.data_mut().iter_mut().zip(src.data()) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
    Ok(())
}

/// Xavier/Glorot uniform initialisation: `U(−a, a)`, `a = √(6 / (fan_in + fan_out))`.
pub fn xavier_uniform(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor { shape, data }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("v", Tensor::vector(vec![v])).unwrap();
        p
    }

    fn quadratic_grad(p: &mut ParameterSet) {
        // loss = (v - 3)^2
        let mut g = Graph::new();
        let b = g.bind(p);
        let v = b.get("v").unwrap();
        let three = g.constant(Tensor::vector(vec![3.0]));
        let d = g.sub(v, three).unwrap();
        let l = g.frobenius_sq(d);
        g.backward(l).unwrap();
        p.accumulate_grads(&g, &b).unwrap();
    }

    #[test]
    fn sgd_arithmetic() {
        let mut p = single(1.0);
        p.grads = Some(vec![Tensor::vector(vec![2.0])]);
        p.sgd_step(0.1).unwrap();
        assert!((p.get("v").unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert!(p.grads().is_none());
    }

    #[test]
    fn sgd_zero_rate_is_identity() {
        let mut p = single(1.5);
        p.grads = Some(vec![Tensor::vector(vec![7.0])]);
        p.sgd_step(0.0).unwrap();
        assert_eq!(p.get("v").unwrap().data()[0], 1.5);
    }

    #[test]
    fn sgd_without_grads_is_rejected() {
        let mut p = single(1.0);
        assert!(matches!(p.sgd_step(0.1), Err(Error::MissingGrads)));
    }

    #[test]
    fn two_steps_on_quadratic() {
        // gradient 2(v − 3): 0 → 0 + 0.25·6 = 1.5 → 1.5 + 0.25·3 = 2.25
        let mut p = single(0.0);
        quadratic_grad(&mut p);
        p.sgd_step(0.25).unwrap();
        assert_eq!(p.get("v").unwrap().data()[0], 1.5);
        quadratic_grad(&mut p);
        p.sgd_step(0.25).unwrap();
        assert_eq!(p.get("v").unwrap().data()[0], 2.25);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_the_gradient_sign() {
        let mut p = single(1.0);
        p.grads = Some(vec![Tensor::vector(vec![-0.003])]);
        let mut st = AdamState::default();
        p.adam_step(&mut st, 0.1).unwrap();
        // m̂ = g, v̂ = g², so the step is lr · g / (|g| + eps).
        let expect = 1.0 + 0.1 * 0.003 / (0.003 + 1e-8);
        assert!((p.get("v").unwrap().data()[0] - expect).abs() < 1e-12);
        assert_eq!(st.steps(), 1);
        let mut other = ParameterSet::new();
        other.insert("a", Tensor::vector(vec![0.0, 0.0])).unwrap();
        other.grads = Some(vec![Tensor::vector(vec![1.0, 1.0])]);
        assert!(other.adam_step(&mut st, 0.1).is_err());
    }

    #[test]
    fn adam_converges_on_quadratic() {
        let mut p = single(0.0);
        let mut st = AdamState::default();
        for _ in 0..2000 {
            quadratic_grad(&mut p);
            p.adam_step(&mut st, 0.05).unwrap();
        }
        assert!((p.get("v").unwrap().data()[0] - 3.0).abs() < 1e-3);
    }

    #[test]
    fn accumulate_twice_doubles() {
        let mut p = single(0.0);
        quadratic_grad(&mut p);
        quadratic_grad(&mut p);
        assert_eq!(p.grad("v").unwrap().data(), &[-12.0]);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut p = single(0.0);
        assert!(p.insert("v", Tensor::scalar(1.0)).is_err());
    }

    #[test]
    fn soft_update_cases() {
        let mut target = single(0.0);
        soft_update(&mut target, &single(1.0), 0.01).unwrap();
        assert!((target.get("v").unwrap().data()[0] - 0.01).abs() < 1e-15);

        let mut target = single(-4.0);
        soft_update(&mut target, &single(2.5), 1.0).unwrap();
        assert_eq!(target.get("v").unwrap().data()[0], 2.5);

        assert!(soft_update(&mut target, &ParameterSet::new(), 0.5).is_err());
        assert!(soft_update(&mut target, &single(0.0), 0.0).is_err());
    }

    #[test]
    fn xavier_within_limit() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = xavier_uniform(vec![10, 20], 10, 20, &mut rng);
        let lim = (6.0f64 / 30.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= lim));
    }
}
