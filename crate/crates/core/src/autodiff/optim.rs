use std::collections::BTreeMap;

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable parameters, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<F> {
    params: BTreeMap<String, Tensor<F>>,
}

/// Parameters registered as leaves on a tape.
pub struct Bound<'t, F> {
    vars: BTreeMap<String, Var<'t, F>>,
}

impl<'t, F: Real> Bound<'t, F> {
    pub fn get(&self, name: &str) -> Result<Var<'t, F>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidInput(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, t);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<F>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn bind<'t>(&self, tape: &'t Tape<F>) -> Bound<'t, F> {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), tape.param(v.clone())))
            .collect();
        Bound { vars }
    }

    /// Pulls leaf gradients off the tape. Bound parameters that the loss did
    /// not reach receive zero gradients.
    pub fn accumulate_grads(&mut self, bound: &Bound<'_, F>) -> Result<()> {
        for (name, var) in &bound.vars {
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::InvalidInput(format!("unknown parameter {name}")))?;
            match var.grad() {
                Some(g) => p.accumulate_grad(&g)?,
                None => p.accumulate_grad(&vec![F::zero(); p.len()])?,
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<G: Real>(&self) -> ParamSet<G> {
        ParamSet {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter name; the step
/// counter is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<F> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<F>, Vec<F>)>,
}

impl<F: Real> Adam<F> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Restores a saved optimizer state.
    pub fn from_state(
        config: AdamConfig,
        step: u64,
        moments: BTreeMap<String, (Vec<F>, Vec<F>)>,
    ) -> Self {
        Adam {
            config,
            step,
            moments,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> &BTreeMap<String, (Vec<F>, Vec<F>)> {
        &self.moments
    }

    /// Applies one update to every parameter, then clears gradients.
    /// Fails without touching anything if any parameter lacks a gradient.
    pub fn step(&mut self, params: &mut ParamSet<F>) -> Result<()> {
        if let Some((name, _)) = params.iter().find(|(_, p)| p.grad().is_none()) {
            return Err(Error::MissingGrad(name.to_string()));
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (F::of(beta1), F::of(beta2));
        let (one_b1, one_b2) = (F::of(1.0 - beta1), F::of(1.0 - beta2));
        let step_size = F::of(lr / bc1);
        let bc2_sqrt = F::of(bc2.sqrt());
        let eps = F::of(eps);

        for (name, p) in params.iter_mut() {
            let n = p.len();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![F::zero(); n], vec![F::zero(); n]));
            if m.len() != n {
                return Err(Error::shape("adam", &[m.len()], p.shape()));
            }
            let g = p.grad().expect("checked above").to_vec();
            let data = p.data_mut();
            for i in 0..n {
                m[i] = b1 * m[i] + one_b1 * g[i];
                v[i] = b2 * v[i] + one_b2 * g[i] * g[i];
                data[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        params.zero_grads();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64, g: Option<f64>) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let mut t = Tensor::new(vec![1], vec![v]).unwrap();
        if let Some(g) = g {
            t.accumulate_grad(&[g]).unwrap();
        }
        ps.insert("w", t).unwrap();
        ps
    }

    #[test]
    fn zero_grads_leave_params_unchanged() {
        let mut ps = one_param(1.25, Some(0.0));
        let mut adam = Adam::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut ps).unwrap();
            ps.get_mut("w").unwrap().accumulate_grad(&[0.0]).unwrap();
        }
        assert_eq!(ps.get("w").unwrap().data(), &[1.25]);
    }

    #[test]
    fn first_update_is_lr_sized() {
        // m1 = (1-b1) g, v1 = (1-b2) g^2; bias-corrected ratio is sign(g),
        // so the step is lr * g / (|g| + eps)
        for g in [0.3, -7.0, 1e-3] {
            let mut ps = one_param(0.0, Some(g));
            let cfg = AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            };
            Adam::new(cfg).step(&mut ps).unwrap();
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((ps.get("w").unwrap().item() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_stepped_recurrence() {
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut ps = one_param(1.0, None);
        let mut adam = Adam::new(cfg);
        let (mut m, mut v, mut w) = (0.0f64, 0.0f64, 1.0f64);
        for t in 1..=3 {
            let g = 2.0 * w;
            ps.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
            adam.step(&mut ps).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            w -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((ps.get("w").unwrap().item() - w).abs() < 1e-12);
        }
        assert_eq!(adam.step_count(), 3);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut ps = one_param(1.0, None);
        let err = Adam::new(AdamConfig::default()).step(&mut ps).unwrap_err();
        assert!(err.to_string().contains('w'));
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = one_param(0.5, Some(0.2));
        let mut b = a.clone();
        Adam::new(AdamConfig::default()).step(&mut a).unwrap();
        Adam::new(AdamConfig::default()).step(&mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn step_clears_grads() {
        let mut ps = one_param(0.5, Some(0.2));
        Adam::new(AdamConfig::default()).step(&mut ps).unwrap();
        assert!(ps.get("w").unwrap().grad().is_none());
    }
}
