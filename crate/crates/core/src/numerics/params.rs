use std::collections::BTreeMap;

use super::{NumericsError, Tensor};

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: Tensor,
    first_moment: Tensor,
    second_moment: Tensor,
}

/// Named trainable tensors together with their Adam state. The step counter
/// is shared by every parameter in the set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    entries: BTreeMap<String, Entry>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), NumericsError> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(NumericsError::DuplicateParameter(name));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name,
            Entry {
                value,
                first_moment: Tensor::zeros(&shape),
                second_moment: Tensor::zeros(&shape),
            },
        );
        Ok(())
    }

    /// Replace the value of an existing parameter, keeping its shape. Adam
    /// moments are left untouched.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<(), NumericsError> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))?;
        if entry.value.shape() != value.shape() {
            return Err(NumericsError::GradientShape {
                name: name.to_string(),
                expected: entry.value.shape().to_vec(),
                got: value.shape().to_vec(),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor, NumericsError> {
        self.get(name)
            .ok_or_else(|| NumericsError::UnknownParameter(name.to_string()))
    }

    pub(crate) fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// `(first, second)` Adam moments of a parameter.
    pub fn moments(&self, name: &str) -> Option<(&Tensor, &Tensor)> {
        self.entries
            .get(name)
            .map(|e| (&e.first_moment, &e.second_moment))
    }

    /// Zero-filled gradient buffers for every parameter.
    pub fn zero_gradients(&self) -> Gradients {
        self.entries
            .iter()
            .map(|(k, e)| (k.clone(), Tensor::zeros(e.value.shape())))
            .collect()
    }

    /// Values only, with fresh optimizer state.
    pub fn without_optimizer_state(&self) -> Self {
        let mut out = Self::new();
        for (name, value) in self.iter() {
            out.insert(name, value.clone()).expect("names are unique");
        }
        out
    }

    /// One Adam update. Parameters without an entry in `gradients` are
    /// treated as having zero gradient.
    pub fn adam_step(
        &mut self,
        gradients: &Gradients,
        learning_rate: f64,
        config: &AdamConfig,
    ) -> Result<(), NumericsError> {
        for (name, grad) in gradients {
            let entry = self
                .entries
                .get(name)
                .ok_or_else(|| NumericsError::UnknownParameter(name.clone()))?;
            if entry.value.shape() != grad.shape() {
                return Err(NumericsError::GradientShape {
                    name: name.clone(),
                    expected: entry.value.shape().to_vec(),
                    got: grad.shape().to_vec(),
                });
            }
            if !grad.is_finite() {
                return Err(NumericsError::NonFiniteGradient(name.clone()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - config.beta1.powi(t);
        let correction2 = 1.0 - config.beta2.powi(t);
        for (name, entry) in self.entries.iter_mut() {
            let grad = gradients.get(name).map(Tensor::data);
            let m = entry.first_moment.data_mut();
            let v = entry.second_moment.data_mut();
            let w = entry.value.data_mut();
            for i in 0..w.len() {
                let g = grad.map_or(0.0, |g| g[i]);
                m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
                v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
                let m_hat = m[i] / correction1;
                let v_hat = v[i] / correction2;
                w[i] -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }
}

/// Adam with the canonical β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
pub fn adam_step(
    params: &mut ParamSet,
    gradients: &Gradients,
    learning_rate: f64,
) -> Result<(), NumericsError> {
    params.adam_step(gradients, learning_rate, &AdamConfig::default())
}
