use std::collections::HashMap;

use nalgebra::DMatrix;

use super::checkpoint::Record;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Hyperparameters of the adaptive-moment optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Track one second-moment scalar per tensor (the mean squared
    /// gradient) instead of one per entry. The update direction is then a
    /// rotation-equivariant function of the gradient.
    pub isotropic: bool,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            isotropic: false,
        }
    }

    pub fn isotropic(mut self) -> Self {
        self.isotropic = true;
        self
    }
}

/// Named parameter tensors plus their optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<DMatrix<f64>>,
    first_moment: Vec<DMatrix<f64>>,
    second_moment: Vec<DMatrix<f64>>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a new parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: DMatrix<f64>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter name `{name}`")));
        }
        let (r, c) = value.shape();
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.values.push(value);
        self.first_moment.push(DMatrix::zeros(r, c));
        self.second_moment.push(DMatrix::zeros(r, c));
        Ok(ParamId(self.names.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &DMatrix<f64> {
        &self.values[id.0]
    }

    pub fn values(&self) -> &[DMatrix<f64>] {
        &self.values
    }

    /// Replaces a value; the shape is fixed at creation.
    pub fn set(&mut self, id: ParamId, value: DMatrix<f64>) -> Result<()> {
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape(format!(
                "parameter `{}` has shape {:?}, got {:?}",
                self.names[id.0],
                self.values[id.0].shape(),
                value.shape()
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Clears moment estimates and the step counter.
    pub fn reset_optimizer(&mut self) {
        for m in self.first_moment.iter_mut().chain(self.second_moment.iter_mut()) {
            m.fill(0.0);
        }
        self.step = 0;
    }

    /// One bias-corrected adaptive-moment update. `grads` is indexed like the store.
    pub fn adam_step(&mut self, grads: &[DMatrix<f64>], cfg: &AdamConfig) -> Result<()> {
        if grads.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "expected {} gradients, got {}",
                self.values.len(),
                grads.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{}` has shape {:?}, expected {:?}",
                    self.names[i],
                    g.shape(),
                    self.values[i].shape()
                )));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of parameter `{}`", self.names[i])));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.first_moment[i];
            *m = &*m * cfg.beta1 + g * (1.0 - cfg.beta1);
            let v = &mut self.second_moment[i];
            if cfg.isotropic {
                let ms = if g.is_empty() { 0.0 } else { g.norm_squared() / g.len() as f64 };
                v.apply(|x| *x = *x * cfg.beta2 + ms * (1.0 - cfg.beta2));
            } else {
                v.zip_apply(g, |x, gi| *x = *x * cfg.beta2 + gi * gi * (1.0 - cfg.beta2));
            }
            let value = &mut self.values[i];
            for ((w, mi), vi) in value.iter_mut().zip(m.iter()).zip(v.iter()) {
                *w -= cfg.lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            }
            if value.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("parameter `{}` after update", self.names[i])));
            }
        }
        Ok(())
    }

    /// Values as checkpoint records, in registration order.
    pub fn to_records(&self, prefix: &str) -> Vec<Record> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(n, v)| Record::from_matrix(format!("{prefix}{n}"), v))
            .collect()
    }

    /// Loads values from records named `prefix + name`; every parameter must be present
    /// with its registered shape.
    pub fn load_records(&mut self, records: &[Record], prefix: &str) -> Result<()> {
        let by_name: HashMap<&str, &Record> = records.iter().map(|r| (r.name.as_str(), r)).collect();
        for i in 0..self.values.len() {
            let key = format!("{prefix}{}", self.names[i]);
            let rec = by_name
                .get(key.as_str())
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{key}`")))?;
            let m = rec.to_matrix()?;
            if m.shape() != self.values[i].shape() {
                return Err(Error::Shape(format!(
                    "checkpoint parameter `{key}` has shape {:?}, model expects {:?}",
                    m.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i] = m;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.add("w", col(&[1.0])).unwrap();
        assert!(s.add("w", col(&[2.0])).is_err());
        assert!(s.set(s.id("w").unwrap(), col(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new();
        s.add("w", col(&[1.0, -2.0])).unwrap();
        s.adam_step(&[DMatrix::zeros(2, 1)], &AdamConfig::new(0.1)).unwrap();
        assert_eq!(s.values()[0], col(&[1.0, -2.0]));
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = ParamStore::new();
        s.add("w", col(&[0.0, 0.0])).unwrap();
        s.adam_step(&[col(&[3.0, -0.5])], &AdamConfig::new(0.01)).unwrap();
        let w = &s.values()[0];
        assert!((w[0] + 0.01).abs() < 1e-9);
        assert!((w[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let mut s = ParamStore::new();
        s.add("w", col(&[1.5, -0.7, 0.3])).unwrap();
        let cfg = AdamConfig::new(1e-2);
        for _ in 0..500 {
            let g = &s.values()[0] * 2.0;
            s.adam_step(&[g], &cfg).unwrap();
        }
        assert!(s.values()[0].norm() < 1e-3, "{}", s.values()[0].norm());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut s = ParamStore::new();
        s.add("alpha", col(&[0.0])).unwrap();
        let err = s.adam_step(&[col(&[f64::NAN])], &AdamConfig::new(0.1)).unwrap_err();
        assert!(err.to_string().contains("alpha"));
    }

    #[test]
    fn isotropic_update_is_rotation_equivariant() {
        let g = col(&[0.3, -1.2, 0.5]);
        let r = DMatrix::from_row_slice(3, 3, &[0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let cfg = AdamConfig::new(0.05).isotropic();
        let mut a = ParamStore::new();
        a.add("z", DMatrix::zeros(3, 1)).unwrap();
        let mut b = a.clone();
        for _ in 0..3 {
            a.adam_step(std::slice::from_ref(&g), &cfg).unwrap();
            b.adam_step(&[&r * &g], &cfg).unwrap();
        }
        assert!((&r * &a.values()[0] - &b.values()[0]).norm() < 1e-14);
    }
}
