//! Named parameter tensors shared by models, the optimizer and checkpoints.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::NnError;

pub type ParamId = usize;

/// Standard deviation of the normal initialization.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    index: HashMap<String, ParamId>,
    values: Vec<Array2<f64>>,
}

/// Rounds through `f32` so that stored and checkpointed weights agree exactly.
pub fn round_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|x| x as f32 as f64);
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, mut value: Array2<f64>) -> ParamId {
        assert!(!self.index.contains_key(name), "duplicate parameter `{name}`");
        assert!(!name.contains('/'), "parameter names may not contain `/`: `{name}`");
        round_f32(&mut value);
        let id = self.values.len();
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        self.values.push(value);
        id
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, INIT_STD).expect("positive std");
        let v = Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng));
        self.add(name, v)
    }

    pub fn zeros(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::zeros((rows, cols)))
    }

    pub fn ones(&mut self, name: &str, rows: usize, cols: usize) -> ParamId {
        self.add(name, Array2::ones((rows, cols)))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Array2<f64>)> {
        self.names.iter().zip(&self.values).enumerate().map(|(i, (n, v))| (i, n.as_str(), v))
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, id: ParamId, value: Array2<f64>) -> Result<(), NnError> {
        if value.dim() != self.values[id].dim() {
            return Err(NnError::Shape(format!(
                "`{}` expects {:?}, got {:?}",
                self.names[id],
                self.values[id].dim(),
                value.dim()
            )));
        }
        self.values[id] = value;
        Ok(())
    }
}
