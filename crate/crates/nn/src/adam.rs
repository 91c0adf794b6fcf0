//! Adam with bias correction.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::params::{round_f32, ParamStore};
use crate::tape::Gradients;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state. Weights and moments are rounded to `f32` after every
/// step, so a checkpointed state resumes bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: store.iter().map(|(_, _, p)| Array2::zeros(p.dim())).collect(),
            v: store.iter().map(|(_, _, p)| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn update(&mut self, store: &mut ParamStore, grads: &Gradients) -> Result<(), NnError> {
        if grads.grads.len() != store.len() || self.m.len() != store.len() {
            return Err(NnError::Shape(format!(
                "{} gradients and {} moment tensors for {} parameters",
                grads.grads.len(),
                self.m.len(),
                store.len()
            )));
        }
        for (id, g) in grads.grads.iter().enumerate() {
            if let Some(g) = g {
                if g.dim() != store.get(id).dim() {
                    return Err(NnError::Shape(format!(
                        "gradient of `{}` has shape {:?}, expected {:?}",
                        store.name(id),
                        g.dim(),
                        store.get(id).dim()
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads.grads.iter().enumerate() {
            let m = &mut self.m[id];
            let v = &mut self.v[id];
            match g {
                Some(g) => {
                    Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| beta1 * x);
                    v.mapv_inplace(|x| beta2 * x);
                }
            }
            round_f32(m);
            round_f32(v);
            let w = store.get_mut(id);
            Zip::from(w).and(&*m).and(&*v).for_each(|w, &m, &v| {
                *w -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
            round_f32(store.get_mut(id));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn setup() -> (ParamStore, Adam) {
        let mut store = ParamStore::new();
        store.add("w", array![[0.5, -0.25, 1.0]]);
        let adam = Adam::new(&store, AdamConfig::default());
        (store, adam)
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        let (mut store, mut adam) = setup();
        let before = store.clone();
        adam.update(&mut store, &Gradients { grads: vec![Some(Array2::zeros((1, 3)))] }).unwrap();
        assert_eq!(store, before);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let (mut store, mut adam) = setup();
        let before = store.get(0).clone();
        let g = array![[3.0, -0.02, 1e-3]];
        adam.update(&mut store, &Gradients { grads: vec![Some(g.clone())] }).unwrap();
        for ((w0, w1), gi) in before.iter().zip(store.get(0)).zip(&g) {
            let step = w1 - w0;
            assert!((step + gi.signum() * 1e-4).abs() < 1e-6, "{step}");
        }
    }

    #[test]
    fn deterministic_and_shape_checked() {
        let (mut s1, mut a1) = setup();
        let (mut s2, mut a2) = setup();
        let g = Gradients { grads: vec![Some(array![[0.1, 0.2, -0.3]])] };
        for _ in 0..3 {
            a1.update(&mut s1, &g).unwrap();
            a2.update(&mut s2, &g).unwrap();
        }
        assert_eq!(s1, s2);
        assert_eq!(a1, a2);
        let bad = Gradients { grads: vec![Some(Array2::zeros((2, 2)))] };
        assert!(a1.update(&mut s1, &bad).is_err());
    }
}
