//! Adam over a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale the joint gradient to at most this Euclidean norm.
    pub clip_norm: Option<f64>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn with_clip(mut self, clip_norm: Option<f64>) -> Self {
        self.clip_norm = clip_norm;
        self
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update; `grads[i]` belongs to the `i`-th parameter of `store`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::InvalidArgument(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        if self.m.is_empty() {
            self.m = store
                .values()
                .iter()
                .map(|p| Tensor::zeros(p.rows(), p.cols()))
                .collect();
            self.v = self.m.clone();
        }
        let norm = grads
            .iter()
            .map(|g| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite {
                op: "Adam::step gradient".into(),
                index: None,
            });
        }
        let scale = match self.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in store.values_mut().iter_mut().enumerate() {
            if p.dims() != grads[i].dims() {
                return Err(Error::ShapeMismatch {
                    op: "Adam::step",
                    left: p.shape().to_vec(),
                    right: grads[i].shape().to_vec(),
                });
            }
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (k, (w, &g)) in p.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
                let g = g * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (m[k] / bc1) / ((v[k] / bc2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(vec![1.0, -2.0, 0.5]));
        let mut opt = Adam::new(0.1);
        opt.step(&mut store, &[Tensor::row_vector(vec![3.0, -0.01, 0.0])])
            .unwrap();
        let w = store.values()[0].data();
        assert!((w[0] - 0.9).abs() < 1e-6);
        assert!((w[1] + 1.9).abs() < 1e-4);
        assert_eq!(w[2], 0.5);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(vec![5.0, -3.0]));
        let mut opt = Adam::new(0.05);
        for _ in 0..2000 {
            let g: Vec<f64> = store.values()[0].data().iter().map(|w| 2.0 * (w - 1.0)).collect();
            opt.step(&mut store, &[Tensor::row_vector(g)]).unwrap();
        }
        assert!(store.values()[0].data().iter().all(|w| (w - 1.0).abs() < 1e-3));
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::row_vector(vec![0.0]));
        let mut opt = Adam::new(0.1);
        assert!(opt.step(&mut store, &[Tensor::row_vector(vec![f64::NAN])]).is_err());
        assert!(opt.step(&mut store, &[]).is_err());
        assert_eq!(store.values()[0].data(), &[0.0]);
    }

    #[test]
    fn clipping_bounds_the_effective_gradient() {
        let mut a = ParamStore::new();
        a.add("w", Tensor::row_vector(vec![0.0, 0.0]));
        let mut b = a.clone();
        let mut opt_a = Adam::new(0.1).with_clip(Some(1.0));
        let mut opt_b = Adam::new(0.1);
        let g = Tensor::row_vector(vec![300.0, 400.0]);
        opt_a.step(&mut a, std::slice::from_ref(&g)).unwrap();
        opt_b.step(&mut b, &[Tensor::row_vector(vec![0.6, 0.8])]).unwrap();
        assert!(a.values()[0].max_abs_diff(&b.values()[0]) < 1e-12);
    }
}
