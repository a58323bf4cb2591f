use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Weights;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// Adaptive-moment optimizer with bias correction. Moments live in `f32`
/// tensors keyed by parameter name; the arithmetic runs in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub t: u64,
    pub m: IndexMap<String, Tensor<f32>>,
    pub v: IndexMap<String, Tensor<f32>>,
}

impl Adam {
    pub fn new(params: AdamParams) -> Self {
        Adam {
            params,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Apply one update for every `(name, gradient)` pair.
    pub fn step(&mut self, weights: &mut Weights, grads: &[(String, Tensor<f32>)]) -> Result<()> {
        self.t += 1;
        let AdamParams { lr, beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, g) in grads {
            let p = weights.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()))
                .data_mut();
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.shape()))
                .data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gi = gi as f64;
                let m_new = beta1 * *mi as f64 + (1.0 - beta1) * gi;
                let v_new = beta2 * *vi as f64 + (1.0 - beta2) * gi * gi;
                *mi = m_new as f32;
                *vi = v_new as f32;
                let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + eps);
                *pi = (*pi as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut w = Weights::new();
        w.insert("p", Tensor::new(vec![3], vec![1.0f32, -2.0, 0.5]).unwrap());
        let mut opt = Adam::new(AdamParams {
            lr: 0.1,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        });
        let g = Tensor::new(vec![3], vec![3.0f32, -0.25, 0.0]).unwrap();
        opt.step(&mut w, &[("p".into(), g)]).unwrap();
        let p = w.get("p").unwrap().data();
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] - -1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = Weights::new();
        w.insert("x", Tensor::new(vec![1], vec![5.0f32]).unwrap());
        let mut opt = Adam::new(AdamParams {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        });
        for _ in 0..500 {
            let x = w.get("x").unwrap().data()[0];
            opt.step(&mut w, &[("x".into(), Tensor::new(vec![1], vec![2.0 * (x - 1.0)]).unwrap())]).unwrap();
        }
        assert!((w.get("x").unwrap().data()[0] - 1.0).abs() < 1e-2);
    }
}
