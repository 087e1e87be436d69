use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(shapes: &[&[usize]]) -> Self {
        AdamState {
            t: 0,
            m: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_tensors(params: &[Tensor]) -> Self {
        let shapes: Vec<&[usize]> = params.iter().map(Tensor::shape).collect();
        AdamState::new(&shapes)
    }

    /// One Adam update. Nothing is modified if any gradient is non-finite or
    /// mis-shaped.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                lhs: vec![self.m.len()],
                rhs: vec![params.len(), grads.len()],
            });
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.m[i].shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            if let Some(j) = g.first_non_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of parameter tensor {i}"),
                    index: j,
                });
            }
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let mut st = AdamState::for_tensors(&p);
        st.step(&mut p, &[Tensor::zeros(&[2])], 0.1).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_matches_reference() {
        // Hand-evaluated reference: m = 0.1, v = 0.001, mhat = 1, vhat = 1,
        // step = lr * 1 / (1 + eps).
        let mut p = vec![Tensor::scalar(0.5)];
        let mut st = AdamState::for_tensors(&p);
        st.step(&mut p, &[Tensor::scalar(1.0)], 0.1).unwrap();
        let m = (1.0 - 0.9) * 1.0;
        let v = (1.0 - 0.999) * 1.0;
        let mhat = m / (1.0 - 0.9);
        let vhat: f64 = v / (1.0 - 0.999);
        let expected = 0.5 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!(p[0].item() < 0.5);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((0.5 - p[0].item() - 0.1).abs() < 1e-8);
    }

    #[test]
    fn identical_params_stay_identical() {
        let mut p = vec![Tensor::vector(vec![0.3, 0.3])];
        let mut st = AdamState::for_tensors(&p);
        for k in 0..20 {
            let g = Tensor::vector(vec![k as f64 * 0.1 - 1.0; 2]);
            st.step(&mut p, &[g], 0.05).unwrap();
            assert_eq!(p[0].data()[0].to_bits(), p[0].data()[1].to_bits());
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = vec![Tensor::scalar(0.0), Tensor::vector(vec![0.0, 0.0])];
        let mut st = AdamState::for_tensors(&p);
        let err = st
            .step(&mut p, &[Tensor::scalar(1.0), Tensor::vector(vec![0.0, f64::NAN])], 0.1)
            .unwrap_err();
        match err {
            Error::NonFinite { context, index } => {
                assert!(context.contains("tensor 1"));
                assert_eq!(index, 1);
            }
            e => panic!("{e}"),
        }
        assert_eq!(st.t, 0);
        assert_eq!(p[0].item(), 0.0);
    }
}
