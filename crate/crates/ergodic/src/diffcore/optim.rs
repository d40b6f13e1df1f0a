//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over an ordered parameter list. Gradients must be supplied
    /// in the same order on every call; moment buffers are allocated lazily on
    /// the first step.
    pub fn step(&mut self, params: &mut [(String, Tensor)], grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Config(format!(
                "optimizer got {} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
            self.second_moment = self.first_moment.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (name, p)) in params.iter_mut().enumerate() {
            let g = &grads[i];
            if g.shape() != p.shape() {
                return Err(Error::Shape {
                    op: format!("adamw update of {name}"),
                    expected: format!("{:?}", p.shape()),
                    got: format!("{:?}", g.shape()),
                });
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for ((pj, gj), (mj, vj)) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj -= self.learning_rate * (m_hat / (v_hat.sqrt() + self.eps));
                *pj -= self.learning_rate * self.weight_decay * *pj;
            }
        }
        Ok(())
    }
}
