use crate::{ParamStore, Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer over a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
}

impl Optimizer {
    pub fn sgd(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Sgd, learning_rate)
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self::new(OptimizerKind::Adam, learning_rate)
    }

    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Self {
            kind,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update; `grads` must follow store order.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<(), TensorError> {
        if grads.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                op: "optimizer_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for (id, g) in params.ids().zip(grads) {
            if params.get(id).len() != g.len() {
                return Err(TensorError::ShapeMismatch {
                    op: "optimizer_step",
                    left: params.get(id).shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(TensorError::NonFiniteValue { op: "optimizer_step" });
            }
        }
        self.steps += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (id, g) in params.ids().zip(grads) {
                    let lr = self.learning_rate;
                    for (p, gv) in params.get_mut(id).data_mut().iter_mut().zip(g.data()) {
                        *p -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.first_moment.is_empty() {
                    self.first_moment = params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect();
                    self.second_moment = self.first_moment.clone();
                }
                let t = self.steps as i32;
                let bc1 = 1.0 - self.beta1.powi(t);
                let bc2 = 1.0 - self.beta2.powi(t);
                for (k, (id, g)) in params.ids().zip(grads).enumerate() {
                    let m = self.first_moment[k].data_mut();
                    let v = self.second_moment[k].data_mut();
                    let p = params.get_mut(id).data_mut();
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                    }
                }
            }
        }
        Ok(())
    }
}
