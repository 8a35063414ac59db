use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};

/// Adam moment estimates; serializable so training can resume exactly.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.state.m.is_empty() {
            self.state.m = params.values().iter().map(|t| vec![0.0; t.numel()]).collect();
            self.state.v = self.state.m.clone();
        }
        self.state.step += 1;
        let t = self.state.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.values_mut().iter_mut().zip(grads).enumerate() {
            let m = &mut self.state.m[i];
            let v = &mut self.state.v[i];
            for (((w, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
