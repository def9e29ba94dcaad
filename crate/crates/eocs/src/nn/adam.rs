//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use super::{Gradients, PgnnModel};

/// `[train]` configuration section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            epochs: 10_000,
            batch: 64,
            seed: 0,
        }
    }
}

/// Optimizer state: first and second moments congruent with the model.
pub struct Adam {
    m: Gradients,
    v: Gradients,
    step: u64,
}

impl Adam {
    pub fn new(model: &PgnnModel) -> Self {
        Adam { m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. The model is mutated in place; callers
    /// must not share it with concurrent readers during the update.
    pub fn step(&mut self, model: &mut PgnnModel, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - cfg.beta1.powi(t);
        let correction2 = 1.0 - cfg.beta2.powi(t);

        let update = |w: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *w -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        };

        for c in 0..4 {
            for (l, layer) in model.stacks[c].iter_mut().enumerate() {
                for ((w, &g), (m, v)) in layer
                    .w
                    .iter_mut()
                    .zip(grads.stacks[c][l].iter())
                    .zip(self.m.stacks[c][l].iter_mut().zip(self.v.stacks[c][l].iter_mut()))
                {
                    update(w, g, m, v);
                }
            }
        }
        for (idx, layer) in model.mlp.iter_mut().enumerate() {
            for ((w, &g), (m, v)) in layer
                .w
                .iter_mut()
                .zip(grads.mlp_w[idx].iter())
                .zip(self.m.mlp_w[idx].iter_mut().zip(self.v.mlp_w[idx].iter_mut()))
            {
                update(w, g, m, v);
            }
            for ((w, &g), (m, v)) in layer
                .b
                .iter_mut()
                .zip(grads.mlp_b[idx].iter())
                .zip(self.m.mlp_b[idx].iter_mut().zip(self.v.mlp_b[idx].iter_mut()))
            {
                update(w, g, m, v);
            }
        }
    }
}
