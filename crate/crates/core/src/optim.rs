//! Mini-batch SGD with classical momentum and a step-decay learning rate.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDecay {
    pub initial: f64,
    /// Multiplicative factor applied every `step_every` epochs (or steps).
    pub factor: f64,
    pub step_every: usize,
}

impl StepDecay {
    pub fn rate(&self, t: usize) -> f64 {
        if self.step_every == 0 {
            return self.initial;
        }
        self.initial * self.factor.powi((t / self.step_every) as i32)
    }
}

/// Momentum buffers for a fixed list of parameter blocks.
#[derive(Clone, Debug, Default)]
pub struct Momentum {
    beta: f64,
    velocity: Vec<Vec<f64>>,
}

impl Momentum {
    pub fn new(beta: f64) -> Self {
        Momentum {
            beta,
            velocity: Vec::new(),
        }
    }

    /// `v <- beta * v + g; p <- p - lr * v` for every block.
    pub fn step(&mut self, blocks: &mut [(&mut [f64], &[f64])], lr: f64) {
        if self.velocity.len() != blocks.len() {
            self.velocity = blocks.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
        }
        for ((params, grads), vel) in blocks.iter_mut().zip(self.velocity.iter_mut()) {
            debug_assert_eq!(params.len(), grads.len());
            for ((p, g), v) in params.iter_mut().zip(grads.iter()).zip(vel.iter_mut()) {
                *v = self.beta * *v + g;
                *p -= lr * *v;
            }
        }
    }
}
