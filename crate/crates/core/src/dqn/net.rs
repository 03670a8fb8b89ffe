use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

/// Affine layer with `weights` stored `inputs × outputs` row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn weights_view(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.inputs, self.outputs), &self.weights).expect("layer shape")
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.dot(&self.weights_view());
        out += &ArrayView2::from_shape((1, self.outputs), &self.bias).expect("bias shape");
        out
    }
}

/// `in → h1 → h2 → K` with ReLU after the two hidden layers and a linear head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QNetwork {
    pub layers: [Dense; 3],
}

/// Activations kept for the backward pass.
pub struct ForwardCache {
    input: Array2<f64>,
    hidden1: Array2<f64>,
    hidden2: Array2<f64>,
    pub output: Array2<f64>,
}

impl QNetwork {
    /// PyTorch-style uniform init, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weights and biases.
    pub fn init(input_dim: usize, hidden: [usize; 2], actions: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [input_dim, hidden[0], hidden[1], actions];
        let layers = [0, 1, 2].map(|l| {
            let (i, o) = (dims[l], dims[l + 1]);
            let bound = 1.0 / (i.max(1) as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound);
            Dense {
                inputs: i,
                outputs: o,
                weights: (0..i * o).map(|_| u.sample(&mut rng)).collect(),
                bias: (0..o).map(|_| u.sample(&mut rng)).collect(),
            }
        });
        QNetwork { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn actions(&self) -> usize {
        self.layers[2].outputs
    }

    pub fn hidden(&self) -> [usize; 2] {
        [self.layers[0].outputs, self.layers[1].outputs]
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|x| x.is_finite()))
    }

    /// Batched forward pass; `input` is `batch × input_dim`.
    pub fn forward(&self, input: Array2<f64>) -> ForwardCache {
        let relu = |mut a: Array2<f64>| {
            a.mapv_inplace(|x| x.max(0.0));
            a
        };
        let hidden1 = relu(self.layers[0].forward(&input));
        let hidden2 = relu(self.layers[1].forward(&hidden1));
        let output = self.layers[2].forward(&hidden2);
        ForwardCache {
            input,
            hidden1,
            hidden2,
            output,
        }
    }

    /// Q-values for one state.
    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        let x = Array2::from_shape_vec((1, state.len()), state.to_vec()).expect("state row");
        self.forward(x).output.into_raw_vec_and_offset().0
    }

    /// Gradients of `Σ_b Σ_k d_output[b,k] · Q[b,k]` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, d_output: &Array2<f64>) -> QNetwork {
        let grad_layer = |input: &Array2<f64>, d_out: &Array2<f64>| -> Dense {
            let gw = input.t().dot(d_out);
            let gb: Array1<f64> = d_out.sum_axis(Axis(0));
            Dense {
                inputs: input.ncols(),
                outputs: d_out.ncols(),
                weights: gw.as_standard_layout().iter().copied().collect(),
                bias: gb.to_vec(),
            }
        };
        let g3 = grad_layer(&cache.hidden2, d_output);
        let mut d2 = d_output.dot(&self.layers[2].weights_view().t());
        d2.zip_mut_with(&cache.hidden2, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        let g2 = grad_layer(&cache.hidden1, &d2);
        let mut d1 = d2.dot(&self.layers[1].weights_view().t());
        d1.zip_mut_with(&cache.hidden1, |d, &h| {
            if h <= 0.0 {
                *d = 0.0
            }
        });
        let g1 = grad_layer(&cache.input, &d1);
        QNetwork {
            layers: [g1, g2, g3],
        }
    }

    /// `(param, grad)` slices in a fixed order, for the optimiser.
    pub fn params_with<'a>(&'a mut self, grads: &'a QNetwork) -> Vec<(&'a mut [f64], &'a [f64])> {
        self.layers
            .iter_mut()
            .zip(&grads.layers)
            .flat_map(|(l, g)| {
                [
                    (&mut l.weights[..], &g.weights[..]),
                    (&mut l.bias[..], &g.bias[..]),
                ]
            })
            .collect()
    }
}

/// `0.5 δ²` for `|δ| ≤ 1`, `|δ| − 0.5` beyond.
pub fn huber(delta: f64) -> f64 {
    let a = delta.abs();
    if a <= 1.0 {
        0.5 * delta * delta
    } else {
        a - 0.5
    }
}

pub fn huber_grad(delta: f64) -> f64 {
    delta.clamp(-1.0, 1.0)
}

/// One replayed experience.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// `None` for a terminal transition.
    pub next_state: Option<Vec<f64>>,
    pub next_action_mask: Vec<bool>,
}

/// Mean Huber loss of the TD error
/// `Q(s,a) − (ρ + γ·max_{a' unmasked} Q_target(s',a'))` and its gradient with
/// respect to `net`. Terminal transitions regress on `ρ` alone.
pub fn huber_td_loss(
    net: &QNetwork,
    target_net: &QNetwork,
    batch: &[&Transition],
    gamma: f64,
) -> (f64, QNetwork) {
    assert!(!batch.is_empty(), "empty TD batch");
    let width = net.input_dim();
    let stack = |rows: &mut dyn Iterator<Item = &[f64]>, n: usize| {
        let mut flat = Vec::with_capacity(n * width);
        rows.for_each(|r| flat.extend_from_slice(r));
        Array2::from_shape_vec((n, width), flat).expect("state width")
    };

    let mut targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let live: Vec<usize> = (0..batch.len())
        .filter(|&i| batch[i].next_state.is_some())
        .collect();
    if !live.is_empty() && gamma != 0.0 {
        let next = stack(
            &mut live
                .iter()
                .map(|&i| batch[i].next_state.as_deref().unwrap()),
            live.len(),
        );
        let q_next = target_net.forward(next).output;
        for (row, &i) in live.iter().enumerate() {
            let best = q_next
                .row(row)
                .iter()
                .zip(&batch[i].next_action_mask)
                .filter(|(_, &ok)| ok)
                .map(|(&q, _)| q)
                .fold(f64::NEG_INFINITY, f64::max);
            if best.is_finite() {
                targets[i] += gamma * best;
            }
        }
    }

    let cache = net.forward(stack(
        &mut batch.iter().map(|t| t.state.as_slice()),
        batch.len(),
    ));
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = Array2::zeros(cache.output.raw_dim());
    for (i, t) in batch.iter().enumerate() {
        let delta = cache.output[[i, t.action]] - targets[i];
        loss += huber(delta);
        d_out[[i, t.action]] = huber_grad(delta) / n;
    }
    let grads = net.backward(&cache, &d_out);
    (loss / n, grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_net(i: usize, k: usize) -> QNetwork {
        QNetwork {
            layers: [Dense::zeros(i, 3), Dense::zeros(3, 2), Dense::zeros(2, k)],
        }
    }

    #[test]
    fn zero_weights_give_last_bias() {
        let mut net = zero_net(4, 3);
        net.layers[2].bias = vec![0.5, -1.0, 2.0];
        assert_eq!(net.q_values(&[1.0, 2.0, 3.0, 4.0]), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn huber_branches() {
        assert_eq!(huber(0.5), 0.125);
        assert_eq!(huber(-2.0), 1.5);
        assert_eq!(huber_grad(3.0), 1.0);
        assert_eq!(huber_grad(-0.25), -0.25);
    }

    #[test]
    fn exact_target_has_zero_loss() {
        let mut net = zero_net(2, 2);
        net.layers[2].bias = vec![0.7, 0.0];
        let t = Transition {
            state: vec![1.0, -1.0],
            action: 0,
            reward: 0.7,
            next_state: None,
            next_action_mask: vec![],
        };
        let (loss, g) = huber_td_loss(&net, &net, &[&t], 0.9);
        assert_eq!(loss, 0.0);
        assert!(g
            .layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|&x| x == 0.0)));
    }

    #[test]
    fn masked_next_actions_are_ignored() {
        let mut net = zero_net(1, 2);
        net.layers[2].bias = vec![10.0, 1.0];
        let t = Transition {
            state: vec![0.0],
            action: 1,
            reward: 0.0,
            next_state: Some(vec![0.0]),
            next_action_mask: vec![false, true],
        };
        // Target = 0 + 0.5 · 1 = 0.5, Q = 1, δ = 0.5.
        let (loss, _) = huber_td_loss(&net, &net, &[&t], 0.5);
        assert_eq!(loss, 0.125);
    }
}
