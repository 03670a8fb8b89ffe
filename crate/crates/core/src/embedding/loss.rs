use super::{adaptive_margin, euclidean, EmbeddingConfig, EmbeddingModel};
use crate::dataset::Dataset;
use crate::sampling::Triplet;

/// Gradients with the same layout as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub mask_params: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model: &EmbeddingModel) -> Self {
        Gradients {
            weights: vec![0.0; model.weights.len()],
            bias: vec![0.0; model.bias.len()],
            mask_params: vec![0.0; model.mask_params.len()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.bias)
            .chain(&self.mask_params)
            .all(|x| x.is_finite())
    }
}

struct Branch {
    features_idx: usize,
    general: Vec<f64>,
    /// Norm of `G ⋆ m` (only meaningful when normalising).
    norm: f64,
    rep: Vec<f64>,
}

/// Batch-mean of the regularised triplet loss
/// `max(0, h' + D(x,y) − D(x,z)) + λ₁·mean(|G_x|², |G_y|², |G_z|²) + λ₂·|m_a|₁`
/// together with its gradient. Subgradients at the hinge and `|·|` kinks are 0.
///
/// For simplex masks the L1 term is the constant `λ₂`, so it contributes to the
/// value but has no gradient.
pub fn csn_loss(
    model: &EmbeddingModel,
    dataset: &Dataset,
    batch: &[Triplet],
    config: &EmbeddingConfig,
) -> (f64, Gradients) {
    let mut grads = Gradients::zeros(model);
    if batch.is_empty() {
        return (0.0, grads);
    }
    let dim = model.embedding_dim;
    let d_in = model.input_dim;
    let masks: Vec<Vec<f64>> = (0..model.n_attributes).map(|a| model.mask(a)).collect();
    let mut mask_grad = vec![vec![0.0; dim]; model.n_attributes];
    let mut total = 0.0;

    for t in batch {
        let mask = &masks[t.attribute];
        let branch = |idx: usize| {
            let general = model.general(&dataset.item(idx).features);
            let u: Vec<f64> = general.iter().zip(mask).map(|(g, m)| g * m).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            let rep = if model.constrained && norm > 0.0 {
                u.iter().map(|x| x / norm).collect()
            } else {
                u
            };
            Branch {
                features_idx: idx,
                general,
                norm,
                rep,
            }
        };
        let x = branch(t.anchor);
        let y = branch(t.positive);
        let z = branch(t.negative);

        let labels = |i: usize| dataset.item(i).labels.as_slice();
        let margin = adaptive_margin(
            labels(t.anchor),
            labels(t.positive),
            labels(t.negative),
            config,
        );
        let dp = euclidean(&x.rep, &y.rep);
        let dn = euclidean(&x.rep, &z.rep);
        let hinge = margin + dp - dn;

        let reg = (sq_norm(&x.general) + sq_norm(&y.general) + sq_norm(&z.general)) / 3.0;
        let l1 = if model.constrained {
            config.lambda2
        } else {
            config.lambda2 * mask.iter().map(|m| m.abs()).sum::<f64>()
        };
        total += hinge.max(0.0) + config.lambda1 * reg + l1;

        // d loss / d rep for each branch.
        let mut g_rep = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
        if hinge > 0.0 {
            if dp > 0.0 {
                for k in 0..dim {
                    let d = (x.rep[k] - y.rep[k]) / dp;
                    g_rep[0][k] += d;
                    g_rep[1][k] -= d;
                }
            }
            if dn > 0.0 {
                for k in 0..dim {
                    let d = (x.rep[k] - z.rep[k]) / dn;
                    g_rep[0][k] -= d;
                    g_rep[2][k] += d;
                }
            }
        }

        let m_grad = &mut mask_grad[t.attribute];
        for (b, g_e) in [&x, &y, &z].into_iter().zip(g_rep.iter()) {
            // Back through the normalisation: (I − e eᵀ) g / |u|.
            let g_u: Vec<f64> = if model.constrained {
                if b.norm > 0.0 {
                    let dot: f64 = b.rep.iter().zip(g_e).map(|(e, g)| e * g).sum();
                    g_e.iter()
                        .zip(&b.rep)
                        .map(|(g, e)| (g - e * dot) / b.norm)
                        .collect()
                } else {
                    vec![0.0; dim]
                }
            } else {
                g_e.clone()
            };
            let features = &dataset.item(b.features_idx).features;
            for k in 0..dim {
                m_grad[k] += g_u[k] * b.general[k];
                let g_general = g_u[k] * mask[k] + 2.0 * config.lambda1 * b.general[k] / 3.0;
                grads.bias[k] += g_general;
                let row = &mut grads.weights[k * d_in..(k + 1) * d_in];
                row.iter_mut()
                    .zip(features)
                    .for_each(|(w, f)| *w += g_general * f);
            }
        }
        if !model.constrained {
            for (g, m) in m_grad.iter_mut().zip(mask) {
                if *m != 0.0 {
                    *g += config.lambda2 * m.signum();
                }
            }
        }
    }

    for (a, g_m) in mask_grad.iter().enumerate() {
        let out = &mut grads.mask_params[a * dim..(a + 1) * dim];
        if model.constrained {
            // Softmax Jacobian: m ⋆ (g − m·g).
            let m = &masks[a];
            let dot: f64 = m.iter().zip(g_m).map(|(m, g)| m * g).sum();
            for k in 0..dim {
                out[k] = m[k] * (g_m[k] - dot);
            }
        } else {
            out.copy_from_slice(g_m);
        }
    }

    let n = batch.len() as f64;
    grads
        .weights
        .iter_mut()
        .chain(grads.bias.iter_mut())
        .chain(grads.mask_params.iter_mut())
        .for_each(|g| *g /= n);
    (total / n, grads)
}

fn sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Attribute, Item, Schema, Split};

    fn fixture() -> Dataset {
        let schema = Schema::new(vec![Attribute::new("c", ["a", "b"])]).unwrap();
        let items = [(0, [1.0, 0.0]), (0, [1.0, 0.1]), (1, [-1.0, 0.0])]
            .iter()
            .enumerate()
            .map(|(i, (v, f))| Item {
                id: format!("i{i}"),
                split: Split::Train,
                labels: vec![Some(*v)],
                features: f.to_vec(),
            })
            .collect();
        Dataset::new(schema, 2, items).unwrap()
    }

    #[test]
    fn satisfied_triplets_without_regularisation_are_free() {
        let data = fixture();
        let mut model = EmbeddingModel::init(2, 2, 1, true, 0);
        model.weights = vec![1.0, 0.0, 0.0, 1.0];
        let cfg = EmbeddingConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            eta: 0.0,
            ..Default::default()
        };
        let batch = [Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
            attribute: 0,
        }];
        let (loss, g) = csn_loss(&model, &data, &batch, &cfg);
        assert_eq!(loss, 0.0);
        assert!(g
            .weights
            .iter()
            .chain(&g.bias)
            .chain(&g.mask_params)
            .all(|&x| x == 0.0));
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let data = fixture();
        let model = EmbeddingModel::init(2, 4, 1, true, 3);
        let cfg = EmbeddingConfig::default();
        let t1 = Triplet {
            anchor: 0,
            positive: 1,
            negative: 2,
            attribute: 0,
        };
        let t2 = Triplet {
            anchor: 1,
            positive: 0,
            negative: 2,
            attribute: 0,
        };
        let (a, _) = csn_loss(&model, &data, &[t1, t2], &cfg);
        let (b, _) = csn_loss(&model, &data, &[t2, t1], &cfg);
        assert!((a - b).abs() < 1e-15);
        assert!(a >= 0.0);
    }
}
