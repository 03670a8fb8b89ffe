//! Conditional masked embeddings.
//!
//! An affine encoder maps item features to a general embedding `G`. Each
//! attribute owns a mask `m_a` that selects the dimensions relevant to it; the
//! attribute representation of an item is `G ⋆ m_a`. Two variants exist:
//!
//! - **constrained** (the default): masks live on the probability simplex
//!   (softmax of free logits) and attribute representations are L2 normalised
//!   before distances are taken;
//! - **raw**: masks are free parameters, representations are not normalised.
//!   This is the plain CSN baseline used for ablations.
//!
//! The triplet margin can grow with how many more attributes the anchor shares
//! with the positive than with the negative (see [`adaptive_margin`]).

mod loss;
mod train;

pub use loss::{csn_loss, Gradients};
pub use train::{train, EpochRecord, TrainingLog};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::optim::StepDecay;
use crate::sampling::Triplet;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Raw masks, unnormalised representations, constant margin.
    Csn,
    /// Simplex masks and normalised representations, constant margin.
    Constrained,
    /// Constrained plus the attribute-overlap margin.
    Global,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Csn, Variant::Constrained, Variant::Global];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Csn => "CSN",
            Variant::Constrained => "CSN + constraints",
            Variant::Global => "CSN + constraints + global similarity",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csn" | "baseline" => Ok(Variant::Csn),
            "constrained" => Ok(Variant::Constrained),
            "global" | "full" => Ok(Variant::Global),
            other => Err(Error::Config(format!(
                "unknown embedding variant `{other}`"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingConfig {
    /// Simplex masks plus normalised representations.
    pub constrained: bool,
    /// Base margin (ζ, and h of the plain triplet loss).
    pub margin: f64,
    /// Weight of the attribute-overlap term in the margin (η).
    pub eta: f64,
    /// L2 penalty on the unnormalised general embedding.
    pub lambda1: f64,
    /// L1 penalty on the active mask.
    pub lambda2: f64,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: StepDecay,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            constrained: true,
            margin: 0.3,
            eta: 0.3,
            lambda1: 5e-4,
            lambda2: 5e-6,
            embedding_dim: 64,
            epochs: 50,
            batch_size: 256,
            learning_rate: StepDecay {
                initial: 0.1,
                factor: 0.5,
                step_every: 20,
            },
            momentum: 0.9,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn for_variant(variant: Variant) -> Self {
        let mut cfg = EmbeddingConfig::default();
        cfg.set_variant(variant);
        cfg
    }

    /// Switches the loss structure, keeping optimisation settings.
    pub fn set_variant(&mut self, variant: Variant) {
        match variant {
            Variant::Csn => {
                self.constrained = false;
                self.eta = 0.0;
            }
            Variant::Constrained => {
                self.constrained = true;
                self.eta = 0.0;
            }
            Variant::Global => {
                self.constrained = true;
                self.eta = self.margin;
            }
        }
    }

    pub fn variant(&self) -> Variant {
        match (self.constrained, self.eta > 0.0) {
            (false, _) => Variant::Csn,
            (true, false) => Variant::Constrained,
            (true, true) => Variant::Global,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad("margin must be positive");
        }
        if !(self.eta >= 0.0 && self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return bad("eta, lambda1 and lambda2 must be non-negative");
        }
        if self.embedding_dim == 0 || self.batch_size == 0 {
            return bad("embedding_dim and batch_size must be positive");
        }
        if !(self.learning_rate.initial > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return bad("learning rate must be positive and momentum in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub input_dim: usize,
    pub embedding_dim: usize,
    pub n_attributes: usize,
    pub constrained: bool,
    /// `embedding_dim × input_dim`, row major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// `n_attributes × embedding_dim`: softmax logits when constrained,
    /// the masks themselves otherwise.
    pub mask_params: Vec<f64>,
}

impl EmbeddingModel {
    pub fn init(
        input_dim: usize,
        embedding_dim: usize,
        n_attributes: usize,
        constrained: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = Normal::new(0.0, (1.0 / input_dim as f64).sqrt()).expect("positive std");
        let weights = (0..embedding_dim * input_dim)
            .map(|_| w.sample(&mut rng))
            .collect();
        let mask_params = if constrained {
            vec![0.0; n_attributes * embedding_dim]
        } else {
            let m = Normal::new(0.9, 0.7).expect("positive std");
            (0..n_attributes * embedding_dim)
                .map(|_| m.sample(&mut rng))
                .collect()
        };
        EmbeddingModel {
            input_dim,
            embedding_dim,
            n_attributes,
            constrained,
            weights,
            bias: vec![0.0; embedding_dim],
            mask_params,
        }
    }

    /// General (unmasked, unnormalised) embedding `G`.
    pub fn general(&self, features: &[f64]) -> Vec<f64> {
        debug_assert_eq!(features.len(), self.input_dim);
        self.weights
            .chunks_exact(self.input_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }

    /// The mask `m_a`.
    pub fn mask(&self, attribute: usize) -> Vec<f64> {
        let params = &self.mask_params[attribute * self.embedding_dim..][..self.embedding_dim];
        if self.constrained {
            softmax(params)
        } else {
            params.to_vec()
        }
    }

    /// Attribute representation used by all distances: `normalize(G ⋆ m_a)` for
    /// constrained models, `G ⋆ m_a` otherwise. A zero masked vector yields
    /// the zero vector.
    pub fn embed(&self, features: &[f64], attribute: usize) -> Vec<f64> {
        let g = self.general(features);
        self.represent(&g, &self.mask(attribute))
    }

    pub fn represent(&self, general: &[f64], mask: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = general.iter().zip(mask).map(|(g, m)| g * m).collect();
        if self.constrained {
            l2_normalize(&u).unwrap_or(u)
        } else {
            u
        }
    }

    /// Distance between two items in an attribute's space.
    pub fn distance(&self, a: &[f64], b: &[f64], attribute: usize) -> f64 {
        euclidean(&self.embed(a, attribute), &self.embed(b, attribute))
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.bias)
            .chain(&self.mask_params)
            .all(|x| x.is_finite())
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// `None` for the zero vector.
pub fn l2_normalize(v: &[f64]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (norm > 0.0).then(|| v.iter().map(|x| x / norm).collect())
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `||G_i ⋆ m − G_j ⋆ m||₂`, optionally normalising each masked vector first.
pub fn masked_distance(gi: &[f64], gj: &[f64], mask: &[f64], normalize: bool) -> f64 {
    let ui: Vec<f64> = gi.iter().zip(mask).map(|(g, m)| g * m).collect();
    let uj: Vec<f64> = gj.iter().zip(mask).map(|(g, m)| g * m).collect();
    if normalize {
        let ei = l2_normalize(&ui).unwrap_or(ui);
        let ej = l2_normalize(&uj).unwrap_or(uj);
        euclidean(&ei, &ej)
    } else {
        euclidean(&ui, &uj)
    }
}

/// `max(0, (|A_x ∩ A_y| − |A_x ∩ A_z|) / E)` where intersections count
/// matching (attribute, value) assignments.
pub fn global_weight(
    ax: &[Option<usize>],
    ay: &[Option<usize>],
    az: &[Option<usize>],
    n_embeddings: usize,
) -> f64 {
    let pos = crate::dataset::shared_labels(ax, ay) as f64;
    let neg = crate::dataset::shared_labels(ax, az) as f64;
    ((pos - neg) / n_embeddings as f64).max(0.0)
}

/// `ζ + η·w`.
pub fn adaptive_margin(
    ax: &[Option<usize>],
    ay: &[Option<usize>],
    az: &[Option<usize>],
    config: &EmbeddingConfig,
) -> f64 {
    config.margin + config.eta * global_weight(ax, ay, az, ax.len())
}

/// Hinge on the difference of masked distances.
pub fn triplet_loss(positive_distance: f64, negative_distance: f64, margin: f64) -> f64 {
    (margin + positive_distance - negative_distance).max(0.0)
}

/// Fraction of triplets whose positive is strictly closer to the anchor than
/// the negative. Ties count as unsatisfied.
pub fn satisfaction_rate(
    model: &EmbeddingModel,
    dataset: &Dataset,
    triplets: &[Triplet],
) -> Result<f64> {
    if triplets.is_empty() {
        return Err(Error::Empty("triplet list"));
    }
    let satisfied = triplets
        .iter()
        .filter(|t| triplet_satisfied(model, dataset, t))
        .count();
    Ok(satisfied as f64 / triplets.len() as f64)
}

pub fn triplet_satisfied(model: &EmbeddingModel, dataset: &Dataset, t: &Triplet) -> bool {
    let f = |i: usize| dataset.item(i).features.as_slice();
    let anchor = model.embed(f(t.anchor), t.attribute);
    let pos = euclidean(&anchor, &model.embed(f(t.positive), t.attribute));
    let neg = euclidean(&anchor, &model.embed(f(t.negative), t.attribute));
    pos < neg
}

/// Satisfaction rate broken down by attribute, in schema order. Attributes
/// without triplets report `None`.
pub fn satisfaction_by_attribute(
    model: &EmbeddingModel,
    dataset: &Dataset,
    triplets: &[Triplet],
) -> Vec<Option<f64>> {
    let mut hits = vec![0usize; model.n_attributes];
    let mut totals = vec![0usize; model.n_attributes];
    for t in triplets {
        totals[t.attribute] += 1;
        if triplet_satisfied(model, dataset, t) {
            hits[t.attribute] += 1;
        }
    }
    hits.iter()
        .zip(&totals)
        .map(|(&h, &n)| (n > 0).then(|| h as f64 / n as f64))
        .collect()
}
