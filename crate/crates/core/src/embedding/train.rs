use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::{csn_loss, satisfaction_rate, EmbeddingConfig, EmbeddingModel};
use crate::dataset::Dataset;
use crate::optim::Momentum;
use crate::sampling::Triplet;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    pub validation_rate: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    /// Validation rate of the initial parameters.
    pub initial_validation_rate: Option<f64>,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned; 0 means the initialisation.
    pub selected_epoch: usize,
}

/// Mini-batch SGD over `train_triplets`. The returned model is the epoch with
/// the best validation satisfaction rate (the last epoch when no validation
/// triplets are given).
pub fn train(
    dataset: &Dataset,
    train_triplets: &[Triplet],
    val_triplets: &[Triplet],
    config: &EmbeddingConfig,
) -> Result<(EmbeddingModel, TrainingLog)> {
    config.validate()?;
    let mut model = EmbeddingModel::init(
        dataset.dim(),
        config.embedding_dim,
        dataset.schema().len(),
        config.constrained,
        config.seed,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11_5eed);
    let mut opt = Momentum::new(config.momentum);
    let validate = |m: &EmbeddingModel| -> Option<f64> {
        (!val_triplets.is_empty())
            .then(|| satisfaction_rate(m, dataset, val_triplets).unwrap_or(0.0))
    };

    let mut log = TrainingLog {
        initial_validation_rate: validate(&model),
        ..Default::default()
    };
    let mut best = (log.initial_validation_rate, model.clone(), 0);
    let mut order: Vec<usize> = (0..train_triplets.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);

    for epoch in 1..=config.epochs {
        let lr = config.learning_rate.rate(epoch - 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_triplets[i]));
            let (loss, grads) = csn_loss(&model, dataset, &batch, config);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss {loss} in epoch {epoch}, batch {batches}"
                )));
            }
            opt.step(
                &mut [
                    (&mut model.weights[..], &grads.weights[..]),
                    (&mut model.bias[..], &grads.bias[..]),
                    (&mut model.mask_params[..], &grads.mask_params[..]),
                ],
                lr,
            );
            loss_sum += loss;
            batches += 1;
        }
        if !model.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite parameters after epoch {epoch}"
            )));
        }
        let rate = validate(&model);
        let mean_loss = if batches > 0 {
            loss_sum / batches as f64
        } else {
            0.0
        };
        debug!(epoch, lr, mean_loss, ?rate, "embedding epoch");
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            mean_loss,
            validation_rate: rate,
        });
        let improved = match (rate, best.0) {
            (Some(r), Some(b)) => r > b,
            (None, _) => true,
            (Some(_), None) => true,
        };
        if improved {
            best = (rate, model.clone(), epoch);
        }
    }
    log.selected_epoch = best.2;
    Ok((best.1, log))
}
