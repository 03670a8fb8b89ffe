//! Self-describing JSON checkpoints. Floats are written in shortest
//! round-trip form, so save → load reproduces every parameter exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Schema};
use crate::dqn::{DqnConfig, DqnLog, QNetwork};
use crate::eer::PlattSet;
use crate::embedding::{EmbeddingConfig, EmbeddingModel, TrainingLog};
use crate::{Error, Result};

pub const EMBEDDING_FORMAT: &str = "attrsearch-embedding";
pub const PLATT_FORMAT: &str = "attrsearch-platt";
pub const DQN_FORMAT: &str = "attrsearch-dqn";
pub const VERSION: u32 = 1;

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string(value).map_err(|e| Error::Checkpoint(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn check_format(found: &str, version: u32, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Checkpoint(format!(
            "expected a {expected} file, found {found:?}"
        )));
    }
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported {expected} version {version}"
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCheckpoint {
    pub format: String,
    pub version: u32,
    pub schema: Schema,
    pub schema_fingerprint: String,
    pub model: EmbeddingModel,
    pub config: EmbeddingConfig,
    pub log: TrainingLog,
    /// Resolved run configuration (dataset path, seeds, ...).
    #[serde(default)]
    pub run: serde_json::Value,
}

impl EmbeddingCheckpoint {
    pub fn new(
        schema: Schema,
        model: EmbeddingModel,
        config: EmbeddingConfig,
        log: TrainingLog,
        run: serde_json::Value,
    ) -> Self {
        EmbeddingCheckpoint {
            format: EMBEDDING_FORMAT.into(),
            version: VERSION,
            schema_fingerprint: schema.fingerprint(),
            schema,
            model,
            config,
            log,
            run,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = read_json(path)?;
        check_format(&ck.format, ck.version, EMBEDDING_FORMAT)?;
        if ck.schema.fingerprint() != ck.schema_fingerprint {
            return Err(Error::Checkpoint(
                "schema fingerprint does not match the stored schema".into(),
            ));
        }
        let m = &ck.model;
        if m.n_attributes != ck.schema.len()
            || m.weights.len() != m.input_dim * m.embedding_dim
            || m.bias.len() != m.embedding_dim
            || m.mask_params.len() != m.n_attributes * m.embedding_dim
        {
            return Err(Error::Checkpoint(
                "model parameter shapes are inconsistent".into(),
            ));
        }
        if !m.is_finite() {
            return Err(Error::Checkpoint("model has non-finite parameters".into()));
        }
        Ok(ck)
    }

    /// Errors unless the dataset has this checkpoint's schema and input width.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.schema().fingerprint() != self.schema_fingerprint {
            return Err(Error::Checkpoint(
                "dataset schema differs from the checkpoint's".into(),
            ));
        }
        if dataset.dim() != self.model.input_dim {
            return Err(Error::Checkpoint(format!(
                "dataset has {} features, model expects {}",
                dataset.dim(),
                self.model.input_dim
            )));
        }
        Ok(())
    }
}

/// Platt calibration stored next to an embedding checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlattCheckpoint {
    pub format: String,
    pub version: u32,
    pub schema_fingerprint: String,
    pub platt: PlattSet,
    pub pairs_per_attribute: usize,
    pub seed: u64,
}

impl PlattCheckpoint {
    pub fn new(schema: &Schema, platt: PlattSet, pairs_per_attribute: usize, seed: u64) -> Self {
        PlattCheckpoint {
            format: PLATT_FORMAT.into(),
            version: VERSION,
            schema_fingerprint: schema.fingerprint(),
            platt,
            pairs_per_attribute,
            seed,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = read_json(path)?;
        check_format(&ck.format, ck.version, PLATT_FORMAT)?;
        Ok(ck)
    }
}

/// `model.json` → `model.platt.json`.
pub fn platt_sidecar_path(embedding_path: impl AsRef<Path>) -> PathBuf {
    let p = embedding_path.as_ref();
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    p.with_file_name(format!("{stem}.platt.json"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DqnCheckpoint {
    pub format: String,
    pub version: u32,
    pub schema_fingerprint: String,
    pub embedding_dim: usize,
    pub n_attributes: usize,
    pub network: QNetwork,
    pub config: DqnConfig,
    pub log: DqnLog,
    #[serde(default)]
    pub run: serde_json::Value,
}

impl DqnCheckpoint {
    pub fn new(
        schema: &Schema,
        embedding_dim: usize,
        network: QNetwork,
        config: DqnConfig,
        log: DqnLog,
        run: serde_json::Value,
    ) -> Self {
        DqnCheckpoint {
            format: DQN_FORMAT.into(),
            version: VERSION,
            schema_fingerprint: schema.fingerprint(),
            embedding_dim,
            n_attributes: schema.len(),
            network,
            config,
            log,
            run,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let ck: Self = read_json(path)?;
        check_format(&ck.format, ck.version, DQN_FORMAT)?;
        let slots = ck.config.candidates_per_attribute;
        let net = &ck.network;
        let shapes_ok = net.input_dim() == slots * ck.embedding_dim + ck.n_attributes
            && net.actions() == slots
            && net
                .layers
                .iter()
                .all(|l| l.weights.len() == l.inputs * l.outputs && l.bias.len() == l.outputs)
            && net.layers[0].outputs == net.layers[1].inputs
            && net.layers[1].outputs == net.layers[2].inputs;
        if !shapes_ok {
            return Err(Error::Checkpoint(
                "Q-network shapes are inconsistent".into(),
            ));
        }
        if !net.is_finite() {
            return Err(Error::Checkpoint(
                "Q-network has non-finite parameters".into(),
            ));
        }
        Ok(ck)
    }

    /// Errors unless this network was trained against `embedding`.
    pub fn check_embedding(&self, embedding: &EmbeddingCheckpoint) -> Result<()> {
        if self.schema_fingerprint != embedding.schema_fingerprint
            || self.embedding_dim != embedding.model.embedding_dim
        {
            return Err(Error::Checkpoint(
                "Q-network does not match the embedding checkpoint".into(),
            ));
        }
        Ok(())
    }
}
