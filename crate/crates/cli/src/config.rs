//! Run configuration: TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use attrsearch_core::dataset::{Split, SyntheticConfig};
use attrsearch_core::dqn::DqnConfig;
use attrsearch_core::embedding::{EmbeddingConfig, Variant};
use attrsearch_core::session::{Strategy, DEFAULT_MAX_STEPS};

use crate::error::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Shortcut for the loss structure; overrides `embedding.constrained` and `embedding.eta`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    pub data: SyntheticConfig,
    pub embedding: EmbeddingConfig,
    pub sampling: SamplingConfig,
    pub dqn: DqnConfig,
    pub bench: BenchConfig,
    pub serve: ServeConfig,
}

/// Triplet and pair counts. Seeds derive from `seed` so that one number
/// reproduces every draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub triplets_per_attribute: usize,
    pub val_triplets_per_attribute: usize,
    pub test_triplets_per_attribute: usize,
    pub platt_pairs_per_attribute: usize,
    pub train_pairs_per_attribute: usize,
    pub test_pairs_per_attribute: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            triplets_per_attribute: 5000,
            val_triplets_per_attribute: 1000,
            test_triplets_per_attribute: 1000,
            platt_pairs_per_attribute: 10_000,
            train_pairs_per_attribute: 2000,
            test_pairs_per_attribute: 125,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    pub fn triplet_seed(&self, split: Split, attribute: usize) -> u64 {
        let offset = match split {
            Split::Train => 0,
            Split::Val => 100,
            Split::Test => 200,
        };
        self.seed * 1000 + offset + attribute as u64
    }

    pub fn platt_seed(&self) -> u64 {
        self.seed + 7
    }

    pub fn test_pair_seed(&self) -> u64 {
        self.seed + 11
    }

    pub fn train_pair_seed(&self) -> u64 {
        self.seed + 12
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub strategies: Vec<Strategy>,
    /// Also benchmark a freshly initialised Q-network.
    pub untrained_dqn: bool,
    pub max_steps: usize,
    pub split: Split,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            strategies: Strategy::ALL.to_vec(),
            untrained_dqn: false,
            max_steps: DEFAULT_MAX_STEPS,
            split: Split::Test,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub addr: String,
    pub strategy: Strategy,
    pub max_steps: usize,
    /// Items searchable in sessions; all items when unset.
    pub split: Option<Split>,
    pub log_dir: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub asset_url: Option<String>,
    pub seed: u64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            addr: "127.0.0.1:8080".into(),
            strategy: Strategy::Fcs,
            max_steps: DEFAULT_MAX_STEPS,
            split: None,
            log_dir: None,
            ui_dir: None,
            asset_url: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
    }

    /// Applies `variant` and validates every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        if let Some(v) = self.variant {
            self.embedding.set_variant(v);
        }
        self.embedding.validate()?;
        self.dqn.validate()?;
        if self.bench.max_steps == 0 || self.serve.max_steps == 0 {
            return Err(CliError::Usage("max_steps must be at least 1".into()));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(
            toml::from_str::<RunConfig>("").unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn serialized_config_parses_back() {
        let mut c = RunConfig::default();
        c.variant = Some(Variant::Csn);
        c.dqn.episodes = 7;
        c.serve.log_dir = Some("sessions".into());
        let text = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[dqn]\nepisodez = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[sampling]\nseed = 1\nfoo = 2\n").is_err());
    }

    #[test]
    fn variant_overrides_loss_fields() {
        let c: RunConfig =
            toml::from_str("variant = \"csn\"\n[embedding]\nconstrained = true\neta = 0.3\n")
                .unwrap();
        let c = c.resolve().unwrap();
        assert!(!c.embedding.constrained);
        assert_eq!(c.embedding.eta, 0.0);
    }
}
