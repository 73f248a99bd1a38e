use std::path::{Path, PathBuf};

use hce_core::losses::LossConfig;
use hce_core::manifold::Curvature;
use hce_core::model::ModelDims;
use hce_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

/// Encoder sizes and geometry; data-dependent sizes come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub tag_dim: usize,
    pub embed_dim: usize,
    /// Hidden width of both encoders; `2 * embed_dim` when absent.
    pub hidden_dim: Option<usize>,
    pub curvature: Curvature,
    pub cone_k: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tag_dim: 32,
            embed_dim: 16,
            hidden_dim: None,
            curvature: Curvature::default(),
            cone_k: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn dims(&self, vocab_size: usize, feature_dim: usize) -> ModelDims {
        let mut dims = ModelDims::new(vocab_size, feature_dim, self.tag_dim, self.embed_dim);
        if let Some(h) = self.hidden_dim {
            dims.hidden_dim = h;
        }
        dims
    }
}

/// Everything `hce train` needs. Relative paths resolve against the
/// working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Records file (JSON lines).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Output directory for checkpoints and logs.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Minimum training-split frequency for a tag to enter the vocabulary.
    #[serde(default = "default_min_count")]
    pub min_count: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: LossConfig,
}

fn default_min_count() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: None,
            min_count: default_min_count(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
