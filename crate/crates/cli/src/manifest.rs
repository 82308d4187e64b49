//! The per-run manifest: identity, seeds, dataset statistics, timing and artifacts.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use skd_core::checkpoint::write_atomic;
use skd_core::data::LabeledImageDataset;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const DIVERGED_CHECKPOINT_DIR: &str = "checkpoint-diverged";
pub const LOGITS_FILE: &str = "test_logits.txt";
pub const EVAL_FILE: &str = "eval.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Diverged,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_hash: String,
    pub version: String,
    pub status: RunStatus,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub epochs_completed: usize,
    pub final_test_top1: Option<f64>,
    pub error: Option<String>,
    pub seeds: Seeds,
    pub dataset: DatasetStats,
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    /// Model and auxiliary-classifier initialization.
    pub init: u64,
    pub shuffle: u64,
    /// Root of the per-epoch augmentation streams.
    pub augmentation: u64,
    pub dataset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub name: String,
    pub num_classes: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Channels, height, width.
    pub image_shape: [usize; 3],
    pub channel_mean: Vec<f64>,
    pub channel_std: Vec<f64>,
    pub train_class_counts: Vec<usize>,
}

impl DatasetStats {
    pub fn of(data: &LabeledImageDataset) -> Self {
        Self {
            name: data.name.clone(),
            num_classes: data.num_classes,
            train_samples: data.train.len(),
            test_samples: data.test.len(),
            image_shape: [data.train.channels, data.train.height, data.train.width],
            channel_mean: data.stats.mean.clone(),
            channel_std: data.stats.std.clone(),
            train_class_counts: data.train.class_counts(),
        }
    }
}

pub fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn version() -> String {
    format!("skd {}", env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> anyhow::Result<()> {
        let text = toml::to_string(self)?;
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> anyhow::Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))
    }
}
