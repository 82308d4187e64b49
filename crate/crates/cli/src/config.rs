//! Run configuration files: parsing, validation with line numbers, and resolution.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skd_core::analysis::VarianceSpace;
use skd_core::data::{BatchPlan, DATASETS};
use skd_core::model::{model_spec, REGISTERED_MODELS};
use skd_core::optim::LrSchedule;
use skd_core::train::SrFirstStep;
use skd_core::{Method, TapPoint, Temperature, TrainingConfig};

pub const RESOLVED_CONFIG_FILE: &str = "config.toml";

/// A rejected configuration, pointing at the offending line when it can be found.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{line}: {}", self.path.display(), self.message),
            None => write!(f, "{}: {}", self.path.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// The on-disk run description. Every key is optional; missing keys take the desk-protocol defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: String,
    /// Only the synthetic generator reads it.
    pub dataset_seed: u64,
    pub model: String,
    pub method: String,
    pub tap: usize,
    /// Auxiliary conv width; twice the tapped width when absent.
    pub ac_channels: Option<usize>,
    pub tau_drg: f64,
    pub tau_dsr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// RandomCrop + RandomHorizontalFlip on the train split.
    pub augment: bool,
    pub output_dir: PathBuf,
    pub lr: LrSection,
    pub flags: Flags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSection {
    pub initial: f64,
    /// 0-based epochs at which the rate is multiplied by `factor`.
    pub milestones: Vec<usize>,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub teacher_detach: bool,
    pub sr_first_step: String,
    pub deterministic: bool,
    pub variance_space: String,
    pub drop_last: bool,
}

impl Default for RunConfigFile {
    fn default() -> Self {
        let desk = TrainingConfig::desk(Method::Combined);
        Self {
            dataset: "synthetic-gaussian-10".into(),
            dataset_seed: 0,
            model: "micro-resnet-3block".into(),
            method: desk.method.as_str().into(),
            tap: desk.tap.0,
            ac_channels: None,
            tau_drg: desk.tau_drg.value(),
            tau_dsr: desk.tau_dsr.value(),
            alpha: desk.alpha,
            beta: desk.beta,
            epochs: desk.epochs,
            batch_size: desk.batch.batch_size,
            momentum: desk.momentum,
            weight_decay: desk.weight_decay,
            seed: desk.seed,
            augment: true,
            output_dir: PathBuf::from("runs"),
            lr: LrSection::default(),
            flags: Flags::default(),
        }
    }
}

impl Default for LrSection {
    fn default() -> Self {
        let s = TrainingConfig::desk(Method::Combined).schedule;
        Self { initial: s.initial, milestones: s.milestones, factor: s.factor }
    }
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            teacher_detach: false,
            sr_first_step: SrFirstStep::Skip.as_str().into(),
            deterministic: true,
            variance_space: "logits".into(),
            drop_last: false,
        }
    }
}

/// A validated configuration ready to run.
#[derive(Clone, Debug)]
pub struct ResolvedRun {
    pub file: RunConfigFile,
    pub training: TrainingConfig,
}

impl ResolvedRun {
    /// The fully expanded configuration as TOML; this is what gets written next to the outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("config serializes")
    }

    /// Hash of everything that affects the run's numbers; the output location is excluded.
    pub fn config_hash(&self) -> String {
        let mut identity = self.file.clone();
        identity.output_dir = PathBuf::new();
        let text = toml::to_string(&identity).expect("config serializes");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    pub fn run_id(&self) -> String {
        format!("run-{}", &self.config_hash()[..16])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.file.output_dir.join(self.run_id())
    }
}

pub fn parse(text: &str, path: &Path) -> Result<RunConfigFile, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        line: e.span().map(|s| line_at(text, s.start)),
        message: e.message().to_string(),
    })
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `section` (`""` for the top level), if written explicitly.
fn line_of_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if current == section && k.trim() == key {
            return Some(i + 1);
        }
    }
    None
}

/// Checks every field and builds the trainer configuration. `source` is the file text, used for line numbers.
pub fn resolve(file: RunConfigFile, source: &str, path: &Path) -> Result<ResolvedRun, ConfigError> {
    let fail = |section: &str, key: &str, message: String| ConfigError {
        path: path.to_path_buf(),
        line: line_of_key(source, section, key),
        message: format!("{key}: {message}"),
    };
    if !DATASETS.contains(&file.dataset.as_str()) {
        return Err(fail(
            "",
            "dataset",
            format!("unknown dataset `{}`; available: {}", file.dataset, DATASETS.join(", ")),
        ));
    }
    if !REGISTERED_MODELS.contains(&file.model.as_str()) {
        return Err(fail(
            "",
            "model",
            format!("unknown model `{}`; available: {}", file.model, REGISTERED_MODELS.join(", ")),
        ));
    }
    let method: Method = file.method.parse().map_err(|e: skd_core::Error| fail("", "method", e.to_string()))?;
    let temperature = |key: &str, v: f64| Temperature::new(v).map_err(|e| fail("", key, e.to_string()));
    let tau_drg = temperature("tau_drg", file.tau_drg)?;
    let tau_dsr = temperature("tau_dsr", file.tau_dsr)?;
    for (key, v) in [("alpha", file.alpha), ("beta", file.beta)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(fail("", key, format!("must be finite and >= 0, got {v}")));
        }
    }
    if file.epochs == 0 {
        return Err(fail("", "epochs", "must be >= 1".into()));
    }
    if file.batch_size == 0 {
        return Err(fail("", "batch_size", "must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&file.momentum) {
        return Err(fail("", "momentum", format!("must be in [0, 1), got {}", file.momentum)));
    }
    if !(file.weight_decay.is_finite() && file.weight_decay >= 0.0) {
        return Err(fail("", "weight_decay", format!("must be finite and >= 0, got {}", file.weight_decay)));
    }
    let blocks = model_spec(&file.model, 2, 3).map_err(|e| fail("", "model", e.to_string()))?.num_blocks();
    if method.uses_aux() {
        TapPoint(file.tap).validate(blocks).map_err(|e| fail("", "tap", e.to_string()))?;
    }
    if file.ac_channels == Some(0) {
        return Err(fail("", "ac_channels", "must be >= 1".into()));
    }
    let schedule =
        LrSchedule { initial: file.lr.initial, milestones: file.lr.milestones.clone(), factor: file.lr.factor };
    schedule.validate(file.epochs).map_err(|e| {
        let key = if e.to_string().contains("milestone") {
            "milestones"
        } else if e.to_string().contains("factor") {
            "factor"
        } else {
            "initial"
        };
        fail("lr", key, e.to_string())
    })?;
    let sr_first_step: SrFirstStep =
        file.flags.sr_first_step.parse().map_err(|e: skd_core::Error| fail("flags", "sr_first_step", e.to_string()))?;
    let variance_space = match file.flags.variance_space.as_str() {
        "logits" => VarianceSpace::Logits,
        "probabilities" => VarianceSpace::Probabilities,
        other => {
            return Err(fail(
                "flags",
                "variance_space",
                format!("unknown space `{other}`; available: logits, probabilities"),
            ))
        }
    };

    let mut training = TrainingConfig::desk(method);
    training.epochs = file.epochs;
    training.schedule = schedule;
    training.momentum = file.momentum;
    training.weight_decay = file.weight_decay;
    training.tau_drg = tau_drg;
    training.tau_dsr = tau_dsr;
    training.alpha = file.alpha;
    training.beta = file.beta;
    training.tap = TapPoint(file.tap);
    training.ac_channels = file.ac_channels;
    training.batch =
        BatchPlan { batch_size: file.batch_size, shuffle_seed: file.seed, drop_last: file.flags.drop_last };
    training.seed = file.seed;
    training.teacher_detach = file.flags.teacher_detach;
    training.sr_first_step = sr_first_step;
    training.variance_space = variance_space;
    training.deterministic = file.flags.deterministic;
    training.validate().map_err(|e| ConfigError { path: path.to_path_buf(), line: None, message: e.to_string() })?;
    Ok(ResolvedRun { file, training })
}

/// Reads, validates and applies command-line overrides.
pub fn load_resolved(path: &Path, out: Option<&Path>, seed: Option<u64>) -> anyhow::Result<ResolvedRun> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow::Error::new(e).context(format!("reading {}", path.display())))?;
    let mut file = parse(&text, path)?;
    if let Some(out) = out {
        file.output_dir = out.to_path_buf();
    }
    if let Some(seed) = seed {
        file.seed = seed;
    }
    Ok(resolve(file, &text, path)?)
}
