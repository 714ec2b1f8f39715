use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::morphology::CALIBRATED_FEATURE_NAMES;
use crate::neural::{Architecture, EnsembleMode};
use crate::survival::ModelKind;

/// Environment variable that, when set, replaces every seed in the config.
pub const SEED_ENV: &str = "PROGKIT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory with `<id>_ct.nii.gz` and `<id>_pet.nii.gz`.
    pub images: PathBuf,
    /// Directory with binary segmentations `<id>_mask.nii.gz`.
    pub masks: PathBuf,
    /// Optional directory with `{0,1,2}` ground truth `<id>_gtv.nii.gz`.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    pub ehr_csv: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stages {
    pub localize: bool,
    pub features: bool,
    pub classify: bool,
    pub survival: bool,
    pub neural: bool,
    pub evaluate: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Stages {
            localize: true,
            features: true,
            classify: true,
            survival: true,
            neural: true,
            evaluate: true,
        }
    }
}

impl Stages {
    pub fn none() -> Self {
        Stages {
            localize: false,
            features: false,
            classify: false,
            survival: false,
            neural: false,
            evaluate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Seeds {
    pub split: u64,
    pub classifier: u64,
    pub neural: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            split: 0,
            classifier: 0,
            neural: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub c: f64,
    /// `None` uses the `1 / (d * Var(X))` heuristic.
    pub gamma: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { c: 1.0, gamma: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurvivalConfig {
    pub model: ModelKind,
    /// EHR columns used by the fits; empty means every EHR column.
    pub ehr_columns: Vec<String>,
    /// Calibrated tumour descriptors joined to the EHR columns.
    pub features: Vec<String>,
}

impl Default for SurvivalConfig {
    fn default() -> Self {
        SurvivalConfig {
            model: ModelKind::Weibull,
            ehr_columns: Vec::new(),
            features: CALIBRATED_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub lr: f64,
    pub milestones: Vec<usize>,
    pub batch_size: usize,
    /// `None` uses `ceil(sqrt(#events))`.
    pub bins: Option<usize>,
}

impl Default for NeuralConfig {
    fn default() -> Self {
        NeuralConfig {
            architecture: Architecture::MultiPatch,
            epochs: 100,
            lr: 0.016,
            milestones: vec![60, 80],
            batch_size: 16,
            bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    #[serde(default)]
    pub stages: Stages,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_val_frac")]
    pub val_frac: f64,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub survival: SurvivalConfig,
    #[serde(default)]
    pub neural: NeuralConfig,
    #[serde(default)]
    pub ensemble: EnsembleMode,
    /// Per-patient worker threads; `None` uses every logical core.
    #[serde(default)]
    pub workers: Option<usize>,
}

fn default_val_frac() -> f64 {
    0.15
}

impl PipelineConfig {
    pub fn new(paths: Paths) -> Self {
        PipelineConfig {
            paths,
            stages: Stages::default(),
            seeds: Seeds::default(),
            val_frac: default_val_frac(),
            classifier: ClassifierConfig::default(),
            survival: SurvivalConfig::default(),
            neural: NeuralConfig::default(),
            ensemble: EnsembleMode::default(),
            workers: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config; relative paths inside it resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.paths.rebase(base);
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Applies a `dotted.key=value` override; the value is parsed as JSON and
    /// falls back to a plain string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| Error::Config(format!("'{key}': '{part}' is not inside an object")))?;
            if !obj.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), value.clone());
                break;
            }
            node = obj.get_mut(*part).expect("checked");
        }
        *self = serde_json::from_value(root).map_err(|e| Error::Config(format!("override '{assignment}': {e}")))?;
        Ok(())
    }

    pub fn set_all_seeds(&mut self, seed: u64) {
        self.seeds = Seeds {
            split: seed,
            classifier: seed,
            neural: seed,
        };
    }

    /// Honours [`SEED_ENV`] when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            let seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
            self.set_all_seeds(seed);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.val_frac > 0.0 && self.val_frac < 1.0) {
            return Err(Error::Config(format!("val_frac must lie in (0, 1), got {}", self.val_frac)));
        }
        if !(self.classifier.c > 0.0) {
            return Err(Error::Config("classifier.c must be positive".into()));
        }
        if self.classifier.gamma.is_some_and(|g| !(g > 0.0)) {
            return Err(Error::Config("classifier.gamma must be positive".into()));
        }
        let n = &self.neural;
        if n.epochs == 0 || n.batch_size == 0 || !(n.lr >= 0.0) {
            return Err(Error::Config("neural.epochs and neural.batch_size must be >= 1, neural.lr >= 0".into()));
        }
        if n.bins == Some(0) {
            return Err(Error::Config("neural.bins must be >= 1".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if let Some(f) = self.survival.features.iter().find(|f| !CALIBRATED_FEATURE_NAMES.contains(&f.as_str())) {
            return Err(Error::Config(format!(
                "survival.features: unknown feature '{f}' (expected one of {})",
                CALIBRATED_FEATURE_NAMES.join(", ")
            )));
        }
        let s = &self.stages;
        if s.classify && !s.features {
            return Err(Error::Config("stage 'classify' needs 'features'".into()));
        }
        if s.neural && !s.features {
            return Err(Error::Config("stage 'neural' needs 'features'".into()));
        }
        Ok(())
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [&mut self.images, &mut self.masks, &mut self.ehr_csv, &mut self.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(t) = &mut self.truth {
            if t.is_relative() {
                *t = base.join(&*t);
            }
        }
    }
}
