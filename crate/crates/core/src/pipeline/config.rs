use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::ScoreFn;
use crate::cluster::Linkage;
use crate::encoders::EncoderKind;
use crate::error::{Error, Result};
use crate::model::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// Panel CSV; relative paths are taken from the config file's directory.
    pub panel: Option<PathBuf>,
    pub exclude: Vec<String>,
    /// Extension: fill gaps from the previous date instead of rejecting them.
    pub forward_fill: bool,
    pub train_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            panel: None,
            exclude: Vec::new(),
            forward_fill: false,
            train_fraction: 0.7,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusterSection {
    /// Number of groups. Required by `cluster` and `train`.
    pub k: Option<usize>,
    pub linkage: Linkage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub encoder: EncoderKind,
    pub hidden_width: usize,
    pub depth: usize,
    pub score: ScoreFn,
    /// Also train a single-series model per series with the same encoder.
    pub baselines: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderKind::Lstm,
            hidden_width: 16,
            depth: 2,
            score: ScoreFn::Dot,
            baselines: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lookback: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lookback: t.lookback,
            horizon: t.horizon,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Directory for models and reports; relative to the config file.
    pub out_dir: PathBuf,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
        }
    }
}

/// The full run configuration. Every field is optional in the file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub data: DataSection,
    pub cluster: ClusterSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and makes its relative paths absolute with
    /// respect to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn rebase(&mut self, base: &Path) {
        if let Some(p) = &self.data.panel {
            if p.is_relative() {
                self.data.panel = Some(base.join(p));
            }
        }
        if self.eval.out_dir.is_relative() {
            self.eval.out_dir = base.join(&self.eval.out_dir);
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lookback: self.train.lookback,
            horizon: self.train.horizon,
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            hidden_width: self.model.hidden_width,
            depth: self.model.depth,
            encoder: self.model.encoder,
            score: self.model.score,
            seed: self.train.seed,
            beta1: self.train.beta1,
            beta2: self.train.beta2,
            adam_eps: self.train.adam_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie strictly between 0 and 1".into()));
        }
        if self.cluster.k == Some(0) {
            return Err(Error::Config("cluster.k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn panel_path(&self) -> Result<&Path> {
        self.data
            .panel
            .as_deref()
            .ok_or_else(|| Error::Config("data.panel is required".into()))
    }

    pub fn require_k(&self) -> Result<usize> {
        self.cluster
            .k
            .ok_or_else(|| Error::Config("cluster.k is required (number of groups)".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let c = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.train.batch_size, 1);
        assert_eq!(c.train.horizon, 3);
        assert_eq!(c.train.lookback, 12);
        assert_eq!(c.data.train_fraction, 0.7);
        assert!(c.require_k().is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_json(r#"{"trian": {}}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"train": {"epoch": 3}}"#).is_err());
    }

    #[test]
    fn partial_sections_fill_in() {
        let c = PipelineConfig::from_json(r#"{"model": {"encoder": "gru"}, "cluster": {"k": 2}}"#).unwrap();
        assert_eq!(c.model.encoder, EncoderKind::Gru);
        assert_eq!(c.model.hidden_width, 16);
        assert_eq!(c.require_k().unwrap(), 2);
        assert_eq!(c.train_config().encoder, EncoderKind::Gru);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut c = PipelineConfig::from_json(r#"{"data": {"panel": "p.csv"}}"#).unwrap();
        c.rebase(Path::new("/tmp/run"));
        assert_eq!(c.panel_path().unwrap(), Path::new("/tmp/run/p.csv"));
        assert_eq!(c.eval.out_dir, Path::new("/tmp/run/out"));
    }

    #[test]
    fn validation() {
        let mut c = PipelineConfig::default();
        assert!(c.validate().is_ok());
        c.data.train_fraction = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
