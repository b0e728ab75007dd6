//! The single TOML configuration document shared by every command. Each
//! section has complete defaults; unknown keys are rejected so typos fail
//! loudly instead of silently running a different experiment.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::AlignConfig;
use crate::digest::config_digest;
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::BackboneConfig;
use crate::rnn::RnnConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Traversals per scenario: 3 is the desk preset, 19 approximates the
    /// full corpus.
    pub traversals: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { traversals: 3 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Weight of the forecast NMSE term in the joint loss.
    pub lambda_nmse: f64,
    /// Early-stop patience on validation top-1, in epochs.
    pub patience: usize,
    /// Train encoders even when initialized from a checkpoint.
    pub unfreeze_encoders: bool,
    /// When nonzero, train on this many windows only (overfit sanity mode).
    pub overfit_windows: usize,
    pub rnn: RnnConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-3,
            batch_size: 64,
            lambda_nmse: 1.0,
            patience: 5,
            unfreeze_encoders: false,
            overfit_windows: 0,
            rnn: RnnConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train epochs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("train lr must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train batch size must be positive".into()));
        }
        if !(self.lambda_nmse >= 0.0 && self.lambda_nmse.is_finite()) {
            return Err(Error::Config("lambda_nmse must be nonnegative".into()));
        }
        self.rnn.validate()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Split preset: "S4", "S6", or "custom".
    pub split: String,
    /// Fraction of train-scenario windows held out for early stopping.
    pub val_fraction: f64,
    /// Train scenario ids when split = "custom".
    pub custom_train: Vec<u8>,
    /// Test scenario ids when split = "custom".
    pub custom_test: Vec<u8>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split: "S4".to_string(),
            val_fraction: 0.1,
            custom_train: Vec::new(),
            custom_test: Vec::new(),
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        match self.split.as_str() {
            "S4" | "S6" => Ok(()),
            "custom" => {
                if self.custom_train.is_empty() || self.custom_test.is_empty() {
                    return Err(Error::Config(
                        "custom split needs custom_train and custom_test scenario ids".into(),
                    ));
                }
                Ok(())
            }
            other => Err(Error::Config(format!("unknown split {other:?} (S4|S6|custom)"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub encoders: EncoderConfig,
    pub align: AlignConfig,
    pub backbone: BackboneConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.data.traversals == 0 {
            return Err(Error::Config("data traversals must be positive".into()));
        }
        self.encoders.validate()?;
        self.align.validate()?;
        self.backbone.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.encoders.d_model != self.backbone.d_model {
            return Err(Error::Config(format!(
                "encoder d_model {} must equal backbone d_model {}",
                self.encoders.d_model, self.backbone.d_model
            )));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Content hash recorded in every output file.
    pub fn digest(&self) -> Result<String> {
        config_digest(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::Anchor;

    #[test]
    fn default_document_is_valid_and_stable() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let d1 = cfg.digest().unwrap();
        let d2 = RunConfig::default().digest().unwrap();
        assert_eq!(d1, d2);
        assert_eq!(d1.len(), 16);
    }

    #[test]
    fn empty_toml_gives_defaults() {
        let cfg = RunConfig::from_toml("").unwrap();
        assert_eq!(cfg.backbone.d_model, 128);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.eval.split, "S4");
        assert_eq!(cfg.align.anchor, Anchor::Beam);
    }

    #[test]
    fn partial_sections_merge_with_defaults() {
        let cfg = RunConfig::from_toml(
            "seed = 99\n[align]\nanchor = \"joint\"\n[train]\nepochs = 3\n[train.rnn]\nhidden = 32\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 99);
        assert_eq!(cfg.align.anchor, Anchor::Joint);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.rnn.hidden, 32);
        assert_eq!(cfg.train.lr, 1e-3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in [
            "bogus = 1\n",
            "[train]\nlearning_rate = 0.1\n",
            "[encoders]\nwidth = 4\n",
        ] {
            let err = RunConfig::from_toml(doc).err().unwrap();
            assert_eq!(err.exit_code(), 2, "{doc}");
        }
    }

    #[test]
    fn cross_field_and_range_validation() {
        let err = RunConfig::from_toml("[encoders]\nd_model = 64\n").err().unwrap();
        assert_eq!(err.exit_code(), 2);

        assert!(RunConfig::from_toml("[eval]\nsplit = \"S5\"\n").is_err());
        assert!(RunConfig::from_toml("[eval]\nsplit = \"custom\"\n").is_err());
        assert!(RunConfig::from_toml(
            "[eval]\nsplit = \"custom\"\ncustom_train = [1]\ncustom_test = [2]\n"
        )
        .is_ok());
        assert!(RunConfig::from_toml("[train]\nepochs = 0\n").is_err());
        assert!(RunConfig::from_toml("[backbone]\nd_model = 10\n").is_err());
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default().digest().unwrap();
        let b = RunConfig::from_toml("seed = 1\n").unwrap().digest().unwrap();
        assert_ne!(a, b);
    }
}
