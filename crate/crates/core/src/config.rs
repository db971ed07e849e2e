//! Run configuration, read from a TOML file with one table per stage.
//!
//! ```toml
//! seeds = [42, 43, 44]
//!
//! [gen]
//! n_train = 2048
//!
//! [optim]
//! steps = 500
//!
//! [[compress]]
//! dims = { mode = "random", k = 16 }
//! quantize = "int8"
//! ```
//!
//! Every table and key is optional; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compress::{CompressionSpec, DimSelect, Quantize};
use crate::data::GenConfig;
use crate::error::{Error, Result};
use crate::eval::{validate_ks, Direction};
use crate::model::ModelConfig;
use crate::objectives::LossConfig;
use crate::trainer::OptimizerConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnoseConfig {
    /// How many of the most frequent top-1 targets count toward the mass.
    pub attractor_k: usize,
    pub attractor_directions: Vec<Direction>,
}

impl Default for DiagnoseConfig {
    fn default() -> Self {
        Self {
            attractor_k: 3,
            attractor_directions: Direction::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Training seeds. Each drives model init, batch order and hard-negative
    /// draws; the corpus is fixed by `gen.seed`.
    pub seeds: Vec<u64>,
    pub gen: GenConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimizerConfig,
    pub eval: EvalConfig,
    pub compress: Vec<CompressionSpec>,
    pub diagnose: DiagnoseConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = |dims, quantize| CompressionSpec {
            dims,
            quantize,
            seed: 0,
        };
        Self {
            seeds: vec![42, 43, 44],
            gen: GenConfig::default(),
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            optim: OptimizerConfig::default(),
            eval: EvalConfig::default(),
            compress: vec![
                spec(DimSelect::None, Quantize::Fp32),
                spec(DimSelect::None, Quantize::Int8),
                spec(DimSelect::Front { k: 16 }, Quantize::Fp32),
                spec(DimSelect::Random { k: 16 }, Quantize::Fp32),
                spec(DimSelect::Random { k: 16 }, Quantize::Int8),
                spec(DimSelect::None, Quantize::Binary),
                spec(DimSelect::Random { k: 16 }, Quantize::Binary),
            ],
            diagnose: DiagnoseConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.gen.validate()?;
        self.model.validate()?;
        self.loss.validate()?;
        self.optim.validate()?;
        validate_ks(&self.eval.ks)?;
        if self.gen.input_dim != self.model.input_dim {
            return Err(Error::Config(format!(
                "generator widths {:?} do not match model input widths {:?}",
                self.gen.input_dim, self.model.input_dim
            )));
        }
        for spec in &self.compress {
            spec.output_dim(self.model.embed_dim)
                .map_err(|e| Error::Config(format!("compression `{}`: {e}", spec.label())))?;
        }
        if self.diagnose.attractor_k == 0 {
            return Err(Error::Config("attractor_k must be positive".into()));
        }
        Ok(())
    }

    /// Model and optimizer configs for one training seed.
    pub fn for_seed(&self, seed: u64) -> (ModelConfig, OptimizerConfig) {
        (
            ModelConfig {
                seed,
                ..self.model.clone()
            },
            OptimizerConfig {
                seed,
                ..self.optim.clone()
            },
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
        assert_eq!(RunConfig::default().seeds, vec![42, 43, 44]);
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::from_toml_str(
            r#"
            seeds = [7]
            [optim]
            kind = "sgd"
            lr = 0.5
            [[compress]]
            dims = { mode = "front", k = 8 }
            quantize = "binary"
            [diagnose]
            attractor_directions = ["a->t"]
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.optim.lr, 0.5);
        assert_eq!(cfg.optim.batch_size, 64);
        assert_eq!(cfg.compress.len(), 1);
        assert_eq!(cfg.diagnose.attractor_directions, vec![Direction::ALL[3]]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in ["bogus = 1", "[optim]\nlearning_rate = 0.1", "[extra]\nx = 1"] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert_eq!(err.kind(), "config", "{text}");
        }
    }

    #[test]
    fn mismatched_widths_are_rejected() {
        let err = RunConfig::from_toml_str("[model]\ninput_dim = [8, 16, 16]").unwrap_err();
        assert!(err.to_string().contains("do not match"));
    }

    #[test]
    fn oversized_compression_is_rejected() {
        let text = "[[compress]]\ndims = { mode = \"random\", k = 64 }";
        assert!(RunConfig::from_toml_str(text).is_err());
    }
}
