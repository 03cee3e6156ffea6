use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::models::{Backbone, ModelSpec, SarVariant};
use crate::trainer::TrainConfig;

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default data root.
pub const DATA_ENV: &str = "SLATE_RANK_DATA";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Source {
    #[default]
    #[serde(rename = "synth")]
    Synth,
    #[serde(rename = "movielens")]
    MovieLens,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EvalSplit {
    #[serde(rename = "val")]
    Val,
    #[default]
    #[serde(rename = "test")]
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: Source,
    /// Directory holding `ratings.dat` and `movies.dat`; relative paths
    /// resolve against the data root. Defaults to `<root>/ml-1m`.
    pub movielens: Option<PathBuf>,
    /// Slate length for MovieLens; synthetic data use `synth.slate_size`.
    pub slate_size: Option<usize>,
    /// Prepared dataset directory read by train, eval and sweep.
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub split: EvalSplit,
    pub batch_size: usize,
    /// Compute encoder alignment statistics (implied by an embedding export).
    pub alignment: bool,
    /// Top-K length for the diversity comparison.
    pub k: usize,
    pub pool_size: usize,
    pub users: usize,
    /// Ranking weight per task; empty uses the defaults.
    pub merge_weights: Vec<f64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            split: EvalSplit::Test,
            batch_size: 1024,
            alignment: false,
            k: 10,
            pool_size: 100,
            users: 200,
            merge_weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Similarity weight as a multiple of the click task weight.
    pub grid: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            grid: vec![0.0, 0.25, 1.0, 4.0],
            seeds: vec![1, 2, 3],
        }
    }
}

fn default_model() -> ModelSpec {
    ModelSpec::new(Backbone::Ncf, SarVariant::None)
}

fn default_seed() -> u64 {
    1
}

/// Declarative run description, read from TOML.
///
/// The top-level `seed` drives everything: the synthetic generator, the
/// split, initialization and shuffling each get a derived sub-seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Train a slate-aware teacher, then a slate-blind student from it.
    #[serde(default)]
    pub distill: bool,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            seed: default_seed(),
            distill: false,
            data: DataSection::default(),
            synth: SynthConfig::default(),
            model: default_model(),
            train: TrainConfig::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(format!("{}: {e}", path.display())))?;
        for section in ["train", "synth"] {
            if table.get(section).and_then(|v| v.get("seed")).is_some() {
                return Err(Error::Config(format!(
                    "{}: `{section}.seed` is not allowed; set the top-level `seed`",
                    path.display()
                )));
            }
        }
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "{}: schema_version {} is not supported (expected {RUN_SCHEMA_VERSION})",
                path.display(),
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Train settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

/// Resolves a relative path against the data root when one is set.
pub fn under_data_root(path: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if path.is_relative() => r.join(path),
        _ => path.to_path_buf(),
    }
}
