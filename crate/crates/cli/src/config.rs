use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use stockqa::model::{ModelConfig, Variant};
use stockqa::retrieval::RetrievalConfig;
use stockqa::tokenizer::TokenizerConfig;
use stockqa::training::TrainConfig;

use crate::error::CliError;

/// Merged settings of one run: defaults, then the config file, then flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub tokenizer: TokenizerConfig,
    /// Root that relative paths resolve against.
    pub data_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            tokenizer: TokenizerConfig::default(),
            data_dir: PathBuf::from("."),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub hybrid_retrieval: bool,
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn load(file: Option<&Path>, o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match file {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        cfg.apply(o);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
        }
        if let Some(v) = o.variant {
            self.model.variant = v;
        }
        if o.hybrid_retrieval {
            self.model.hybrid_retrieval = true;
        }
        if let Some(d) = &o.data_dir {
            self.data_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        for (field, w) in [
            ("retrieval.question_weight", self.retrieval.question_weight),
            ("retrieval.trend_weight", self.retrieval.trend_weight),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CliError::config(field, format!("{w} is not a finite non-negative weight")));
            }
        }
        if self.tokenizer.vocab_cap <= stockqa::tokenizer::RESERVED {
            return Err(CliError::config("tokenizer.vocab_cap", "must exceed the reserved token count"));
        }
        if self.model.hybrid_retrieval && self.model.variant == Variant::Sequential {
            return Err(CliError::config("hybrid_retrieval", "requires the hybrid variant"));
        }
        Ok(())
    }

    /// `p` itself when absolute, otherwise `p` under the data root.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }
}
