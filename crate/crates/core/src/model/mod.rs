//! Memory-augmented encoder-decoder with character-level number handling.

mod batch;
mod graph;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::FEATURE_COUNT;
use crate::numerics::{load_checkpoint, save_checkpoint, xavier_uniform, NumericError, ParamStore, Tensor};
use crate::tokenizer::{CharVocab, TokenizeError};

pub use batch::{Batch, Example};
pub use graph::{Encoded, Graph, LossVars, StepOut, MASK_PENALTY};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid config field {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Tokenize(#[from] TokenizeError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Number characters inlined into the word-level token streams.
    Sequential,
    /// Numbers as `<num>` placeholders read and written by character networks.
    #[default]
    Hybrid,
}

impl std::str::FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Variant::Sequential),
            "hybrid" => Ok(Variant::Hybrid),
            other => Err(format!("unknown variant {other:?} (expected sequential or hybrid)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    pub word_emb: usize,
    pub key_dim: usize,
    pub value_dim: usize,
    pub char_emb: usize,
    pub char_enc_hidden: usize,
    pub char_dec_hidden: usize,
    /// Width of the additive attention layers.
    pub attn_dim: usize,
    pub lambda: f64,
    pub variant: Variant,
    pub hybrid_retrieval: bool,
    /// Feed the memory read to the character decoder at every step, not only at initialization.
    pub char_step_memory: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            enc_hidden: 128,
            dec_hidden: 256,
            word_emb: 128,
            key_dim: 128,
            value_dim: 128,
            char_emb: 32,
            char_enc_hidden: 64,
            char_dec_hidden: 128,
            attn_dim: 128,
            lambda: 1.0,
            variant: Variant::Hybrid,
            hybrid_retrieval: false,
            char_step_memory: false,
        }
    }
}

impl ModelConfig {
    /// Every dimension set to `d`.
    pub fn uniform(d: usize, variant: Variant) -> Self {
        ModelConfig {
            enc_hidden: d,
            dec_hidden: d,
            word_emb: d,
            key_dim: d,
            value_dim: d,
            char_emb: d,
            char_enc_hidden: d,
            char_dec_hidden: d,
            attn_dim: d,
            variant,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (field, v) in [
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
            ("word_emb", self.word_emb),
            ("key_dim", self.key_dim),
            ("value_dim", self.value_dim),
            ("char_emb", self.char_emb),
            ("char_enc_hidden", self.char_enc_hidden),
            ("char_dec_hidden", self.char_dec_hidden),
            ("attn_dim", self.attn_dim),
        ] {
            if v == 0 {
                return Err(ModelError::Config { field, message: "must be positive".into() });
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ModelError::Config { field: "lambda", message: format!("{} is not a finite non-negative value", self.lambda) });
        }
        Ok(())
    }

    /// Width of the annotation vectors `[forward; backward]`.
    pub fn annotation_dim(&self) -> usize {
        2 * self.enc_hidden
    }

    /// Width of the output layer input.
    pub fn output_input_dim(&self) -> usize {
        let base = self.word_emb + self.dec_hidden + self.annotation_dim() + self.value_dim;
        if self.hybrid_retrieval {
            base + self.annotation_dim()
        } else {
            base
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    config: ModelConfig,
    src_vocab: usize,
    tgt_vocab: usize,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    src_vocab: usize,
    tgt_vocab: usize,
}

fn lstm_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, hidden: usize, scale: f64) {
    store.insert(format!("{prefix}.w"), scaled(xavier_uniform(rng, input + hidden, 4 * hidden), scale));
    let mut b = Tensor::zeros(&[1, 4 * hidden]);
    b.data_mut()[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
    store.insert(format!("{prefix}.b"), b);
}

fn linear_params(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, input: usize, output: usize, scale: f64) {
    store.insert(format!("{prefix}.w"), scaled(xavier_uniform(rng, input, output), scale));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[1, output]));
}

fn scaled(mut t: Tensor, s: f64) -> Tensor {
    if s != 1.0 {
        t.data_mut().iter_mut().for_each(|x| *x *= s);
    }
    t
}

impl Model {
    pub fn new(config: ModelConfig, src_vocab: usize, tgt_vocab: usize, seed: u64) -> Result<Self, ModelError> {
        Model::with_init_scale(config, src_vocab, tgt_vocab, seed, 1.0)
    }

    /// Xavier-uniform weights multiplied by `scale`; zero biases except LSTM forget gates at 1.
    pub fn with_init_scale(
        config: ModelConfig,
        src_vocab: usize,
        tgt_vocab: usize,
        seed: u64,
        scale: f64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if src_vocab == 0 || tgt_vocab == 0 {
            return Err(ModelError::Config { field: "vocab", message: "vocabularies must be non-empty".into() });
        }
        let c = &config;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = &mut rng;
        let mut p = ParamStore::new();
        let (e, he, hd, a) = (c.word_emb, c.enc_hidden, c.dec_hidden, c.attn_dim);
        let ann = c.annotation_dim();
        p.insert("src_emb", scaled(xavier_uniform(r, src_vocab, e), scale));
        lstm_params(&mut p, r, "enc.fwd", e, he, scale);
        lstm_params(&mut p, r, "enc.bwd", e, he, scale);
        linear_params(&mut p, r, "dec.init", ann, hd, scale);
        p.insert("tgt_emb", scaled(xavier_uniform(r, tgt_vocab, e), scale));
        p.insert("key_emb", scaled(xavier_uniform(r, FEATURE_COUNT, c.key_dim), scale));
        lstm_params(&mut p, r, "dec.lstm", e + ann, hd, scale);
        p.insert("qatt.ws", scaled(xavier_uniform(r, hd, a), scale));
        p.insert("qatt.wh", scaled(xavier_uniform(r, ann, a), scale));
        p.insert("qatt.u", scaled(xavier_uniform(r, a, 1), scale));
        p.insert("matt.wk", scaled(xavier_uniform(r, c.key_dim, a), scale));
        p.insert("matt.wc", scaled(xavier_uniform(r, ann, a), scale));
        p.insert("matt.wm", scaled(xavier_uniform(r, hd, a), scale));
        p.insert("matt.u", scaled(xavier_uniform(r, a, 1), scale));
        linear_params(&mut p, r, "out", c.output_input_dim(), tgt_vocab, scale);
        p.insert("char_emb", scaled(xavier_uniform(r, CharVocab::SIZE, c.char_emb), scale));
        lstm_params(&mut p, r, "charenc", c.char_emb, c.char_enc_hidden, scale);
        linear_params(&mut p, r, "charenc.to_src", c.char_enc_hidden, e, scale);
        linear_params(&mut p, r, "charenc.to_val", c.char_enc_hidden, c.value_dim, scale);
        linear_params(&mut p, r, "charenc.to_tgt", c.char_enc_hidden, e, scale);
        linear_params(&mut p, r, "chardec.init", hd + c.value_dim, c.char_dec_hidden, scale);
        let char_in = if c.char_step_memory { c.char_emb + c.value_dim } else { c.char_emb };
        lstm_params(&mut p, r, "chardec.lstm", char_in, c.char_dec_hidden, scale);
        linear_params(&mut p, r, "chardec.out", c.char_dec_hidden, CharVocab::SIZE, scale);
        if c.hybrid_retrieval {
            p.insert("ret_emb", scaled(xavier_uniform(r, tgt_vocab, e), scale));
            lstm_params(&mut p, r, "ret.fwd", e, he, scale);
            lstm_params(&mut p, r, "ret.bwd", e, he, scale);
            p.insert("ratt.ws", scaled(xavier_uniform(r, hd, a), scale));
            p.insert("ratt.wh", scaled(xavier_uniform(r, ann, a), scale));
            p.insert("ratt.u", scaled(xavier_uniform(r, a, 1), scale));
        }
        Ok(Model { config, params: p, src_vocab, tgt_vocab })
    }

    pub fn src_vocab(&self) -> usize {
        self.src_vocab
    }

    pub fn tgt_vocab(&self) -> usize {
        self.tgt_vocab
    }

    /// Names of the character-decoder parameters.
    pub fn char_decoder_params(&self) -> Vec<&str> {
        self.params.names().iter().map(String::as_str).filter(|n| n.starts_with("chardec.")).collect()
    }

    /// Writes `model.json` and `weights.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), ModelError> {
        let io = |p: &Path, e: &dyn std::fmt::Display| ModelError::Io { path: p.display().to_string(), message: e.to_string() };
        fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
        let meta = ModelMeta { config: self.config.clone(), src_vocab: self.src_vocab, tgt_vocab: self.tgt_vocab };
        let path = dir.join("model.json");
        let json = serde_json::to_string_pretty(&meta).map_err(|e| io(&path, &e))?;
        fs::write(&path, json).map_err(|e| io(&path, &e))?;
        save_checkpoint(&self.params, &dir.join("weights.bin"))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ModelError> {
        let path = dir.join("model.json");
        let io = |e: &dyn std::fmt::Display| ModelError::Io { path: path.display().to_string(), message: e.to_string() };
        let text = fs::read_to_string(&path).map_err(|e| io(&e))?;
        let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| io(&e))?;
        let params = load_checkpoint(&dir.join("weights.bin"))?;
        let reference = Model::new(meta.config.clone(), meta.src_vocab, meta.tgt_vocab, 0)?;
        reference.params.same_layout(&params)?;
        Ok(Model { config: meta.config, params, src_vocab: meta.src_vocab, tgt_vocab: meta.tgt_vocab })
    }
}

#[cfg(test)]
mod tests;
