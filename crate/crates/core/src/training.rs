//! Teacher-forced training with BLEU-2 model selection.

use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAInstance;
use crate::inference::{generate_all, DecodeConfig};
use crate::metrics::{bleu2, words, MetricError};
use crate::model::{Batch, Example, Graph, Model, ModelError, Variant};
use crate::numerics::{clip_global_norm, Adam, NumericError, Tensor};
use crate::retrieval::{RetrievalError, RetrievalIndex};
use crate::tokenizer::Tokenizer;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("invalid training config field {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub eval_every: usize,
    /// Evaluations without BLEU-2 improvement before stopping.
    pub patience: usize,
    pub max_steps: Option<usize>,
    pub decode: DecodeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            learning_rate: 0.01,
            max_epochs: 30,
            seed: 0,
            clip_norm: 5.0,
            eval_every: 100,
            patience: 10,
            max_steps: None,
            decode: DecodeConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("max_epochs", self.max_epochs as f64),
            ("clip_norm", self.clip_norm),
            ("eval_every", self.eval_every as f64),
            ("patience", self.patience as f64),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(TrainError::Config { field, message: format!("must be positive, got {v}") });
            }
        }
        if self.max_steps == Some(0) {
            return Err(TrainError::Config { field: "max_steps", message: "must be positive".into() });
        }
        Ok(())
    }
}

/// Loss values of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub word: f64,
    pub chars: f64,
    pub lambda: f64,
    pub total: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean losses over the steps since the previous entry.
    pub word: f64,
    pub chars: f64,
    pub total: f64,
    pub val_bleu2: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the highest validation BLEU-2.
    pub best: Model,
    pub best_step: usize,
    pub best_bleu2: f64,
    pub log: Vec<LogEntry>,
    pub steps: usize,
    pub stopped_early: bool,
}

/// Tokenizes instances; `retrieved[i]` pairs with `instances[i]` for retrieval models.
pub fn prepare_examples(
    instances: &[QAInstance],
    tokenizer: &Tokenizer,
    variant: Variant,
    retrieved: Option<&[String]>,
) -> Result<Vec<Example>, ModelError> {
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| Example::new(inst, tokenizer, variant, retrieved.map(|r| r[i].as_str())))
        .collect()
}

/// Top-1 answer per instance from `index`, never the instance itself.
pub fn retrieve_for(index: &RetrievalIndex, instances: &[QAInstance], exclude_self: bool) -> Result<Vec<String>, RetrievalError> {
    instances
        .iter()
        .map(|inst| {
            let exclude = exclude_self.then_some(inst.id.as_str());
            let r = index.retrieve_excluding(&inst.question, &inst.kb, 1, exclude)?;
            Ok(r.hits.into_iter().next().map(|h| h.answer).unwrap_or_default())
        })
        .collect()
}

/// Seeded shuffle, then consecutive batches of at most `batch_size`.
pub fn make_batches(examples: &[Example], batch_size: usize, seed: u64) -> Result<Vec<Batch>, ModelError> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
        .chunks(batch_size.max(1))
        .map(|c| {
            let refs: Vec<&Example> = c.iter().map(|&i| &examples[i]).collect();
            Batch::new(&refs)
        })
        .collect()
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn parts(g: &Graph, l: &crate::model::LossVars, lambda: f64) -> LossParts {
    LossParts {
        word: g.value(l.word).data()[0],
        chars: l.chars.map_or(0.0, |c| g.value(c).data()[0]),
        lambda,
        total: g.value(l.total).data()[0],
    }
}

pub fn compute_loss(model: &Model, batch: &Batch) -> Result<LossParts, ModelError> {
    let mut g = Graph::new(model, false);
    let l = g.loss(batch, model.config.lambda)?;
    Ok(parts(&g, &l, model.config.lambda))
}

/// Loss values and one gradient tensor per parameter, in store order.
pub fn loss_and_gradients(model: &Model, batch: &Batch) -> Result<(LossParts, Vec<Tensor>), ModelError> {
    let mut g = Graph::new(model, true);
    let l = g.loss(batch, model.config.lambda)?;
    let grads = g.tape.backward(l.total)?;
    let p = parts(&g, &l, model.config.lambda);
    Ok((p, g.param_vars().iter().map(|&v| grads.tensor(v)).collect()))
}

/// Corpus BLEU-2 of greedy answers against reference texts.
pub fn evaluate_bleu2(
    model: &Model,
    tokenizer: &Tokenizer,
    examples: &[Example],
    references: &[String],
    cfg: &DecodeConfig,
) -> Result<f64, TrainError> {
    let answers = generate_all(model, tokenizer, examples, 256, cfg)?;
    let cand: Vec<Vec<String>> = answers.iter().map(|a| words(&a.surface)).collect();
    let refs: Vec<Vec<String>> = references.iter().map(|r| words(r)).collect();
    Ok(bleu2(&cand, &refs)?)
}

pub fn train(
    mut model: Model,
    tokenizer: &Tokenizer,
    train_set: &[Example],
    val_set: &[Example],
    val_refs: &[String],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Config { field: "data", message: "training and validation sets must be non-empty".into() });
    }
    let mut adam = Adam::new(model.params.tensors(), cfg.learning_rate);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    let mut step = 0;
    let (mut sum, mut since) = (LossParts { word: 0.0, chars: 0.0, lambda: model.config.lambda, total: 0.0 }, 0usize);
    let mut stopped_early = false;
    let max_steps = cfg.max_steps.unwrap_or(usize::MAX);

    'epochs: for epoch in 0..cfg.max_epochs {
        for batch in make_batches(train_set, cfg.batch_size, epoch_seed(cfg.seed, epoch))? {
            let (p, mut grads) = loss_and_gradients(&model, &batch)?;
            if !p.total.is_finite() {
                return Err(TrainError::Diverged { step: step + 1, detail: format!("loss {p:?}") });
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam.step(model.params.tensors_mut(), &grads)?;
            if model.params.tensors().iter().any(|t| !t.all_finite()) {
                return Err(TrainError::Diverged { step: step + 1, detail: "non-finite parameters after update".into() });
            }
            step += 1;
            sum.word += p.word;
            sum.chars += p.chars;
            sum.total += p.total;
            since += 1;
            let last = step >= max_steps;
            if step % cfg.eval_every == 0 || last {
                let bleu = evaluate_bleu2(&model, tokenizer, val_set, val_refs, &cfg.decode)?;
                let n = since as f64;
                let entry = LogEntry { step, word: sum.word / n, chars: sum.chars / n, total: sum.total / n, val_bleu2: bleu };
                info!("step {step} L_w {:.4} L_c {:.4} total {:.4} val BLEU-2 {:.4}", entry.word, entry.chars, entry.total, bleu);
                log.push(entry);
                sum = LossParts { word: 0.0, chars: 0.0, lambda: model.config.lambda, total: 0.0 };
                since = 0;
                if best.as_ref().is_none_or(|(b, _, _)| bleu > *b) {
                    best = Some((bleu, step, model.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= cfg.patience {
                        stopped_early = true;
                        break 'epochs;
                    }
                }
            }
            if last {
                break 'epochs;
            }
        }
    }
    if since > 0 || best.is_none() {
        let bleu = evaluate_bleu2(&model, tokenizer, val_set, val_refs, &cfg.decode)?;
        let n = since.max(1) as f64;
        log.push(LogEntry { step, word: sum.word / n, chars: sum.chars / n, total: sum.total / n, val_bleu2: bleu });
        if best.as_ref().is_none_or(|(b, _, _)| bleu > *b) {
            best = Some((bleu, step, model.clone()));
        }
    }
    let (best_bleu2, best_step, best) = best.expect("at least one evaluation");
    Ok(TrainOutcome { best, best_step, best_bleu2, log, steps: step, stopped_early })
}

pub fn write_log_csv<W: Write>(log: &[LogEntry], mut w: W) -> std::io::Result<()> {
    writeln!(w, "step,L_w,L_c,total,val_bleu2")?;
    for e in log {
        writeln!(w, "{},{},{},{},{}", e.step, e.word, e.chars, e.total, e.val_bleu2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, TemplateSet};
    use crate::model::ModelConfig;
    use crate::retrieval::RetrievalConfig;
    use crate::tokenizer::{Side, TokenizerConfig, PAD};

    fn setup(n: usize, variant: Variant) -> (Vec<QAInstance>, Tokenizer, Vec<Example>, Model) {
        let data = generate_synthetic(n, 2, &TemplateSet::default());
        let tok = Tokenizer::train(
            data.iter().map(|d| d.question.as_str()),
            data.iter().map(|d| d.answer.as_str()),
            &TokenizerConfig::default(),
        );
        let ex = prepare_examples(&data, &tok, variant, None).unwrap();
        let model = Model::new(ModelConfig::uniform(8, variant), tok.vocab(Side::Source).len(), tok.vocab(Side::Target).len(), 4).unwrap();
        (data, tok, ex, model)
    }

    #[test]
    fn batch_sizes_and_order() {
        let (_, _, ex, _) = setup(5, Variant::Hybrid);
        let b = make_batches(&ex, 2, 9).unwrap();
        assert_eq!(b.iter().map(|b| b.size).collect::<Vec<_>>(), vec![2, 2, 1]);
        let again = make_batches(&ex, 2, 9).unwrap();
        assert_eq!(b.iter().map(|x| x.questions.clone()).collect::<Vec<_>>(), again.iter().map(|x| x.questions.clone()).collect::<Vec<_>>());
        let last = &b[2];
        assert!((0..last.dec_len).all(|t| last.target_mask(0, t) == (last.target(0, t) != PAD || t < last.targets[0].len())));
    }

    #[test]
    fn loss_is_pure_and_consistent() {
        let (_, _, ex, model) = setup(8, Variant::Hybrid);
        let batch = &make_batches(&ex, 8, 1).unwrap()[0];
        let a = compute_loss(&model, batch).unwrap();
        assert_eq!(a, compute_loss(&model, batch).unwrap());
        assert!(a.word >= 0.0 && a.chars >= 0.0);
        assert_eq!(a.total, a.word + a.lambda * a.chars);
        let (b, grads) = loss_and_gradients(&model, batch).unwrap();
        assert_eq!(a, b);
        assert_eq!(grads.len(), model.params.len());
    }

    #[test]
    fn deterministic_runs_and_selection() {
        let (data, tok, ex, model) = setup(12, Variant::Hybrid);
        let refs: Vec<String> = data[..4].iter().map(|d| d.answer.clone()).collect();
        let cfg = TrainConfig { batch_size: 4, eval_every: 3, max_steps: Some(9), decode: DecodeConfig { max_len: 20, char_cap: 10, ..DecodeConfig::default() }, ..TrainConfig::default() };
        let a = train(model.clone(), &tok, &ex, &ex[..4], &refs, &cfg).unwrap();
        let b = train(model, &tok, &ex, &ex[..4], &refs, &cfg).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.steps, 9);
        assert_eq!(a.log.iter().map(|e| e.step).collect::<Vec<_>>(), vec![3, 6, 9]);
        let max = a.log.iter().map(|e| e.val_bleu2).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.best_bleu2, max);
        let best_bleu = evaluate_bleu2(&a.best, &tok, &ex[..4], &refs, &cfg.decode).unwrap();
        assert_eq!(best_bleu, a.best_bleu2);
        let mut csv = Vec::new();
        write_log_csv(&a.log, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("step,L_w,L_c,total,val_bleu2\n"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn divergence_aborts() {
        let (data, tok, ex, mut model) = setup(4, Variant::Sequential);
        model.params.get_mut("out.b").unwrap().data_mut()[0] = f64::NAN;
        let refs: Vec<String> = data.iter().map(|d| d.answer.clone()).collect();
        let cfg = TrainConfig { batch_size: 4, max_steps: Some(2), ..TrainConfig::default() };
        assert!(matches!(train(model, &tok, &ex, &ex, &refs, &cfg), Err(TrainError::Diverged { step: 1, .. })));
        let bad = TrainConfig { batch_size: 0, ..cfg };
        assert!(matches!(bad.validate(), Err(TrainError::Config { field: "batch_size", .. })));
    }

    #[test]
    fn training_retrieval_never_returns_self() {
        let data = generate_synthetic(30, 4, &TemplateSet::default());
        let index = RetrievalIndex::build(&data, RetrievalConfig::default());
        let r = retrieve_for(&index, &data, true).unwrap();
        let own = retrieve_for(&index, &data, false).unwrap();
        for (i, d) in data.iter().enumerate() {
            assert_eq!(own[i], d.answer);
            let hit = index.retrieve_excluding(&d.question, &d.kb, 1, Some(&d.id)).unwrap();
            assert_ne!(hit.hits[0].id, d.id);
            assert_eq!(r[i], hit.hits[0].answer);
        }
    }
}
