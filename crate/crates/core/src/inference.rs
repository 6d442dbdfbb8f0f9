//! Answer generation: batched greedy decoding and an optional word-level beam.

use serde::{Deserialize, Serialize};

use crate::corpus::StockKB;
use crate::model::{Batch, Example, Graph, Model, ModelError, Variant};
use crate::numerics::Var;
use crate::tokenizer::{
    chars_to_number, is_number, CharVocab, Side, TokenizedText, Tokenizer, BOS, EOS, NUM,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    /// Word-level steps before decoding stops without `<eos>`.
    pub max_len: usize,
    /// Characters per number before the boundary tag is forced.
    pub char_cap: usize,
    /// Word-level beam width; 1 is greedy. Numbers are always decoded greedily.
    pub beam_width: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig { max_len: 60, char_cap: CharVocab::MAX_CHARS, beam_width: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAnswer {
    /// Word-level ids without `<eos>`; numbers appear as `<num>`.
    pub tokens: Vec<usize>,
    pub surface: String,
    pub number_surfaces: Vec<String>,
    /// Whether each generated number matches the number pattern.
    pub number_valid: Vec<bool>,
    /// Sum of log-probabilities of every emitted token and character.
    pub log_prob: f64,
    /// A retrieval model was given an empty retrieved answer.
    pub retrieval_fallback: bool,
}

fn log_softmax_at(row: &[f64], i: usize) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
    row[i] - max - z.ln()
}

fn argmax(row: &[f64], allowed: impl Iterator<Item = usize>) -> usize {
    let mut best = None;
    for i in allowed {
        if best.is_none_or(|b: usize| row[i] > row[b]) {
            best = Some(i);
        }
    }
    best.expect("non-empty candidate set")
}

/// Builds an inference example: the answer side is left empty.
pub fn query_example(
    tokenizer: &Tokenizer,
    variant: Variant,
    question: &str,
    kb: &StockKB,
    retrieved: Option<&str>,
) -> Result<Example, ModelError> {
    let q = tokenizer.encode(question, Side::Source);
    if q.tokens.is_empty() {
        return Err(ModelError::Contract("empty question".into()));
    }
    let retrieved = retrieved.map(|text| {
        let t = tokenizer.encode(text, Side::Target);
        match variant {
            Variant::Sequential => t.inline_numbers(),
            Variant::Hybrid => t.tokens,
        }
    });
    Ok(Example::from_parts(q, kb.surfaces(), TokenizedText::default(), retrieved, variant))
}

#[derive(Clone, Debug, Default)]
struct RowState {
    tokens: Vec<usize>,
    numbers: Vec<String>,
    log_prob: f64,
    done: bool,
}

/// Decodes a batch of examples; answer sides are ignored. With a beam width
/// above 1 each example is searched separately.
pub fn generate_batch(
    model: &Model,
    tokenizer: &Tokenizer,
    examples: &[&Example],
    cfg: &DecodeConfig,
) -> Result<Vec<GeneratedAnswer>, ModelError> {
    if cfg.max_len == 0 {
        return Err(ModelError::Contract("max_len must be positive".into()));
    }
    if cfg.beam_width == 0 {
        return Err(ModelError::Contract("beam_width must be positive".into()));
    }
    if cfg.beam_width > 1 {
        return examples.iter().map(|e| beam_search(model, tokenizer, e, cfg)).collect();
    }
    greedy_batch(model, tokenizer, examples, cfg)
}

fn greedy_batch(
    model: &Model,
    tokenizer: &Tokenizer,
    examples: &[&Example],
    cfg: &DecodeConfig,
) -> Result<Vec<GeneratedAnswer>, ModelError> {
    let stripped: Vec<Example> = examples
        .iter()
        .map(|e| Example { answer: TokenizedText::default(), ..(*e).clone() })
        .collect();
    let refs: Vec<&Example> = stripped.iter().collect();
    let batch = Batch::new(&refs)?;
    let rows = batch.size;
    let hybrid = model.config.variant == Variant::Hybrid;
    let mut g = Graph::new(model, false);
    let enc = g.encode(&batch)?;
    let tgt_emb = g.param("tgt_emb");
    let mut state: Vec<RowState> = vec![RowState::default(); rows];
    let mut e_prev = g.tape.gather_rows(tgt_emb, &vec![BOS; rows])?;
    let (mut s, mut cell) = (enc.s0, enc.cell0);
    for _ in 0..cfg.max_len {
        let out = g.step(&enc, e_prev, s, cell)?;
        s = out.s;
        cell = out.cell;
        let logits = g.output_logits(out.features)?;
        let lv = g.value(logits).clone();
        let vocab = lv.cols();
        let mut next = vec![EOS; rows];
        let mut num_rows = Vec::new();
        for (b, st) in state.iter_mut().enumerate() {
            if st.done {
                continue;
            }
            let row = lv.row_slice(b);
            let y = argmax(row, 0..vocab);
            st.log_prob += log_softmax_at(row, y);
            next[b] = y;
            if y == EOS {
                st.done = true;
            } else {
                st.tokens.push(y);
                if hybrid && y == NUM {
                    num_rows.push(b);
                }
            }
        }
        if state.iter().all(|st| st.done) {
            break;
        }
        let mut feedback: Vec<(usize, String)> = Vec::new();
        if !num_rows.is_empty() {
            let decoded = decode_numbers(&mut g, out.s, out.mem, &num_rows, cfg.char_cap)?;
            for (&b, (surface, lp)) in num_rows.iter().zip(decoded) {
                state[b].log_prob += lp;
                state[b].numbers.push(surface.clone());
                if is_number(&surface) {
                    feedback.push((b, surface));
                }
            }
        }
        e_prev = next_embeddings(&mut g, &next, &feedback)?;
    }
    Ok(state
        .into_iter()
        .zip(&stripped)
        .map(|(st, ex)| finish(st, tokenizer, model.config.variant, ex))
        .collect())
}

/// Word embeddings of `next`, with rows listed in `feedback` replaced by the
/// character encoding of their generated number.
fn next_embeddings(g: &mut Graph, next: &[usize], feedback: &[(usize, String)]) -> Result<Var, ModelError> {
    let tgt_emb = g.param("tgt_emb");
    if feedback.is_empty() {
        return Ok(g.tape.gather_rows(tgt_emb, next)?);
    }
    let surfaces: Vec<String> = feedback.iter().map(|(_, s)| s.clone()).collect();
    let emb = g.number_embeddings(&surfaces)?;
    let table = g.tape.concat_rows(&[tgt_emb, emb])?;
    let mut idx = next.to_vec();
    for (k, (b, _)) in feedback.iter().enumerate() {
        idx[*b] = g.model().tgt_vocab() + k;
    }
    Ok(g.tape.gather_rows(table, &idx)?)
}

/// Greedy character decoding from rows `rows` of `s` and `mem`; returns each
/// surface with its log-probability.
fn decode_numbers(g: &mut Graph, s: Var, mem: Var, rows: &[usize], cap: usize) -> Result<Vec<(String, f64)>, ModelError> {
    let sn = g.tape.gather_rows(s, rows)?;
    let mn = g.tape.gather_rows(mem, rows)?;
    let (mut h, mut c) = g.char_init(sn, mn)?;
    let mut prev = vec![CharVocab::BOS; rows.len()];
    let mut chars: Vec<Vec<usize>> = vec![Vec::new(); rows.len()];
    let mut open = vec![true; rows.len()];
    let mut lps = vec![0.0; rows.len()];
    for _ in 0..cap {
        let (h2, c2, logits) = g.char_step(&prev, h, c, mn)?;
        h = h2;
        c = c2;
        let lv = g.value(logits).clone();
        for i in 0..rows.len() {
            if !open[i] {
                continue;
            }
            let row = lv.row_slice(i);
            let ch = argmax(row, CharVocab::emittable());
            lps[i] += log_softmax_at(row, ch);
            prev[i] = ch;
            if ch == CharVocab::BOUNDARY {
                open[i] = false;
            } else {
                chars[i].push(ch);
            }
        }
        if open.iter().all(|o| !o) {
            break;
        }
    }
    Ok(chars.iter().map(|c| chars_to_number(c)).zip(lps).collect())
}

/// Word-level beam search for one example. Hypotheses are ranked by total
/// log-probability; the best finished one wins, or the best open one when
/// none finished within `max_len`.
fn beam_search(
    model: &Model,
    tokenizer: &Tokenizer,
    example: &Example,
    cfg: &DecodeConfig,
) -> Result<GeneratedAnswer, ModelError> {
    let width = cfg.beam_width;
    let stripped = Example { answer: TokenizedText::default(), ..example.clone() };
    let copies: Vec<&Example> = vec![&stripped; width];
    let batch = Batch::new(&copies)?;
    let hybrid = model.config.variant == Variant::Hybrid;
    let mut g = Graph::new(model, false);
    let enc = g.encode(&batch)?;
    let mut live = vec![RowState::default()];
    let mut finished: Vec<RowState> = Vec::new();
    let mut e_prev = g.tape.gather_rows(g.param("tgt_emb"), &vec![BOS; width])?;
    let (mut s, mut cell) = (enc.s0, enc.cell0);
    for _ in 0..cfg.max_len {
        let out = g.step(&enc, e_prev, s, cell)?;
        let logits = g.output_logits(out.features)?;
        let lv = g.value(logits).clone();
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let row = lv.row_slice(i);
            let mut ids: Vec<usize> = (0..row.len()).collect();
            ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for &y in ids.iter().take(width) {
                cands.push((h.log_prob + log_softmax_at(row, y), i, y));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        cands.truncate(width);
        let mut next_live = Vec::new();
        let mut parents = Vec::new();
        let mut next = Vec::new();
        for (lp, i, y) in cands {
            let mut h = live[i].clone();
            h.log_prob = lp;
            if y == EOS {
                h.done = true;
                finished.push(h);
            } else {
                h.tokens.push(y);
                next_live.push(h);
                parents.push(i);
                next.push(y);
            }
        }
        if next_live.is_empty() || finished.len() >= width {
            live = next_live;
            break;
        }
        let num_rows: Vec<usize> = (0..next.len()).filter(|&k| hybrid && next[k] == NUM).collect();
        let mut feedback = Vec::new();
        if !num_rows.is_empty() {
            let parent_rows: Vec<usize> = num_rows.iter().map(|&k| parents[k]).collect();
            let decoded = decode_numbers(&mut g, out.s, out.mem, &parent_rows, cfg.char_cap)?;
            for (&k, (surface, lp)) in num_rows.iter().zip(decoded) {
                next_live[k].log_prob += lp;
                next_live[k].numbers.push(surface.clone());
                if is_number(&surface) {
                    feedback.push((k, surface));
                }
            }
        }
        let mut rows = parents.clone();
        rows.resize(width, parents[0]);
        let first = next[0];
        next.resize(width, first);
        s = g.tape.gather_rows(out.s, &rows)?;
        cell = g.tape.gather_rows(out.cell, &rows)?;
        e_prev = next_embeddings(&mut g, &next, &feedback)?;
        live = next_live;
    }
    let best = finished
        .into_iter()
        .chain(live)
        .reduce(|a, b| if b.log_prob > a.log_prob { b } else { a })
        .expect("beam keeps at least one hypothesis");
    Ok(finish(best, tokenizer, model.config.variant, &stripped))
}

fn finish(st: RowState, tokenizer: &Tokenizer, variant: Variant, ex: &Example) -> GeneratedAnswer {
    let retrieval_fallback = ex.retrieved.as_ref().is_some_and(|r| r.is_empty());
    match variant {
        Variant::Hybrid => {
            let surface = tokenizer.decode(&st.tokens, &st.numbers, Side::Target);
            GeneratedAnswer {
                number_valid: st.numbers.iter().map(|s| is_number(s)).collect(),
                tokens: st.tokens,
                surface,
                number_surfaces: st.numbers,
                log_prob: st.log_prob,
                retrieval_fallback,
            }
        }
        Variant::Sequential => {
            let collapsed = TokenizedText::collapse_numbers(&st.tokens);
            let numbers: Vec<String> = collapsed.number_surfaces().map(str::to_string).collect();
            let surface = tokenizer.decode(&st.tokens, &[], Side::Target);
            GeneratedAnswer {
                number_valid: numbers.iter().map(|s| is_number(s)).collect(),
                tokens: collapsed.tokens,
                surface,
                number_surfaces: numbers,
                log_prob: st.log_prob,
                retrieval_fallback,
            }
        }
    }
}

pub fn generate(
    model: &Model,
    tokenizer: &Tokenizer,
    question: &str,
    kb: &StockKB,
    cfg: &DecodeConfig,
) -> Result<GeneratedAnswer, ModelError> {
    let ex = query_example(tokenizer, model.config.variant, question, kb, None)?;
    Ok(generate_batch(model, tokenizer, &[&ex], cfg)?.remove(0))
}

/// Generation conditioned on a retrieved answer; an empty one zeroes the
/// retrieval read-out and sets `retrieval_fallback`.
pub fn generate_with_retrieval(
    model: &Model,
    tokenizer: &Tokenizer,
    question: &str,
    kb: &StockKB,
    retrieved: &str,
    cfg: &DecodeConfig,
) -> Result<GeneratedAnswer, ModelError> {
    let ex = query_example(tokenizer, model.config.variant, question, kb, Some(retrieved))?;
    Ok(generate_batch(model, tokenizer, &[&ex], cfg)?.remove(0))
}

/// Decodes `examples` in chunks of `batch_size`.
pub fn generate_all(
    model: &Model,
    tokenizer: &Tokenizer,
    examples: &[Example],
    batch_size: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<GeneratedAnswer>, ModelError> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        out.extend(generate_batch(model, tokenizer, &refs, cfg)?);
    }
    Ok(out)
}
