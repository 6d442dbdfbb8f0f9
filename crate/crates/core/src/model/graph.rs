//! Forward computation on a [`Tape`].

use std::collections::HashMap;

use crate::corpus::FEATURE_COUNT;
use crate::numerics::{Tape, Tensor, Var};
use crate::tokenizer::{number_to_chars, CharVocab, PAD};

use super::{Batch, Model, ModelError, Variant};

/// Added to attention scores of padded positions.
pub const MASK_PENALTY: f64 = -1e9;

type Result<T> = std::result::Result<T, ModelError>;

/// Encoder outputs and per-batch constants reused at every decoder step.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub size: usize,
    pub q_len: usize,
    /// `[size·q_len, 2·enc_hidden]`, row `b·q_len + j`.
    pub annotations: Var,
    q_proj: Var,
    q_mask: Var,
    /// `[size·14, value_dim]`, row `b·14 + l`.
    pub values: Var,
    k_proj: Var,
    pub s0: Var,
    pub cell0: Var,
    /// Character-encoder states of the KB values, then question numbers, then answer numbers.
    pub char_states: Var,
    answer_numbers_at: usize,
    pub retrieval: Option<RetrievalEncoded>,
}

#[derive(Clone, Debug)]
pub struct RetrievalEncoded {
    pub len: usize,
    /// `[size·len, 2·enc_hidden]`, row `b·len + j`.
    pub annotations: Var,
    proj: Var,
    mask: Var,
    /// Rows with a non-empty retrieved answer.
    pub valid: Vec<bool>,
    zeros: Var,
}

/// One decoder step.
#[derive(Clone, Debug)]
pub struct StepOut {
    pub s: Var,
    pub cell: Var,
    /// Question context `c_t`.
    pub ctx: Var,
    /// Question attention `[size, q_len]`.
    pub alpha: Var,
    /// Memory read `m_t`.
    pub mem: Var,
    /// Memory attention `[size, 14]`.
    pub beta: Var,
    pub ret: Option<Var>,
    pub gamma: Option<Var>,
    /// `[e(y_prev); s_t; c_t; m_t (; r_t)]`.
    pub features: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub word: Var,
    pub chars: Option<Var>,
}

pub struct Graph<'m> {
    pub tape: Tape,
    model: &'m Model,
    vars: Vec<Var>,
}

impl<'m> Graph<'m> {
    /// Binds the model parameters, as trainable leaves or as constants.
    pub fn new(model: &'m Model, trainable: bool) -> Self {
        let mut tape = Tape::new();
        let vars = if trainable { model.params.bind(&mut tape) } else { model.params.bind_frozen(&mut tape) };
        Graph { tape, model, vars }
    }

    pub fn model(&self) -> &'m Model {
        self.model
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn param(&self, name: &str) -> Var {
        let i = self.model.params.position(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        self.vars[i]
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.tape.value(v)
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.tape.constant(Tensor::zeros(&[rows, cols]))
    }

    pub fn linear(&mut self, x: Var, prefix: &str) -> Result<Var> {
        let (w, b) = (self.param(&format!("{prefix}.w")), self.param(&format!("{prefix}.b")));
        let y = self.tape.matmul(x, w)?;
        Ok(self.tape.add_row(y, b)?)
    }

    /// LSTM cell with gates ordered input, forget, candidate, output.
    pub fn lstm(&mut self, prefix: &str, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let n = self.value(h).cols();
        let xh = self.tape.concat_cols(&[x, h])?;
        let z = self.linear(xh, prefix)?;
        let zi = self.tape.slice_cols(z, 0, n)?;
        let zf = self.tape.slice_cols(z, n, 2 * n)?;
        let zg = self.tape.slice_cols(z, 2 * n, 3 * n)?;
        let zo = self.tape.slice_cols(z, 3 * n, 4 * n)?;
        let i = self.tape.sigmoid(zi);
        let f = self.tape.sigmoid(zf);
        let g = self.tape.tanh(zg);
        let o = self.tape.sigmoid(zo);
        let fc = self.tape.mul(f, c)?;
        let ig = self.tape.mul(i, g)?;
        let c2 = self.tape.add(fc, ig)?;
        let tc = self.tape.tanh(c2);
        let h2 = self.tape.mul(o, tc)?;
        Ok((h2, c2))
    }

    /// Masked unidirectional pass; rows keep their state where `masks[t]` is false.
    fn run_lstm(&mut self, prefix: &str, xs: &[Var], masks: &[Vec<bool>], rows: usize, hidden: usize, reverse: bool) -> Result<Vec<Var>> {
        let mut h = self.zeros(rows, hidden);
        let mut c = self.zeros(rows, hidden);
        let mut out = vec![h; xs.len()];
        let order: Vec<usize> = if reverse { (0..xs.len()).rev().collect() } else { (0..xs.len()).collect() };
        for t in order {
            let (h2, c2) = self.lstm(prefix, xs[t], h, c)?;
            if masks[t].iter().all(|&m| m) {
                h = h2;
                c = c2;
            } else {
                h = self.tape.select_rows(&masks[t], h2, h)?;
                c = self.tape.select_rows(&masks[t], c2, c)?;
            }
            out[t] = h;
        }
        Ok(out)
    }

    /// Final character-LSTM states `[n, char_enc_hidden]` of each surface spelled with its boundary tag.
    pub fn encode_chars(&mut self, surfaces: &[String]) -> Result<Var> {
        let hidden = self.model.config.char_enc_hidden;
        if surfaces.is_empty() {
            return Ok(self.zeros(0, hidden));
        }
        let seqs = surfaces.iter().map(|s| number_to_chars(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let emb = self.param("char_emb");
        let mut xs = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = seqs.iter().map(|s| s.get(t).copied().unwrap_or(CharVocab::PAD)).collect();
            xs.push(self.tape.gather_rows(emb, &ids)?);
            masks.push(seqs.iter().map(|s| t < s.len()).collect());
        }
        let states = self.run_lstm("charenc", &xs, &masks, surfaces.len(), hidden, false)?;
        Ok(states[len - 1])
    }

    /// Word-level embeddings `[n, word_emb]` of numbers for the decoder input.
    pub fn number_embeddings(&mut self, surfaces: &[String]) -> Result<Var> {
        let h = self.encode_chars(surfaces)?;
        self.linear(h, "charenc.to_tgt")
    }

    /// Bi-LSTM over `tokens(b, j)`; returns annotations `[rows·len, 2·enc_hidden]`
    /// in row-major order and the final forward/backward states.
    fn bi_encode(
        &mut self,
        table: Var,
        prefix: &str,
        rows: usize,
        len: usize,
        token: impl Fn(usize, usize) -> usize,
        mask: impl Fn(usize, usize) -> bool,
    ) -> Result<(Var, Var, Var)> {
        let hidden = self.model.config.enc_hidden;
        let mut xs = Vec::with_capacity(len);
        let mut masks = Vec::with_capacity(len);
        for t in 0..len {
            let ids: Vec<usize> = (0..rows).map(|b| token(b, t)).collect();
            xs.push(self.tape.gather_rows(table, &ids)?);
            masks.push((0..rows).map(|b| mask(b, t)).collect::<Vec<bool>>());
        }
        let fwd = self.run_lstm(&format!("{prefix}.fwd"), &xs, &masks, rows, hidden, false)?;
        let bwd = self.run_lstm(&format!("{prefix}.bwd"), &xs, &masks, rows, hidden, true)?;
        let per_step = (0..len)
            .map(|t| self.tape.concat_cols(&[fwd[t], bwd[t]]))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let step_major = self.tape.concat_rows(&per_step)?;
        let perm: Vec<usize> = (0..rows).flat_map(|b| (0..len).map(move |j| j * rows + b)).collect();
        let annotations = self.tape.gather_rows(step_major, &perm)?;
        Ok((annotations, fwd[len - 1], bwd[0]))
    }

    fn mask_constant(&mut self, rows: usize, len: usize, valid: impl Fn(usize, usize) -> bool) -> Var {
        let data = (0..rows).flat_map(|b| (0..len).map(move |j| (b, j))).map(|(b, j)| if valid(b, j) { 0.0 } else { MASK_PENALTY }).collect();
        self.tape.constant(Tensor::new(vec![rows, len], data).expect("mask shape"))
    }

    pub fn encode(&mut self, batch: &Batch) -> Result<Encoded> {
        let cfg = &self.model.config;
        let (rows, len) = (batch.size, batch.q_len);
        if len == 0 {
            return Err(ModelError::Contract("empty question".into()));
        }
        let mut surfaces = batch.kb_surfaces.clone();
        let q_at = surfaces.len();
        surfaces.extend(batch.q_numbers.iter().map(|(_, _, s)| s.clone()));
        let a_at = surfaces.len();
        if cfg.variant == Variant::Hybrid {
            surfaces.extend(batch.a_numbers.iter().map(|(_, _, s)| s.clone()));
        }
        let char_states = self.encode_chars(&surfaces)?;
        let kb_rows: Vec<usize> = (0..q_at).collect();
        let kb_h = self.tape.gather_rows(char_states, &kb_rows)?;
        let values = self.linear(kb_h, "charenc.to_val")?;

        let src_emb = self.param("src_emb");
        let vs = self.model.src_vocab();
        let mut number_at: HashMap<(usize, usize), usize> = HashMap::new();
        let table = if batch.q_numbers.is_empty() {
            src_emb
        } else {
            for (k, (b, j, _)) in batch.q_numbers.iter().enumerate() {
                number_at.insert((*b, *j), vs + k);
            }
            let idx: Vec<usize> = (q_at..a_at).collect();
            let qh = self.tape.gather_rows(char_states, &idx)?;
            let proj = self.linear(qh, "charenc.to_src")?;
            self.tape.concat_rows(&[src_emb, proj])?
        };
        let (annotations, fwd_final, bwd_final) = self.bi_encode(
            table,
            "enc",
            rows,
            len,
            |b, j| number_at.get(&(b, j)).copied().unwrap_or_else(|| batch.question_token(b, j)),
            |b, j| batch.question_mask(b, j),
        )?;
        let finals = self.tape.concat_cols(&[fwd_final, bwd_final])?;
        let s_lin = self.linear(finals, "dec.init")?;
        let s0 = self.tape.tanh(s_lin);
        let cell0 = self.zeros(rows, cfg.dec_hidden);
        let wh = self.param("qatt.wh");
        let q_proj = self.tape.matmul(annotations, wh)?;
        let q_mask = self.mask_constant(rows, len, |b, j| batch.question_mask(b, j));
        let (keys, wk) = (self.param("key_emb"), self.param("matt.wk"));
        let kp = self.tape.matmul(keys, wk)?;
        let k_proj = self.tape.tile_rows(kp, rows);

        let retrieval = match (&batch.retrieved, cfg.hybrid_retrieval) {
            (Some(ret), true) => Some(self.encode_retrieved(ret, batch.ret_len)?),
            (None, false) => None,
            (Some(_), false) => return Err(ModelError::Contract("retrieved answers given to a model without retrieval".into())),
            (None, true) => return Err(ModelError::Contract("retrieval model needs retrieved answers".into())),
        };
        Ok(Encoded {
            size: rows,
            q_len: len,
            annotations,
            q_proj,
            q_mask,
            values,
            k_proj,
            s0,
            cell0,
            char_states,
            answer_numbers_at: a_at,
            retrieval,
        })
    }

    fn encode_retrieved(&mut self, ret: &[Vec<usize>], len: usize) -> Result<RetrievalEncoded> {
        let rows = ret.len();
        let len = len.max(1);
        let table = self.param("ret_emb");
        let (annotations, _, _) = self.bi_encode(
            table,
            "ret",
            rows,
            len,
            |b, j| ret[b].get(j).copied().unwrap_or(PAD),
            |b, j| j < ret[b].len(),
        )?;
        let wh = self.param("ratt.wh");
        let proj = self.tape.matmul(annotations, wh)?;
        let mask = self.mask_constant(rows, len, |b, j| j < ret[b].len());
        let zeros = self.zeros(rows, self.model.config.annotation_dim());
        Ok(RetrievalEncoded { len, annotations, proj, mask, valid: ret.iter().map(|r| !r.is_empty()).collect(), zeros })
    }

    /// Additive attention: `score_j = u·tanh(W_q q + keys_proj_j)`, softmax
    /// over `len` positions per row, then the weighted sum of `values`.
    #[allow(clippy::too_many_arguments)]
    pub fn attention(
        &mut self,
        query: Var,
        wq: Var,
        u: Var,
        keys_proj: Var,
        mask: Option<Var>,
        values: Var,
        len: usize,
    ) -> Result<(Var, Var)> {
        let rows = self.value(query).rows();
        let q = self.tape.matmul(query, wq)?;
        let q = self.tape.repeat_rows(q, len);
        let pre = self.tape.add(q, keys_proj)?;
        let act = self.tape.tanh(pre);
        let scores = self.tape.matmul(act, u)?;
        let mut scores = self.tape.reshape(scores, rows, len)?;
        if let Some(m) = mask {
            scores = self.tape.add(scores, m)?;
        }
        let weights = self.tape.softmax_rows(scores);
        let ctx = self.tape.attend(weights, values)?;
        Ok((ctx, weights))
    }

    /// `c_t` and `α_t` from the previous decoder state.
    pub fn question_attention(&mut self, enc: &Encoded, s_prev: Var) -> Result<(Var, Var)> {
        let (ws, u) = (self.param("qatt.ws"), self.param("qatt.u"));
        self.attention(s_prev, ws, u, enc.q_proj, Some(enc.q_mask), enc.annotations, enc.q_len)
    }

    /// `m_t` and `β_t`, scoring `u_m·tanh(W_k k_l + W_c c_t + W_m s_t)`.
    pub fn memory_attention(&mut self, enc: &Encoded, ctx: Var, s: Var) -> Result<(Var, Var)> {
        let (wc, wm, u) = (self.param("matt.wc"), self.param("matt.wm"), self.param("matt.u"));
        let rows = self.value(s).rows();
        let qc = self.tape.matmul(ctx, wc)?;
        let qs = self.tape.matmul(s, wm)?;
        let q = self.tape.add(qc, qs)?;
        let q = self.tape.repeat_rows(q, FEATURE_COUNT);
        let pre = self.tape.add(q, enc.k_proj)?;
        let act = self.tape.tanh(pre);
        let scores = self.tape.matmul(act, u)?;
        let scores = self.tape.reshape(scores, rows, FEATURE_COUNT)?;
        let beta = self.tape.softmax_rows(scores);
        let mem = self.tape.attend(beta, enc.values)?;
        Ok((mem, beta))
    }

    pub fn step(&mut self, enc: &Encoded, e_prev: Var, s_prev: Var, cell_prev: Var) -> Result<StepOut> {
        let (ctx, alpha) = self.question_attention(enc, s_prev)?;
        let x = self.tape.concat_cols(&[e_prev, ctx])?;
        let (s, cell) = self.lstm("dec.lstm", x, s_prev, cell_prev)?;
        let (mem, beta) = self.memory_attention(enc, ctx, s)?;
        let (ret, gamma) = match &enc.retrieval {
            Some(r) => {
                let (ws, u) = (self.param("ratt.ws"), self.param("ratt.u"));
                let (rt, g) = self.attention(s, ws, u, r.proj, Some(r.mask), r.annotations, r.len)?;
                let rt = if r.valid.iter().all(|&v| v) { rt } else { self.tape.select_rows(&r.valid, rt, r.zeros)? };
                (Some(rt), Some(g))
            }
            None => (None, None),
        };
        let mut parts = vec![e_prev, s, ctx, mem];
        parts.extend(ret);
        let features = self.tape.concat_cols(&parts)?;
        Ok(StepOut { s, cell, ctx, alpha, mem, beta, ret, gamma, features })
    }

    pub fn output_logits(&mut self, features: Var) -> Result<Var> {
        self.linear(features, "out")
    }

    /// Character-decoder state from `tanh(W [s_t; m_t] + b)`.
    pub fn char_init(&mut self, s: Var, mem: Var) -> Result<(Var, Var)> {
        let sm = self.tape.concat_cols(&[s, mem])?;
        let pre = self.linear(sm, "chardec.init")?;
        let h = self.tape.tanh(pre);
        let c = self.zeros(self.value(s).rows(), self.model.config.char_dec_hidden);
        Ok((h, c))
    }

    /// One character step; returns the new state and logits over [`CharVocab`].
    pub fn char_step(&mut self, prev: &[usize], h: Var, c: Var, mem: Var) -> Result<(Var, Var, Var)> {
        let emb = self.param("char_emb");
        let mut x = self.tape.gather_rows(emb, prev)?;
        if self.model.config.char_step_memory {
            x = self.tape.concat_cols(&[x, mem])?;
        }
        let (h, c) = self.lstm("chardec.lstm", x, h, c)?;
        let logits = self.linear(h, "chardec.out")?;
        Ok((h, c, logits))
    }

    /// Teacher-forced joint loss `L_w + λ·L_c`, each a per-token mean.
    pub fn loss(&mut self, batch: &Batch, lambda: f64) -> Result<LossVars> {
        let enc = self.encode(batch)?;
        let (rows, steps) = (batch.size, batch.dec_len);
        let hybrid = self.model.config.variant == Variant::Hybrid;
        let vt = self.model.tgt_vocab();
        let tgt_emb = self.param("tgt_emb");
        let mut number_input: HashMap<(usize, usize), usize> = HashMap::new();
        let table = if hybrid && !batch.a_numbers.is_empty() {
            for (k, (b, t, _)) in batch.a_numbers.iter().enumerate() {
                number_input.insert((*b, t + 1), vt + k);
            }
            let idx: Vec<usize> = (enc.answer_numbers_at..enc.answer_numbers_at + batch.a_numbers.len()).collect();
            let ah = self.tape.gather_rows(enc.char_states, &idx)?;
            let proj = self.linear(ah, "charenc.to_tgt")?;
            self.tape.concat_rows(&[tgt_emb, proj])?
        } else {
            tgt_emb
        };

        let (mut s, mut cell) = (enc.s0, enc.cell0);
        let mut features = Vec::with_capacity(steps);
        let mut states = Vec::with_capacity(steps);
        let mut mems = Vec::with_capacity(steps);
        for t in 0..steps {
            let ids: Vec<usize> =
                (0..rows).map(|b| number_input.get(&(b, t)).copied().unwrap_or_else(|| batch.dec_input(b, t))).collect();
            let e = self.tape.gather_rows(table, &ids)?;
            let out = self.step(&enc, e, s, cell)?;
            s = out.s;
            cell = out.cell;
            features.push(out.features);
            states.push(out.s);
            mems.push(out.mem);
        }
        let all = self.tape.concat_rows(&features)?;
        let logits = self.output_logits(all)?;
        let inv = 1.0 / batch.target_count() as f64;
        let mut targets = Vec::with_capacity(steps * rows);
        let mut weights = Vec::with_capacity(steps * rows);
        for t in 0..steps {
            for b in 0..rows {
                targets.push(batch.target(b, t));
                weights.push(if batch.target_mask(b, t) { inv } else { 0.0 });
            }
        }
        let word = self.tape.softmax_cross_entropy(logits, &targets, &weights)?;

        if !hybrid || batch.a_numbers.is_empty() {
            return Ok(LossVars { total: word, word, chars: None });
        }
        let all_s = self.tape.concat_rows(&states)?;
        let all_m = self.tape.concat_rows(&mems)?;
        let at: Vec<usize> = batch.a_numbers.iter().map(|(b, t, _)| t * rows + b).collect();
        let sn = self.tape.gather_rows(all_s, &at)?;
        let mn = self.tape.gather_rows(all_m, &at)?;
        let gold = batch.a_numbers.iter().map(|(_, _, s)| number_to_chars(s)).collect::<std::result::Result<Vec<_>, _>>()?;
        let len = gold.iter().map(Vec::len).max().unwrap_or(0);
        let inv = 1.0 / batch.char_count() as f64;
        let (mut h, mut c) = self.char_init(sn, mn)?;
        let mut char_logits = Vec::with_capacity(len);
        let mut char_targets = Vec::with_capacity(len * gold.len());
        let mut char_weights = Vec::with_capacity(len * gold.len());
        for k in 0..len {
            let prev: Vec<usize> = gold
                .iter()
                .map(|g| if k == 0 { CharVocab::BOS } else { g.get(k - 1).copied().unwrap_or(CharVocab::PAD) })
                .collect();
            let (h2, c2, lg) = self.char_step(&prev, h, c, mn)?;
            h = h2;
            c = c2;
            char_logits.push(lg);
            for g in &gold {
                char_targets.push(g.get(k).copied().unwrap_or(CharVocab::PAD));
                char_weights.push(if k < g.len() { inv } else { 0.0 });
            }
        }
        let all_c = self.tape.concat_rows(&char_logits)?;
        let chars = self.tape.softmax_cross_entropy(all_c, &char_targets, &char_weights)?;
        let weighted = self.tape.scale(chars, lambda);
        let total = self.tape.add(word, weighted)?;
        Ok(LossVars { total, word, chars: Some(chars) })
    }
}
