use crate::corpus::{QAInstance, FEATURE_COUNT};
use crate::tokenizer::{Side, TokenizedText, Tokenizer, BOS, EOS, NUM, PAD};

use super::{ModelError, Variant};

/// One tokenized training or inference instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub question: TokenizedText,
    /// Rendered KB values in feature order.
    pub kb: Vec<String>,
    pub answer: TokenizedText,
    /// Target-side ids of a retrieved answer; `Some(vec![])` marks an empty retrieval.
    pub retrieved: Option<Vec<usize>>,
}

impl Example {
    /// Tokenizes `inst`. The sequential variant spells numbers inline; the
    /// hybrid variant keeps `<num>` placeholders with their surfaces.
    pub fn new(
        inst: &QAInstance,
        tokenizer: &Tokenizer,
        variant: Variant,
        retrieved: Option<&str>,
    ) -> Result<Self, ModelError> {
        let question = tokenizer.encode(&inst.question, Side::Source);
        if question.tokens.is_empty() {
            return Err(ModelError::Contract(format!("instance {} has an empty question", inst.id)));
        }
        let answer = tokenizer.encode(&inst.answer, Side::Target);
        let retrieved = retrieved.map(|text| {
            let t = tokenizer.encode(text, Side::Target);
            match variant {
                Variant::Sequential => t.inline_numbers(),
                Variant::Hybrid => t.tokens,
            }
        });
        Ok(Example::from_parts(question, inst.kb.surfaces(), answer, retrieved, variant))
    }

    pub fn from_parts(
        question: TokenizedText,
        kb: Vec<String>,
        answer: TokenizedText,
        retrieved: Option<Vec<usize>>,
        variant: Variant,
    ) -> Self {
        let inline = |t: TokenizedText| match variant {
            Variant::Sequential => TokenizedText { tokens: t.inline_numbers(), number_slots: Vec::new() },
            Variant::Hybrid => t,
        };
        Example { question: inline(question), kb, answer: inline(answer), retrieved }
    }
}

/// Right-padded batch. Row indices into step-major matrices are `t·size + b`.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub q_len: usize,
    pub dec_len: usize,
    pub questions: Vec<Vec<usize>>,
    /// `(row b, position j, surface)` for question numbers, in row order.
    pub q_numbers: Vec<(usize, usize, String)>,
    /// `size · 14` rendered KB values, row-major by instance.
    pub kb_surfaces: Vec<String>,
    /// Decoder inputs per row: `<bos>` then the answer.
    pub dec_inputs: Vec<Vec<usize>>,
    /// Targets per row: the answer then `<eos>`.
    pub targets: Vec<Vec<usize>>,
    /// `(row b, target step t, surface)` for every gold `<num>` target.
    pub a_numbers: Vec<(usize, usize, String)>,
    pub retrieved: Option<Vec<Vec<usize>>>,
    pub ret_len: usize,
}

impl Batch {
    pub fn new(examples: &[&Example]) -> Result<Self, ModelError> {
        if examples.is_empty() {
            return Err(ModelError::Contract("empty batch".into()));
        }
        let mut b = Batch {
            size: examples.len(),
            q_len: 0,
            dec_len: 0,
            questions: Vec::new(),
            q_numbers: Vec::new(),
            kb_surfaces: Vec::new(),
            dec_inputs: Vec::new(),
            targets: Vec::new(),
            a_numbers: Vec::new(),
            retrieved: None,
            ret_len: 0,
        };
        let with_ret = examples[0].retrieved.is_some();
        let mut retrieved = Vec::new();
        for (row, ex) in examples.iter().enumerate() {
            if ex.question.tokens.is_empty() {
                return Err(ModelError::Contract("empty question".into()));
            }
            if ex.kb.len() != FEATURE_COUNT {
                return Err(ModelError::Contract(format!("knowledge base with {} values", ex.kb.len())));
            }
            if ex.retrieved.is_some() != with_ret {
                return Err(ModelError::Contract("retrieved answers present for only part of the batch".into()));
            }
            b.q_len = b.q_len.max(ex.question.tokens.len());
            b.questions.push(ex.question.tokens.clone());
            b.q_numbers.extend(ex.question.number_slots.iter().map(|(j, s)| (row, *j, s.clone())));
            b.kb_surfaces.extend(ex.kb.iter().cloned());
            let mut input = vec![BOS];
            input.extend(&ex.answer.tokens);
            let mut target = ex.answer.tokens.clone();
            target.push(EOS);
            b.dec_len = b.dec_len.max(target.len());
            b.a_numbers.extend(ex.answer.number_slots.iter().map(|(t, s)| (row, *t, s.clone())));
            b.dec_inputs.push(input);
            b.targets.push(target);
            if let Some(r) = &ex.retrieved {
                b.ret_len = b.ret_len.max(r.len());
                retrieved.push(r.clone());
            }
        }
        if with_ret {
            b.ret_len = b.ret_len.max(1);
            b.retrieved = Some(retrieved);
        }
        Ok(b)
    }

    /// Extends the padded lengths; padding never changes any loss value.
    pub fn pad_to(&mut self, q_len: usize, dec_len: usize) {
        self.q_len = self.q_len.max(q_len);
        self.dec_len = self.dec_len.max(dec_len);
    }

    pub fn question_token(&self, b: usize, j: usize) -> usize {
        self.questions[b].get(j).copied().unwrap_or(PAD)
    }

    pub fn question_mask(&self, b: usize, j: usize) -> bool {
        j < self.questions[b].len()
    }

    pub fn dec_input(&self, b: usize, t: usize) -> usize {
        self.dec_inputs[b].get(t).copied().unwrap_or(PAD)
    }

    pub fn target(&self, b: usize, t: usize) -> usize {
        self.targets[b].get(t).copied().unwrap_or(PAD)
    }

    pub fn target_mask(&self, b: usize, t: usize) -> bool {
        t < self.targets[b].len()
    }

    pub fn target_count(&self) -> usize {
        self.targets.iter().map(Vec::len).sum()
    }

    /// Gold characters over all answer numbers, boundary tags included.
    pub fn char_count(&self) -> usize {
        self.a_numbers.iter().map(|(_, _, s)| s.chars().count() + 1).sum()
    }

    pub fn has_numbers(&self) -> bool {
        self.targets.iter().flatten().any(|&t| t == NUM)
    }
}
