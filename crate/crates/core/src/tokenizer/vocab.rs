use std::collections::{BTreeMap, HashMap};

use super::number::CharVocab;
use super::TokenizeError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;
pub const NUM: usize = 4;
/// First id of the inline number-character tokens.
pub const SEQ_CHAR_BASE: usize = 5;
/// Number of inline number-character tokens (digits, '.', '-', '_').
pub const SEQ_CHAR_COUNT: usize = CharVocab::SIZE - 2;
/// Ids below this are never assigned to learned tokens.
pub const RESERVED: usize = SEQ_CHAR_BASE + SEQ_CHAR_COUNT;

const SPECIALS: [&str; 5] = ["<pad>", "<unk>", "<bos>", "<eos>", "<num>"];

/// Inline token id for a [`CharVocab`] id.
pub fn seq_char_token(char_id: usize) -> Option<usize> {
    (2..CharVocab::SIZE).contains(&char_id).then(|| SEQ_CHAR_BASE + char_id - 2)
}

/// [`CharVocab`] id of an inline number-character token.
pub fn seq_char_of(token: usize) -> Option<usize> {
    (SEQ_CHAR_BASE..RESERVED).contains(&token).then(|| token - SEQ_CHAR_BASE + 2)
}

/// Token table with PAD, UNK, BOS, EOS, NUM at 0–4 and number characters at 5–17.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    fn reserved() -> Vec<String> {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for c in CharVocab::emittable() {
            tokens.push(format!("#{}", CharVocab::char_of(c).expect("emittable char")));
        }
        tokens
    }

    fn from_tokens(tokens: Vec<String>) -> Result<Self, TokenizeError> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i).is_some() {
                return Err(TokenizeError::Format { line: i + 1, message: format!("duplicate token {t:?}") });
            }
        }
        Ok(Vocab { tokens, ids })
    }

    /// Reserved tokens, then learned tokens by descending count (ties in
    /// lexicographic order) until `cap` entries in total.
    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>, cap: usize) -> Self {
        let mut all = Vocab::reserved();
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(t, _)| !all.iter().any(|r| r == t)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let room = cap.saturating_sub(all.len());
        all.extend(ranked.into_iter().take(room).map(|(t, _)| t.to_string()));
        Vocab::from_tokens(all).expect("distinct tokens")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_text(&self) -> String {
        self.tokens.iter().map(|t| format!("{t}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizeError> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        let reserved = Vocab::reserved();
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved[..] {
            return Err(TokenizeError::Format { line: 1, message: "reserved tokens missing or reordered".into() });
        }
        Vocab::from_tokens(tokens)
    }
}
