//! Number-aware segmentation.
//!
//! Text is cut at numbers and punctuation. Numbers become a `<num>`
//! placeholder with their surface kept aside, punctuation marks are single
//! tokens, and the remaining words are split into BPE subwords.

mod bpe;
mod number;
mod vocab;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bpe::{train as bpe_train, Merges, END_OF_WORD};
pub use number::{chars_to_number, detect_numbers, is_number, number_to_chars, CharVocab};
pub use vocab::{seq_char_of, seq_char_token, Vocab, BOS, EOS, NUM, PAD, RESERVED, SEQ_CHAR_BASE, SEQ_CHAR_COUNT, UNK};

#[derive(Debug, Error)]
pub enum TokenizeError {
    #[error("not a number: {0:?}")]
    NotANumber(String),
    #[error("malformed tokenizer file at line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// How number- and punctuation-free text is cut into BPE words.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PreSplit {
    /// Whitespace-separated words.
    #[default]
    Whitespace,
    /// Each fragment is one word with whitespace dropped, so merges start from single characters.
    Characters,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Piece {
    Word(String),
    Punct(char),
    Number(String),
}

impl Piece {
    pub fn as_string(&self) -> String {
        match self {
            Piece::Word(w) | Piece::Number(w) => w.clone(),
            Piece::Punct(c) => c.to_string(),
        }
    }
}

fn push_fragment(fragment: &str, mode: PreSplit, out: &mut Vec<Piece>) {
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<Piece>| {
        if !word.is_empty() {
            out.push(Piece::Word(std::mem::take(word)));
        }
    };
    for c in fragment.chars() {
        if c.is_whitespace() {
            if mode == PreSplit::Whitespace {
                flush(&mut word, out);
            }
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, out);
            out.push(Piece::Punct(c));
        }
    }
    flush(&mut word, out);
}

/// Numbers, punctuation marks and words of `text`, in order.
pub fn segment(text: &str, mode: PreSplit) -> Vec<Piece> {
    let mut out = Vec::new();
    let mut last = 0;
    for (span, surface) in detect_numbers(text) {
        push_fragment(&text[last..span.start], mode, &mut out);
        out.push(Piece::Number(surface));
        last = span.end;
    }
    push_fragment(&text[last..], mode, &mut out);
    out
}

/// Whitespace-mode segmentation as plain strings, numbers left in place.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    segment(text, PreSplit::Whitespace).iter().map(Piece::as_string).collect()
}

/// Canonical spacing: segments joined by single spaces.
pub fn normalize(text: &str, mode: PreSplit) -> String {
    segment(text, mode).iter().map(Piece::as_string).collect::<Vec<_>>().join(" ")
}

/// Token ids plus the surfaces behind each `<num>` placeholder.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedText {
    pub tokens: Vec<usize>,
    /// `(position in tokens, surface)` for every `<num>`, in order.
    pub number_slots: Vec<(usize, String)>,
}

impl TokenizedText {
    pub fn number_surfaces(&self) -> impl Iterator<Item = &str> {
        self.number_slots.iter().map(|(_, s)| s.as_str())
    }

    /// Tokens with every `<num>` spelled out as inline number-character tokens.
    pub fn inline_numbers(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.tokens.len());
        let mut slots = self.number_slots.iter();
        for &t in &self.tokens {
            if t == NUM {
                let (_, surface) = slots.next().expect("slot per placeholder");
                let chars = number_to_chars(surface).expect("slot surfaces are numbers");
                out.extend(chars.into_iter().map(|c| seq_char_token(c).expect("number char")));
            } else {
                out.push(t);
            }
        }
        out
    }

    /// Inverse of [`inline_numbers`](Self::inline_numbers). A run of number
    /// characters closes at a boundary token or at the first other token.
    pub fn collapse_numbers(tokens: &[usize]) -> TokenizedText {
        let mut out = TokenizedText::default();
        let mut run: Vec<usize> = Vec::new();
        let close = |run: &mut Vec<usize>, out: &mut TokenizedText| {
            if !run.is_empty() {
                out.number_slots.push((out.tokens.len(), chars_to_number(run)));
                out.tokens.push(NUM);
                run.clear();
            }
        };
        for &t in tokens {
            match seq_char_of(t) {
                Some(CharVocab::BOUNDARY) => {
                    run.push(CharVocab::BOUNDARY);
                    close(&mut run, &mut out);
                }
                Some(c) => run.push(c),
                None => {
                    close(&mut run, &mut out);
                    out.tokens.push(t);
                }
            }
        }
        close(&mut run, &mut out);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub merge_budget: usize,
    /// Cap on each vocabulary, reserved tokens included.
    pub vocab_cap: usize,
    pub pre_split: PreSplit,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig { merge_budget: 2000, vocab_cap: 5000, pre_split: PreSplit::Whitespace }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Source,
    Target,
}

/// Shared merge table with separate question and answer vocabularies.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pre_split: PreSplit,
    merges: Merges,
    source: Vocab,
    target: Vocab,
}

impl Tokenizer {
    pub fn train<'a>(
        questions: impl IntoIterator<Item = &'a str> + Clone,
        answers: impl IntoIterator<Item = &'a str> + Clone,
        config: &TokenizerConfig,
    ) -> Self {
        let mode = config.pre_split;
        let words = |texts: &mut dyn Iterator<Item = &'a str>| -> Vec<String> {
            texts
                .flat_map(|t| segment(t, mode))
                .filter_map(|p| match p {
                    Piece::Word(w) => Some(w),
                    _ => None,
                })
                .collect()
        };
        let mut all = words(&mut questions.clone().into_iter());
        all.extend(words(&mut answers.clone().into_iter()));
        let merges = bpe_train(all.iter().map(String::as_str), config.merge_budget);
        let strings = |texts: &mut dyn Iterator<Item = &'a str>| -> Vec<String> {
            texts.flat_map(|t| pieces_to_strings(&merges, segment(t, mode))).collect()
        };
        let src = strings(&mut questions.into_iter());
        let tgt = strings(&mut answers.into_iter());
        Tokenizer {
            pre_split: mode,
            source: Vocab::build(src.iter().map(String::as_str), config.vocab_cap),
            target: Vocab::build(tgt.iter().map(String::as_str), config.vocab_cap),
            merges,
        }
    }

    pub fn from_parts(pre_split: PreSplit, merges: Merges, source: Vocab, target: Vocab) -> Self {
        Tokenizer { pre_split, merges, source, target }
    }

    pub fn pre_split(&self) -> PreSplit {
        self.pre_split
    }

    pub fn merges(&self) -> &Merges {
        &self.merges
    }

    pub fn vocab(&self, side: Side) -> &Vocab {
        match side {
            Side::Source => &self.source,
            Side::Target => &self.target,
        }
    }

    pub fn encode(&self, text: &str, side: Side) -> TokenizedText {
        let vocab = self.vocab(side);
        let mut out = TokenizedText::default();
        for piece in segment(text, self.pre_split) {
            match piece {
                Piece::Number(s) => {
                    out.number_slots.push((out.tokens.len(), s));
                    out.tokens.push(NUM);
                }
                Piece::Punct(c) => out.tokens.push(vocab.id_or_unk(&c.to_string())),
                Piece::Word(w) => out.tokens.extend(self.merges.apply(&w).iter().map(|s| vocab.id_or_unk(s))),
            }
        }
        out
    }

    /// Renders ids as text. Stops at `<eos>`, skips `<pad>`/`<bos>`, fills
    /// `<num>` from `number_slots` in order and spells inline number tokens.
    pub fn decode(&self, tokens: &[usize], number_slots: &[String], side: Side) -> String {
        let vocab = self.vocab(side);
        let mut pieces: Vec<String> = Vec::new();
        let mut word = String::new();
        let mut digits: Vec<usize> = Vec::new();
        let mut slots = number_slots.iter();
        fn flush(buf: &mut String, pieces: &mut Vec<String>) {
            if !buf.is_empty() {
                pieces.push(std::mem::take(buf));
            }
        }
        for &t in tokens {
            if t == EOS {
                break;
            }
            if let Some(c) = seq_char_of(t) {
                flush(&mut word, &mut pieces);
                digits.push(c);
                if c == CharVocab::BOUNDARY {
                    pieces.push(chars_to_number(&digits));
                    digits.clear();
                }
                continue;
            }
            if !digits.is_empty() {
                pieces.push(chars_to_number(&digits));
                digits.clear();
            }
            match t {
                PAD | BOS => {}
                NUM => {
                    flush(&mut word, &mut pieces);
                    pieces.push(slots.next().cloned().unwrap_or_else(|| "<num>".into()));
                }
                _ => match vocab.token(t) {
                    Some(s) if t >= RESERVED && s.chars().next().is_some_and(char::is_alphanumeric) => {
                        match s.strip_suffix(END_OF_WORD) {
                            Some(stem) => {
                                word.push_str(stem);
                                flush(&mut word, &mut pieces);
                            }
                            None => word.push_str(s),
                        }
                    }
                    Some(s) if t >= RESERVED => {
                        flush(&mut word, &mut pieces);
                        pieces.push(s.to_string());
                    }
                    _ => {
                        flush(&mut word, &mut pieces);
                        pieces.push("<unk>".into());
                    }
                },
            }
        }
        flush(&mut word, &mut pieces);
        if !digits.is_empty() {
            pieces.push(chars_to_number(&digits));
        }
        pieces.join(" ")
    }

    pub fn decode_tokenized(&self, text: &TokenizedText, side: Side) -> String {
        let slots: Vec<String> = text.number_surfaces().map(str::to_string).collect();
        self.decode(&text.tokens, &slots, side)
    }

    /// Writes `pre_split.txt`, `merges.txt`, `source_vocab.txt` and `target_vocab.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), TokenizeError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| TokenizeError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mode = match self.pre_split {
            PreSplit::Whitespace => "whitespace\n",
            PreSplit::Characters => "characters\n",
        };
        for (name, body) in [
            ("pre_split.txt", mode.to_string()),
            ("merges.txt", self.merges.to_text()),
            ("source_vocab.txt", self.source.to_text()),
            ("target_vocab.txt", self.target.to_text()),
        ] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io(&p))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TokenizeError> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|source| TokenizeError::Io { path: p.display().to_string(), source })
        };
        let pre_split = match read("pre_split.txt")?.trim() {
            "whitespace" => PreSplit::Whitespace,
            "characters" => PreSplit::Characters,
            other => return Err(TokenizeError::Format { line: 1, message: format!("unknown pre-split {other:?}") }),
        };
        let merges_text = read("merges.txt")?;
        let merges = Merges::from_text(&merges_text)
            .ok_or_else(|| TokenizeError::Format { line: 0, message: "merge line without a space".into() })?;
        Ok(Tokenizer {
            pre_split,
            merges,
            source: Vocab::from_text(&read("source_vocab.txt")?)?,
            target: Vocab::from_text(&read("target_vocab.txt")?)?,
        })
    }
}

fn pieces_to_strings(merges: &Merges, pieces: Vec<Piece>) -> Vec<String> {
    pieces
        .into_iter()
        .flat_map(|p| match p {
            Piece::Word(w) => merges.apply(&w),
            Piece::Punct(c) => vec![c.to_string()],
            Piece::Number(_) => Vec::new(),
        })
        .collect()
}
