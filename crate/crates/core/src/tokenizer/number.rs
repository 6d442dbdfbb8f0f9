use std::ops::Range;
use std::sync::OnceLock;

use regex::Regex;

use super::TokenizeError;

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?[0-9]+(?:\.[0-9]+)?").expect("number pattern"))
}

fn whole_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^-?[0-9]+(?:\.[0-9]+)?$").expect("number pattern"))
}

/// Maximal non-overlapping number matches, left to right.
pub fn detect_numbers(text: &str) -> Vec<(Range<usize>, String)> {
    number_re()
        .find_iter(text)
        .map(|m| (m.range(), m.as_str().to_string()))
        .collect()
}

pub fn is_number(surface: &str) -> bool {
    whole_number_re().is_match(surface)
}

/// Closed character set for number spelling.
pub struct CharVocab;

impl CharVocab {
    pub const PAD: usize = 0;
    pub const BOS: usize = 1;
    pub const POINT: usize = 12;
    pub const MINUS: usize = 13;
    pub const BOUNDARY: usize = 14;
    pub const SIZE: usize = 15;
    /// Longest spelled number before a boundary is forced.
    pub const MAX_CHARS: usize = 10;

    pub fn id(c: char) -> Option<usize> {
        match c {
            '0'..='9' => Some(2 + (c as usize - '0' as usize)),
            '.' => Some(Self::POINT),
            '-' => Some(Self::MINUS),
            '_' => Some(Self::BOUNDARY),
            _ => None,
        }
    }

    pub fn char_of(id: usize) -> Option<char> {
        match id {
            2..=11 => Some((b'0' + (id - 2) as u8) as char),
            Self::POINT => Some('.'),
            Self::MINUS => Some('-'),
            Self::BOUNDARY => Some('_'),
            _ => None,
        }
    }

    /// Ids that may be emitted while spelling a number.
    pub fn emittable() -> impl Iterator<Item = usize> {
        2..Self::SIZE
    }
}

/// Char ids of `surface` followed by the boundary tag.
pub fn number_to_chars(surface: &str) -> Result<Vec<usize>, TokenizeError> {
    if !is_number(surface) {
        return Err(TokenizeError::NotANumber(surface.to_string()));
    }
    let mut ids: Vec<usize> = surface.chars().map(|c| CharVocab::id(c).expect("number char")).collect();
    ids.push(CharVocab::BOUNDARY);
    Ok(ids)
}

/// Inverse of [`number_to_chars`]; stops at the first boundary tag.
pub fn chars_to_number(ids: &[usize]) -> String {
    ids.iter()
        .take_while(|&&i| i != CharVocab::BOUNDARY)
        .filter_map(|&i| CharVocab::char_of(i))
        .collect()
}
