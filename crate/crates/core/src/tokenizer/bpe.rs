//! Byte-pair merges over number- and punctuation-free words.

use std::collections::{BTreeMap, HashMap};

pub const END_OF_WORD: &str = "</w>";

/// Ordered merge table; earlier merges have priority when applied.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Merges {
    pairs: Vec<(String, String)>,
    rank: HashMap<(String, String), usize>,
}

impl Merges {
    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        let rank = pairs.iter().cloned().enumerate().map(|(i, p)| (p, i)).collect();
        Merges { pairs, rank }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Splits `word` into merged symbols; the last carries [`END_OF_WORD`].
    pub fn apply(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.rank.get(&(w[0].clone(), w[1].clone())).map(|&r| (r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", symbols[i], symbols[i + 1]);
            symbols.splice(i..i + 2, [merged]);
        }
        symbols
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(a, b)| format!("{a} {b}\n")).collect()
    }

    pub fn from_text(text: &str) -> Option<Self> {
        let mut pairs = Vec::new();
        for line in text.lines().filter(|l| !l.is_empty()) {
            let (a, b) = line.split_once(' ')?;
            pairs.push((a.to_string(), b.to_string()));
        }
        Some(Merges::from_pairs(pairs))
    }
}

fn initial_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .into_iter()
        .enumerate()
        .map(|(i, c)| if i + 1 == n { format!("{c}{END_OF_WORD}") } else { c.to_string() })
        .collect()
}

/// Greedy most-frequent-pair merging. Ties go to the lexicographically
/// smaller pair; stops after `budget` merges or when no pair occurs twice.
pub fn train<'a>(words: impl IntoIterator<Item = &'a str>, budget: usize) -> Merges {
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for w in words {
        if !w.is_empty() {
            *freq.entry(w).or_default() += 1;
        }
    }
    let mut vocab: Vec<(Vec<String>, usize)> =
        freq.into_iter().map(|(w, c)| (initial_symbols(w), c)).collect();
    let mut pairs = Vec::new();
    while pairs.len() < budget {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (symbols, c) in &vocab {
            for w in symbols.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)));
        let Some(((a, b), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (a, b) = (a.to_string(), b.to_string());
        let merged = format!("{a}{b}");
        for (symbols, _) in vocab.iter_mut() {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols.splice(i..i + 2, [merged.clone()]);
                }
                i += 1;
            }
        }
        pairs.push((a, b));
    }
    Merges::from_pairs(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_merge_by_hand_count() {
        // "aaab" twice: (a,a) occurs 2 per word = 4, (a,b</w>) 2.
        let m = train(["aaab", "aaab"], 1);
        assert_eq!(m.pairs(), &[("a".to_string(), "a".to_string())]);
    }

    #[test]
    fn zero_budget_is_character_level() {
        let m = train(["hold", "hold"], 0);
        assert!(m.is_empty());
        assert_eq!(m.apply("hold"), vec!["h", "o", "l", "d</w>"]);
    }

    #[test]
    fn deterministic_and_tie_break() {
        let words = ["ab", "cd", "ab", "cd", "xy"];
        let a = train(words, 10);
        assert_eq!(a, train(words, 10));
        // (a,b</w>) and (c,d</w>) tie at 2; the smaller pair wins.
        assert_eq!(a.pairs()[0], ("a".to_string(), "b</w>".to_string()));
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn apply_reproduces_training_segmentation() {
        let m = train(["support", "support", "level", "level", "low"], 100);
        assert_eq!(m.apply("support"), vec!["support</w>"]);
        assert_eq!(m.apply("level"), vec!["level</w>"]);
        assert_eq!(m.apply("lot").concat(), "lot</w>");
        assert_eq!(Merges::from_text(&m.to_text()).unwrap(), m);
    }
}
