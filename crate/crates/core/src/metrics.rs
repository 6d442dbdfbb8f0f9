//! BLEU-2, distinct-n, unique n-gram counts and the label-to-score heuristic.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::pre_tokenize;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("no candidates to score")]
    Empty,
    #[error("{candidates} candidates but {references} references")]
    LengthMismatch { candidates: usize, references: usize },
}

/// Word-level tokens with numbers kept as surfaces.
pub fn words(text: &str) -> Vec<String> {
    pre_tokenize(text)
}

pub fn ngrams<T>(tokens: &[T], n: usize) -> impl Iterator<Item = &[T]> {
    let n = n.max(1);
    tokens.windows(n)
}

fn counts<T: std::hash::Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    for g in ngrams(tokens, n) {
        *m.entry(g).or_insert(0) += 1;
    }
    m
}

/// Corpus BLEU over 1- and 2-grams with brevity penalty. Orders for which
/// the candidates hold no n-gram at all are left out of the geometric mean.
pub fn bleu2(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64, MetricError> {
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    if candidates.len() != references.len() {
        return Err(MetricError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    let c_len: usize = candidates.iter().map(Vec::len).sum();
    let r_len: usize = references.iter().map(Vec::len).sum();
    if c_len == 0 {
        return Ok(if r_len == 0 { 1.0 } else { 0.0 });
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 1..=2 {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let rc = counts(r, n);
            for (g, k) in counts(c, n) {
                matched += k.min(rc.get(g).copied().unwrap_or(0));
                total += k;
            }
        }
        if total == 0 {
            continue;
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
        orders += 1;
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    Ok((bp * (log_sum / orders as f64).exp()).min(1.0))
}

/// Unique n-grams over the whole set divided by the total n-gram count.
pub fn distinct_n(answers: &[Vec<String>], n: usize) -> f64 {
    let mut unique = HashSet::new();
    let mut total = 0usize;
    for a in answers {
        for g in ngrams(a, n) {
            unique.insert(g);
            total += 1;
        }
    }
    unique.len() as f64 / total.max(1) as f64
}

/// Mean of per-answer distinct-n over answers that hold at least one n-gram.
pub fn distinct_n_per_answer(answers: &[Vec<String>], n: usize) -> f64 {
    let scores: Vec<f64> = answers
        .iter()
        .filter(|a| a.len() >= n.max(1))
        .map(|a| distinct_n(std::slice::from_ref(a), n))
        .collect();
    if scores.is_empty() {
        0.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

pub fn unique_ngram_count(answers: &[Vec<String>], n: usize) -> usize {
    answers.iter().flat_map(|a| ngrams(a, n)).collect::<HashSet<_>>().len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relevance {
    Poor,
    Normal,
    Good,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fluency {
    Yes,
    No,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    Errors,
    NoErrors,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Informativeness {
    Poor,
    Normal,
    Good,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QualityLabels {
    pub relevance: Relevance,
    pub fluency: Fluency,
    pub precision: Precision,
    pub informativeness: Informativeness,
}

impl QualityLabels {
    /// All 36 label combinations.
    pub fn all() -> Vec<QualityLabels> {
        let mut out = Vec::with_capacity(36);
        for relevance in [Relevance::Poor, Relevance::Normal, Relevance::Good] {
            for fluency in [Fluency::Yes, Fluency::No] {
                for precision in [Precision::Errors, Precision::NoErrors] {
                    for informativeness in [Informativeness::Poor, Informativeness::Normal, Informativeness::Good] {
                        out.push(QualityLabels { relevance, fluency, precision, informativeness });
                    }
                }
            }
        }
        out
    }
}

pub fn heuristic_score(labels: &QualityLabels) -> f64 {
    if labels.relevance == Relevance::Poor {
        return 0.0;
    }
    if labels.relevance == Relevance::Normal || labels.fluency == Fluency::No || labels.precision == Precision::Errors {
        return 0.25;
    }
    match labels.informativeness {
        Informativeness::Poor => 0.5,
        Informativeness::Normal => 0.75,
        Informativeness::Good => 1.0,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu2: f64,
    pub distinct: BTreeMap<usize, f64>,
    pub unique_counts: BTreeMap<usize, usize>,
    pub mean_heuristic_score: Option<f64>,
}

impl MetricReport {
    /// Scores candidate texts against reference texts, n-grams for n in 1..=4.
    pub fn compute(
        candidates: &[String],
        references: &[String],
        labels: Option<&[QualityLabels]>,
        per_answer_distinct: bool,
    ) -> Result<Self, MetricError> {
        let cand: Vec<Vec<String>> = candidates.iter().map(|s| words(s)).collect();
        let refs: Vec<Vec<String>> = references.iter().map(|s| words(s)).collect();
        let bleu2 = bleu2(&cand, &refs)?;
        let distinct = (1..=4)
            .map(|n| (n, if per_answer_distinct { distinct_n_per_answer(&cand, n) } else { distinct_n(&cand, n) }))
            .collect();
        let unique_counts = (1..=4).map(|n| (n, unique_ngram_count(&cand, n))).collect();
        let mean_heuristic_score = labels
            .filter(|l| !l.is_empty())
            .map(|l| l.iter().map(heuristic_score).sum::<f64>() / l.len() as f64);
        Ok(MetricReport { bleu2, distinct, unique_counts, mean_heuristic_score })
    }

    /// Plain-text diversity and informativeness tables.
    pub fn table(&self) -> String {
        let mut s = format!("BLEU-2: {:.4}\n\nDiversity (distinct-n)\n", self.bleu2);
        s.push_str("  n=1     n=2     n=3     n=4\n");
        s.push_str(&(1..=4).map(|n| format!("  {:.4}", self.distinct[&n])).collect::<String>());
        s.push_str("\n\nInformativeness (unique n-grams)\n  n=1     n=2     n=3     n=4\n");
        s.push_str(&(1..=4).map(|n| format!("  {:<6}", self.unique_counts[&n])).collect::<String>());
        s.push('\n');
        if let Some(h) = self.mean_heuristic_score {
            s.push_str(&format!("\nMean heuristic score: {h:.4}\n"));
        }
        s
    }
}
