//! Nearest training answer by question overlap and moving-average trend.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{QAInstance, StockKB};
use crate::tokenizer::{segment, Piece, PreSplit};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("retrieval index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

/// Word-level token set of a question with every number replaced by `<num>`.
pub fn question_token_set(question: &str) -> BTreeSet<String> {
    segment(question, PreSplit::Whitespace)
        .into_iter()
        .map(|p| match p {
            Piece::Number(_) => "<num>".to_string(),
            other => other.as_string(),
        })
        .collect()
}

/// `|A∩B| / |A∪B|`, 1 when both sets are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrendMeasure {
    /// `(cos + 1) / 2`.
    #[default]
    Cosine,
    /// `exp(−‖a − b‖₁)`.
    L1,
}

pub fn trend_similarity(a: &[f64; 3], b: &[f64; 3], measure: TrendMeasure) -> f64 {
    match measure {
        TrendMeasure::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum();
            let nb: f64 = b.iter().map(|x| x * x).sum();
            if na == 0.0 || nb == 0.0 {
                return 0.5;
            }
            let cos = (dot / (na * nb).sqrt()).clamp(-1.0, 1.0);
            (cos + 1.0) / 2.0
        }
        TrendMeasure::L1 => (-a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()).exp(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub question_weight: f64,
    pub trend_weight: f64,
    pub measure: TrendMeasure,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { question_weight: 0.5, trend_weight: 0.5, measure: TrendMeasure::Cosine }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub question_tokens: BTreeSet<String>,
    pub trend: [f64; 3],
    pub answer: String,
}

impl IndexEntry {
    pub fn from_instance(inst: &QAInstance) -> Self {
        IndexEntry {
            id: inst.id.clone(),
            question_tokens: question_token_set(&inst.question),
            trend: inst.kb.trend_vector(),
            answer: inst.answer.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Retrieved {
    pub hits: Vec<Hit>,
    /// `k` exceeded the index size, so every entry was returned.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrievalIndex {
    entries: Vec<IndexEntry>,
    config: RetrievalConfig,
}

fn rank(a: &(f64, &str), b: &(f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

impl RetrievalIndex {
    pub fn build(instances: &[QAInstance], config: RetrievalConfig) -> Self {
        RetrievalIndex { entries: instances.iter().map(IndexEntry::from_instance).collect(), config }
    }

    pub fn from_entries(entries: Vec<IndexEntry>, config: RetrievalConfig) -> Self {
        RetrievalIndex { entries, config }
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn config(&self) -> RetrievalConfig {
        self.config
    }

    /// Score of `entry` for a query token set and trend vector.
    pub fn score(&self, tokens: &BTreeSet<String>, trend: &[f64; 3], entry: &IndexEntry) -> f64 {
        self.config.question_weight * jaccard(tokens, &entry.question_tokens)
            + self.config.trend_weight * trend_similarity(trend, &entry.trend, self.config.measure)
    }

    /// Top `k` entries by descending score, ties by ascending id.
    pub fn retrieve(&self, question: &str, kb: &StockKB, k: usize) -> Result<Retrieved, RetrievalError> {
        self.retrieve_excluding(question, kb, k, None)
    }

    /// As [`retrieve`](Self::retrieve), skipping the entry whose id is `exclude`.
    pub fn retrieve_excluding(
        &self,
        question: &str,
        kb: &StockKB,
        k: usize,
        exclude: Option<&str>,
    ) -> Result<Retrieved, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let tokens = question_token_set(question);
        let trend = kb.trend_vector();
        let mut scored: Vec<(f64, &str, usize)> = self
            .entries
            .iter()
            .enumerate()
            .filter(|(_, e)| Some(e.id.as_str()) != exclude)
            .map(|(i, e)| (self.score(&tokens, &trend, e), e.id.as_str(), i))
            .collect();
        if scored.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let truncated = k > scored.len();
        let cmp = |a: &(f64, &str, usize), b: &(f64, &str, usize)| rank(&(a.0, a.1), &(b.0, b.1));
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_by(cmp);
        let hits = scored
            .into_iter()
            .map(|(score, id, i)| Hit { id: id.to_string(), score, answer: self.entries[i].answer.clone() })
            .collect();
        Ok(Retrieved { hits, truncated })
    }

    /// One JSON entry per line.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let err = |e: &dyn std::fmt::Display| RetrievalError::Io { path: path.display().to_string(), message: e.to_string() };
        let mut w = BufWriter::new(File::create(path).map_err(|e| err(&e))?);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e).map_err(|e| err(&e))?;
            w.write_all(b"\n").map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))
    }

    pub fn load(path: &Path, config: RetrievalConfig) -> Result<Self, RetrievalError> {
        let p = path.display().to_string();
        let file = File::open(path).map_err(|e| RetrievalError::Io { path: p.clone(), message: e.to_string() })?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RetrievalError::Io { path: p.clone(), message: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let e: IndexEntry = serde_json::from_str(&line)
                .map_err(|e| RetrievalError::Parse { path: p.clone(), line: i + 1, message: e.to_string() })?;
            entries.push(e);
        }
        Ok(RetrievalIndex { entries, config })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Feature, TemplateSet, FEATURE_COUNT};
    use proptest::prelude::*;

    fn set(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn jaccard_cases() {
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["a", "b"])), 1.0);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&["a", "b", "c"]), &set(&["b", "c", "d"])), 0.5);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn numbers_are_masked() {
        assert_eq!(question_token_set("bought at 14.4"), question_token_set("bought at 15.2"));
    }

    #[test]
    fn trend_cases() {
        let c = TrendMeasure::Cosine;
        assert_eq!(trend_similarity(&[1.02, 0.98, 1.1], &[1.02, 0.98, 1.1], c), 1.0);
        assert_eq!(trend_similarity(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0], c), 0.0);
        assert_eq!(trend_similarity(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], c), 0.5);
        assert_eq!(trend_similarity(&[0.0; 3], &[1.0, 1.0, 1.0], c), 0.5);
        assert_eq!(trend_similarity(&[1.0; 3], &[1.0; 3], TrendMeasure::L1), 1.0);
    }

    fn kb_with_trend(open: f64, ma: [f64; 3]) -> StockKB {
        let mut kb = StockKB::new([1.0; FEATURE_COUNT]);
        kb.set(Feature::Open, open);
        kb.set(Feature::MovAvg5, ma[0]);
        kb.set(Feature::MovAvg10, ma[1]);
        kb.set(Feature::MovAvg20, ma[2]);
        kb
    }

    fn inst(id: &str, q: &str, kb: StockKB) -> QAInstance {
        QAInstance { id: id.into(), question: q.into(), answer: format!("answer {id}"), kb }
    }

    #[test]
    fn small_index_matches_hand_scores() {
        let data = vec![
            inst("c", "what is the support ?", kb_with_trend(10.0, [10.0, 10.0, 10.0])),
            inst("a", "what is the trend ?", kb_with_trend(10.0, [10.0, 10.0, 10.0])),
            inst("b", "is it rising", kb_with_trend(10.0, [5.0, 10.0, 20.0])),
        ];
        let index = RetrievalIndex::build(&data, RetrievalConfig::default());
        let q = "what is the support ?";
        let kb = kb_with_trend(10.0, [10.0, 10.0, 10.0]);
        let r = index.retrieve(q, &kb, 3).unwrap();
        let ids: Vec<&str> = r.hits.iter().map(|h| h.id.as_str()).collect();
        // c: 0.5·1 + 0.5·1; a: 0.5·(4/6) + 0.5; b: 0.5·(1/7) + 0.5·(cos+1)/2
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(r.hits[0].score, 1.0);
        assert!((r.hits[1].score - (0.5 * 4.0 / 6.0 + 0.5)).abs() < 1e-15);
        let t = [2.0f64, 1.0, 0.5];
        let cos = 3.5 / (3.0f64 * t.iter().map(|x| x * x).sum::<f64>()).sqrt();
        assert!((r.hits[2].score - (0.5 / 7.0 + 0.5 * (cos + 1.0) / 2.0)).abs() < 1e-15);
        assert!(!r.truncated);
        let all = index.retrieve(q, &kb, 10).unwrap();
        assert!(all.truncated && all.hits.len() == 3);
        assert!(matches!(index.retrieve(q, &kb, 0), Err(RetrievalError::ZeroK)));
        let excl = index.retrieve_excluding(q, &kb, 1, Some("c")).unwrap();
        assert_eq!(excl.hits[0].id, "a");
    }

    #[test]
    fn ties_break_by_id() {
        let kb = kb_with_trend(10.0, [10.0, 10.0, 10.0]);
        let data = vec![inst("b", "x", kb.clone()), inst("a", "x", kb.clone())];
        let index = RetrievalIndex::build(&data, RetrievalConfig::default());
        let r = index.retrieve("x", &kb, 2).unwrap();
        assert_eq!(r.hits[0].id, "a");
        let one = RetrievalIndex::build(&data[..1], RetrievalConfig::default());
        assert_eq!(one.retrieve("zzz", &kb, 1).unwrap().hits[0].id, "b");
        let empty = RetrievalIndex::build(&[], RetrievalConfig::default());
        assert!(matches!(empty.retrieve("x", &kb, 1), Err(RetrievalError::EmptyIndex)));
    }

    #[test]
    fn self_retrieval_and_persistence() {
        let data = generate_synthetic(200, 3, &TemplateSet::default());
        let index = RetrievalIndex::build(&data, RetrievalConfig::default());
        for d in &data {
            let r = index.retrieve(&d.question, &d.kb, 1).unwrap();
            assert_eq!(r.hits[0].score, 1.0);
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.jsonl");
        index.save(&p).unwrap();
        assert_eq!(RetrievalIndex::load(&p, RetrievalConfig::default()).unwrap(), index);
    }

    proptest! {
        #[test]
        fn similarities_symmetric_and_bounded(
            a in prop::collection::vec(0.5f64..1.5, 3),
            b in prop::collection::vec(0.5f64..1.5, 3),
        ) {
            let (a, b) = ([a[0], a[1], a[2]], [b[0], b[1], b[2]]);
            for m in [TrendMeasure::Cosine, TrendMeasure::L1] {
                let s = trend_similarity(&a, &b, m);
                prop_assert!((0.0..=1.0).contains(&s));
                prop_assert_eq!(s, trend_similarity(&b, &a, m));
            }
        }
    }
}
