//! QA instances, stock knowledge bases, corpus files, and the synthetic generator.

mod kb;
mod synth;

pub use kb::{Feature, StockKB, FEATURE_COUNT};
pub use synth::{generate_synthetic, QuestionClass, TemplateSet};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::detect_numbers;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: missing KB feature {feature}")]
    MissingFeature { line: usize, feature: &'static str },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: cannot parse number {text:?} for {field}")]
    Parse { line: usize, field: String, text: String },
    #[error("corpus of {have} instances is too small for {need} held-out instances")]
    TooSmall { have: usize, need: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question: String,
    pub answer: String,
    pub kb: StockKB,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CorpusFormat {
    Jsonl,
    Tsv,
}

impl CorpusFormat {
    /// Guesses from the file extension; defaults to JSONL.
    pub fn from_path(path: &Path) -> CorpusFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("tsv") | Some("txt") => CorpusFormat::Tsv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let reader = BufReader::new(File::open(path).map_err(io_err(path))?);
    reader.lines().map(|l| l.map_err(io_err(path))).collect()
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<QAInstance>, CorpusError> {
    let lines = read_lines(path)?;
    parse_corpus(lines.iter().map(String::as_str), format)
}

/// Like [`load_corpus`], but records without an answer get an empty one.
pub fn load_queries(path: &Path, format: CorpusFormat) -> Result<Vec<QAInstance>, CorpusError> {
    let lines = read_lines(path)?;
    parse_records(lines.iter().map(String::as_str), format, false)
}

/// Parses corpus lines; line numbers in errors are 1-based.
pub fn parse_corpus<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    format: CorpusFormat,
) -> Result<Vec<QAInstance>, CorpusError> {
    parse_records(lines, format, true)
}

fn parse_records<'a>(
    lines: impl IntoIterator<Item = &'a str>,
    format: CorpusFormat,
    require_answer: bool,
) -> Result<Vec<QAInstance>, CorpusError> {
    let mut out = Vec::new();
    for (i, line) in lines.into_iter().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record = match format {
            CorpusFormat::Jsonl => parse_json_line(line, lineno, out.len(), require_answer)?,
            CorpusFormat::Tsv => {
                if lineno == 1 && line.starts_with("id\t") {
                    continue;
                }
                parse_tsv_line(line, lineno, out.len(), require_answer)?
            }
        };
        out.push(record);
    }
    Ok(out)
}

fn number_field(v: &serde_json::Value, line: usize, field: &str) -> Result<f64, CorpusError> {
    let parsed = match v {
        serde_json::Value::Number(n) => n.as_f64(),
        serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    parsed.filter(|x| x.is_finite()).ok_or_else(|| CorpusError::Parse {
        line,
        field: field.to_string(),
        text: v.to_string(),
    })
}

fn text_field(obj: &serde_json::Map<String, serde_json::Value>, key: &str, line: usize) -> Result<String, CorpusError> {
    match obj.get(key) {
        Some(serde_json::Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(serde_json::Value::String(_)) => Err(CorpusError::Schema { line, message: format!("{key} is empty") }),
        _ => Err(CorpusError::Schema { line, message: format!("missing text field {key}") }),
    }
}

fn parse_json_line(line: &str, lineno: usize, index: usize, require_answer: bool) -> Result<QAInstance, CorpusError> {
    let value: serde_json::Value = serde_json::from_str(line).map_err(|e| {
        if e.is_syntax() {
            CorpusError::Parse { line: lineno, field: "record".into(), text: e.to_string() }
        } else {
            CorpusError::Schema { line: lineno, message: e.to_string() }
        }
    })?;
    let obj = value
        .as_object()
        .ok_or_else(|| CorpusError::Schema { line: lineno, message: "record is not an object".into() })?;
    let id = match obj.get("id") {
        Some(serde_json::Value::String(s)) => s.clone(),
        Some(serde_json::Value::Number(n)) => n.to_string(),
        _ => index.to_string(),
    };
    let question = text_field(obj, "question", lineno)?;
    let answer = if require_answer || obj.contains_key("answer") {
        text_field(obj, "answer", lineno)?
    } else {
        String::new()
    };
    let kb_obj = obj
        .get("kb")
        .and_then(|k| k.as_object())
        .ok_or_else(|| CorpusError::Schema { line: lineno, message: "missing kb object".into() })?;
    let mut values = [0.0; FEATURE_COUNT];
    for f in Feature::ALL {
        let v = kb_obj
            .get(f.name())
            .ok_or(CorpusError::MissingFeature { line: lineno, feature: f.name() })?;
        values[f.index()] = number_field(v, lineno, f.name())?;
    }
    Ok(QAInstance { id, question, answer, kb: StockKB::new(values) })
}

fn parse_tsv_line(line: &str, lineno: usize, index: usize, require_answer: bool) -> Result<QAInstance, CorpusError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() < 3 {
        return Err(CorpusError::Schema { line: lineno, message: format!("{} columns", cols.len()) });
    }
    let mut values = [0.0; FEATURE_COUNT];
    for f in Feature::ALL {
        let text = cols
            .get(3 + f.index())
            .ok_or(CorpusError::MissingFeature { line: lineno, feature: f.name() })?;
        values[f.index()] = text
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| CorpusError::Parse {
                line: lineno,
                field: f.name().into(),
                text: text.to_string(),
            })?;
    }
    if cols.len() > 3 + FEATURE_COUNT {
        return Err(CorpusError::Schema {
            line: lineno,
            message: format!("{} columns, expected {}", cols.len(), 3 + FEATURE_COUNT),
        });
    }
    let id = if cols[0].trim().is_empty() { index.to_string() } else { cols[0].to_string() };
    for (name, text) in [("question", cols[1]), ("answer", cols[2])] {
        if text.trim().is_empty() && (require_answer || name == "question") {
            return Err(CorpusError::Schema { line: lineno, message: format!("{name} is empty") });
        }
    }
    Ok(QAInstance {
        id,
        question: cols[1].to_string(),
        answer: cols[2].to_string(),
        kb: StockKB::new(values),
    })
}

pub fn write_corpus<W: Write>(instances: &[QAInstance], format: CorpusFormat, mut w: W) -> std::io::Result<()> {
    for inst in instances {
        match format {
            CorpusFormat::Jsonl => {
                serde_json::to_writer(&mut w, inst)?;
                writeln!(w)?;
            }
            CorpusFormat::Tsv => {
                for field in [&inst.id, &inst.question, &inst.answer] {
                    if field.contains(['\t', '\n']) {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("instance {}: tab or newline in a TSV field", inst.id),
                        ));
                    }
                }
                write!(w, "{}\t{}\t{}", inst.id, inst.question, inst.answer)?;
                for v in inst.kb.values() {
                    write!(w, "\t{v}")?;
                }
                writeln!(w)?;
            }
        }
    }
    w.flush()
}

pub fn save_corpus(instances: &[QAInstance], path: &Path, format: CorpusFormat) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    write_corpus(instances, format, BufWriter::new(file)).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub validation_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

/// Seeded shuffle, then `(train, validation, test)`.
pub fn split(
    corpus: &[QAInstance],
    spec: SplitSpec,
) -> Result<(Vec<QAInstance>, Vec<QAInstance>, Vec<QAInstance>), CorpusError> {
    let need = spec.validation_size + spec.test_size;
    if corpus.len() < need {
        return Err(CorpusError::TooSmall { have: corpus.len(), need });
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |r: &[usize]| r.iter().map(|&i| corpus[i].clone()).collect::<Vec<_>>();
    let val = pick(&order[..spec.validation_size]);
    let test = pick(&order[spec.validation_size..need]);
    let train = pick(&order[need..]);
    Ok((train, val, test))
}

/// Counts in the layout of a dataset statistics table.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub pairs: usize,
    pub questions_with_numbers: usize,
    pub answers_with_numbers: usize,
    pub avg_question_tokens: f64,
    pub avg_answer_tokens: f64,
}

impl CorpusStats {
    pub fn compute(instances: &[QAInstance]) -> Self {
        let n = instances.len();
        let with_num = |f: fn(&QAInstance) -> &str| {
            instances.iter().filter(|i| !detect_numbers(f(i)).is_empty()).count()
        };
        let avg = |f: fn(&QAInstance) -> &str| {
            if n == 0 {
                0.0
            } else {
                instances.iter().map(|i| crate::tokenizer::pre_tokenize(f(i)).len()).sum::<usize>() as f64
                    / n as f64
            }
        };
        CorpusStats {
            pairs: n,
            questions_with_numbers: with_num(|i| &i.question),
            answers_with_numbers: with_num(|i| &i.answer),
            avg_question_tokens: avg(|i| &i.question),
            avg_answer_tokens: avg(|i| &i.answer),
        }
    }

    fn pct(&self, k: usize) -> f64 {
        if self.pairs == 0 {
            0.0
        } else {
            100.0 * k as f64 / self.pairs as f64
        }
    }

    pub fn table(&self) -> String {
        format!(
            "Property                 | Statistic\n\
             # of QA Pairs            | {}\n\
             # of Question w/ Numbers | {} ({:.1}%)\n\
             # of Answer w/ Numbers   | {} ({:.1}%)\n\
             Avg. Question Length     | {:.1} tokens\n\
             Avg. Answer Length       | {:.1} tokens\n",
            self.pairs,
            self.questions_with_numbers,
            self.pct(self.questions_with_numbers),
            self.answers_with_numbers,
            self.pct(self.answers_with_numbers),
            self.avg_question_tokens,
            self.avg_answer_tokens,
        )
    }
}

/// Reference figures for the released forum corpus.
pub const REFERENCE_STATS_FOOTER: &str = "Reference (forum corpus): 183,601 pairs; \
59,262 (32.3%) questions and 73,323 (39.9%) answers with numbers; \
avg. question 23.0 / answer 29.6 Chinese characters";
