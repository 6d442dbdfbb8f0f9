use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;
use serde::Serialize;

use stockqa::corpus::{
    generate_synthetic, load_corpus, load_queries, save_corpus, split, CorpusFormat, CorpusStats, QAInstance, SplitSpec,
    StockKB, TemplateSet, REFERENCE_STATS_FOOTER,
};
use stockqa::inference::{generate_all, query_example};
use stockqa::metrics::{MetricReport, QualityLabels};
use stockqa::model::{Example, Model};
use stockqa::retrieval::RetrievalIndex;
use stockqa::tokenizer::{Side, Tokenizer};
use stockqa::training::{prepare_examples, retrieve_for, train as run_training, write_log_csv};

use crate::config::RunConfig;
use crate::error::CliError;

const TOKENIZER_DIR: &str = "tokenizer";
const MODEL_DIR: &str = "model";
const INDEX_FILE: &str = "index.jsonl";
const LOG_FILE: &str = "train_log.csv";
const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Output corpus (.jsonl, or .tsv for tab-separated).
    #[arg(long)]
    pub out: PathBuf,
    /// Append the reference statistics of the forum corpus.
    #[arg(long)]
    pub compare_paper: bool,
}

#[derive(Args, Debug)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    /// Validation corpus; defaults to a seeded 10% hold-out of the training corpus.
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Run directory for the tokenizer, model, index and log.
    #[arg(long)]
    pub out: PathBuf,
    /// Prebuilt retrieval index; built from the training corpus when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Sets every hidden, embedding and attention width.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub char_step_memory: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Queries with id, question and kb; answers are ignored.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Retrieval index; defaults to the one in the run directory.
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Word-level beam width; 1 is greedy.
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long, default_value_t = 128)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub question: String,
    /// Knowledge base as a JSON object of feature name to value.
    #[arg(long)]
    pub kb: String,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Generated answers: JSONL with an `answer` field, or one answer per line.
    #[arg(long)]
    pub candidates: PathBuf,
    /// Reference answers in the same forms, or a corpus file.
    #[arg(long)]
    pub references: PathBuf,
    /// Quality labels, one JSON object per line.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Average distinct-n per answer instead of over the whole set.
    #[arg(long)]
    pub per_answer: bool,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn create_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    create_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::new("io", e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_corpus(path: &Path) -> Result<Vec<QAInstance>, CliError> {
    Ok(load_corpus(path, CorpusFormat::from_path(path))?)
}

pub fn synth(cfg: &RunConfig, a: &SynthArgs) -> Result<(), CliError> {
    let out = cfg.resolve(&a.out);
    let data = generate_synthetic(a.n, cfg.train.seed, &TemplateSet::default());
    create_parent(&out)?;
    save_corpus(&data, &out, CorpusFormat::from_path(&out))?;
    print!("{}", CorpusStats::compute(&data).table());
    if a.compare_paper {
        println!("{REFERENCE_STATS_FOOTER}");
    }
    info!("wrote {} instances to {}", data.len(), out.display());
    Ok(())
}

pub fn index(cfg: &RunConfig, a: &IndexArgs) -> Result<(), CliError> {
    let data = read_corpus(&cfg.resolve(&a.corpus))?;
    let idx = RetrievalIndex::build(&data, cfg.retrieval);
    let out = cfg.resolve(&a.out);
    create_parent(&out)?;
    idx.save(&out)?;
    println!("indexed {} instances into {}", idx.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    steps: usize,
    best_step: usize,
    best_val_bleu2: f64,
    stopped_early: bool,
    run_dir: String,
}

pub fn train(mut cfg: RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    if let Some(d) = a.dim {
        let keep = (cfg.model.variant, cfg.model.hybrid_retrieval, cfg.model.lambda, cfg.model.char_step_memory);
        cfg.model = stockqa::model::ModelConfig::uniform(d, keep.0);
        (cfg.model.hybrid_retrieval, cfg.model.lambda, cfg.model.char_step_memory) = (keep.1, keep.2, keep.3);
    }
    if a.char_step_memory {
        cfg.model.char_step_memory = true;
    }
    if let Some(s) = a.steps {
        cfg.train.max_steps = Some(s);
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(e) = a.eval_every {
        cfg.train.eval_every = e;
    }
    cfg.validate()?;

    let corpus = read_corpus(&cfg.resolve(&a.train))?;
    let (train_set, val) = match &a.val {
        Some(p) => (corpus, read_corpus(&cfg.resolve(p))?),
        None => {
            let n_val = (corpus.len() / 10).clamp(1, 500);
            let (tr, va, _) = split(&corpus, SplitSpec { validation_size: n_val, test_size: 0, seed: cfg.train.seed })?;
            (tr, va)
        }
    };
    if train_set.is_empty() {
        return Err(CliError::new("corpus", "training corpus is empty"));
    }
    let tok = Tokenizer::train(
        train_set.iter().map(|d| d.question.as_str()),
        train_set.iter().map(|d| d.answer.as_str()),
        &cfg.tokenizer,
    );
    let run_dir = cfg.resolve(&a.out);
    fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;

    let variant = cfg.model.variant;
    let (train_ret, val_ret) = if cfg.model.hybrid_retrieval {
        let idx = match &a.index {
            Some(p) => RetrievalIndex::load(&cfg.resolve(p), cfg.retrieval)?,
            None => RetrievalIndex::build(&train_set, cfg.retrieval),
        };
        idx.save(&run_dir.join(INDEX_FILE))?;
        (Some(retrieve_for(&idx, &train_set, true)?), Some(retrieve_for(&idx, &val, false)?))
    } else {
        (None, None)
    };
    let train_ex = prepare_examples(&train_set, &tok, variant, train_ret.as_deref())?;
    let val_ex = prepare_examples(&val, &tok, variant, val_ret.as_deref())?;
    let val_refs: Vec<String> = val.iter().map(|d| d.answer.clone()).collect();

    let model = Model::new(cfg.model.clone(), tok.vocab(Side::Source).len(), tok.vocab(Side::Target).len(), cfg.train.seed)?;
    info!("training on {} instances, validating on {}", train_set.len(), val.len());
    let outcome = run_training(model, &tok, &train_ex, &val_ex, &val_refs, &cfg.train)?;

    tok.save(&run_dir.join(TOKENIZER_DIR))?;
    outcome.best.save(&run_dir.join(MODEL_DIR))?;
    let log_path = run_dir.join(LOG_FILE);
    let f = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    write_log_csv(&outcome.log, BufWriter::new(f)).map_err(|e| CliError::io(&log_path, e))?;
    write_json(&run_dir.join(RUN_CONFIG_FILE), &cfg)?;
    let summary = TrainSummary {
        steps: outcome.steps,
        best_step: outcome.best_step,
        best_val_bleu2: outcome.best_bleu2,
        stopped_early: outcome.stopped_early,
        run_dir: run_dir.display().to_string(),
    };
    println!("{}", serde_json::to_string(&summary).map_err(|e| CliError::new("io", e.to_string()))?);
    Ok(())
}

#[derive(Serialize)]
struct AnswerRecord<'a> {
    id: &'a str,
    answer: &'a str,
    numbers: &'a [String],
    log_prob: f64,
}

pub fn generate(cfg: &RunConfig, a: &GenerateArgs) -> Result<(), CliError> {
    let run_dir = cfg.resolve(&a.model);
    let tok = Tokenizer::load(&run_dir.join(TOKENIZER_DIR))?;
    let model = Model::load(&run_dir.join(MODEL_DIR))?;
    let input = cfg.resolve(&a.input);
    let queries = load_queries(&input, CorpusFormat::from_path(&input))?;
    let retrieved = if model.config.hybrid_retrieval {
        let path = a.index.as_ref().map_or_else(|| run_dir.join(INDEX_FILE), |p| cfg.resolve(p));
        let idx = RetrievalIndex::load(&path, cfg.retrieval)?;
        Some(retrieve_for(&idx, &queries, false)?)
    } else {
        None
    };
    let examples = queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let r = retrieved.as_ref().map(|r| r[i].as_str());
            query_example(&tok, model.config.variant, &q.question, &q.kb, r)
        })
        .collect::<Result<Vec<Example>, _>>()?;
    let mut decode = cfg.train.decode;
    if let Some(m) = a.max_len {
        decode.max_len = m;
    }
    if let Some(w) = a.beam_width {
        decode.beam_width = w;
    }
    let answers = generate_all(&model, &tok, &examples, a.batch_size, &decode)?;
    let out = cfg.resolve(&a.out);
    create_parent(&out)?;
    let mut w = BufWriter::new(File::create(&out).map_err(|e| CliError::io(&out, e))?);
    for (q, ans) in queries.iter().zip(&answers) {
        let rec = AnswerRecord { id: &q.id, answer: &ans.surface, numbers: &ans.number_surfaces, log_prob: ans.log_prob };
        let line = serde_json::to_string(&rec).map_err(|e| CliError::new("io", e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| CliError::io(&out, e))?;
    }
    w.flush().map_err(|e| CliError::io(&out, e))?;
    info!("wrote {} answers to {}", answers.len(), out.display());
    Ok(())
}

pub fn retrieve(cfg: &RunConfig, a: &RetrieveArgs) -> Result<(), CliError> {
    let kb: StockKB = serde_json::from_str(&a.kb).map_err(|e| CliError::new("parse", format!("--kb: {e}")))?;
    let idx = RetrievalIndex::load(&cfg.resolve(&a.index), cfg.retrieval)?;
    let r = idx.retrieve(&a.question, &kb, a.k)?;
    for (rank, h) in r.hits.iter().enumerate() {
        println!("{}\t{}\t{:.6}\t{}", rank + 1, h.id, h.score, h.answer);
    }
    if r.truncated {
        info!("index holds only {} entries", r.hits.len());
    }
    Ok(())
}

/// `(id, answer)` per line: JSON records with an `answer` field, or raw text.
fn read_answers(path: &Path) -> Result<Vec<(Option<String>, String)>, CliError> {
    if CorpusFormat::from_path(path) == CorpusFormat::Tsv {
        return Ok(read_corpus(path)?.into_iter().map(|d| (Some(d.id), d.answer)).collect());
    }
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<serde_json::Value>(&line).ok().and_then(|v| {
            let answer = v.get("answer")?.as_str()?.to_string();
            let id = match v.get("id") {
                Some(serde_json::Value::String(s)) => Some(s.clone()),
                Some(serde_json::Value::Number(n)) => Some(n.to_string()),
                _ => None,
            };
            Some((id, answer))
        });
        out.push(parsed.unwrap_or((None, line)));
    }
    Ok(out)
}

/// Pairs candidates with references by id when both sides carry ids, else by position.
fn align(cands: Vec<(Option<String>, String)>, refs: Vec<(Option<String>, String)>) -> Result<(Vec<String>, Vec<String>), CliError> {
    let by_id = cands.iter().all(|c| c.0.is_some()) && refs.iter().all(|r| r.0.is_some());
    if !by_id {
        return Ok((cands.into_iter().map(|c| c.1).collect(), refs.into_iter().map(|r| r.1).collect()));
    }
    let map: HashMap<String, String> = refs.into_iter().map(|(id, a)| (id.unwrap_or_default(), a)).collect();
    let mut c_out = Vec::with_capacity(cands.len());
    let mut r_out = Vec::with_capacity(cands.len());
    for (id, a) in cands {
        let id = id.unwrap_or_default();
        let r = map.get(&id).ok_or_else(|| CliError::new("eval", format!("no reference for id {id}")))?;
        c_out.push(a);
        r_out.push(r.clone());
    }
    Ok((c_out, r_out))
}

fn read_labels(path: &Path) -> Result<Vec<QualityLabels>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::new("parse", format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn eval(cfg: &RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    let cands = read_answers(&cfg.resolve(&a.candidates))?;
    let refs = read_answers(&cfg.resolve(&a.references))?;
    let (c, r) = align(cands, refs)?;
    let labels = a.labels.as_ref().map(|p| read_labels(&cfg.resolve(p))).transpose()?;
    let report = MetricReport::compute(&c, &r, labels.as_deref(), a.per_answer)?;
    if let Some(out) = &a.out {
        write_json(&cfg.resolve(out), &report)?;
    }
    if a.json {
        println!("{}", serde_json::to_string(&report).map_err(|e| CliError::new("io", e.to_string()))?);
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
