//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line.
//!
//! The criteria run one after another inside a single test so that the
//! timed training runs do not compete for the CPU.

use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stockqa::corpus::{generate_synthetic, Feature, QAInstance, QuestionClass, TemplateSet, FEATURE_COUNT};
use stockqa::inference::{generate_all, query_example, DecodeConfig, GeneratedAnswer};
use stockqa::metrics::{bleu2, distinct_n, heuristic_score, unique_ngram_count, words, Fluency, Informativeness, Precision, QualityLabels, Relevance};
use stockqa::model::{Batch, Example, Graph, Model, ModelConfig, Variant};
use stockqa::numerics::gradcheck::check_gradients;
use stockqa::numerics::{clip_global_norm, Adam};
use stockqa::retrieval::{question_token_set, RetrievalConfig, RetrievalIndex};
use stockqa::tokenizer::{normalize, PreSplit, Side, TokenizedText, Tokenizer, TokenizerConfig, NUM};
use stockqa::training::{loss_and_gradients, prepare_examples, retrieve_for, train, TrainConfig};

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-3;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(60);
const MEMORIZE_LOSS: f64 = 0.1;
const MEMORIZE_EXACT: usize = 30;
const MEMORIZE_BUDGET: Duration = Duration::from_secs(300);
const GROUNDING_REL_ERR: f64 = 0.10;
const GROUNDING_WITHIN: f64 = 0.70;
const GROUNDING_VALID: f64 = 0.95;
const GROUNDING_BUDGET: Duration = Duration::from_secs(30 * 60);
const GROUNDING_QUESTIONS: usize = 500;
const SIMPLEX_TOL: f64 = 1e-6;
const DECODER_STEPS: usize = 1000;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn train_tokenizer(data: &[QAInstance]) -> Tokenizer {
    Tokenizer::train(
        data.iter().map(|d| d.question.as_str()),
        data.iter().map(|d| d.answer.as_str()),
        &TokenizerConfig::default(),
    )
}

fn vocab_sizes(tok: &Tokenizer) -> (usize, usize) {
    (tok.vocab(Side::Source).len(), tok.vocab(Side::Target).len())
}

fn text(tokens: Vec<usize>, slots: &[(usize, &str)]) -> TokenizedText {
    TokenizedText { tokens, number_slots: slots.iter().map(|(p, s)| (*p, s.to_string())).collect() }
}

fn table2b_surfaces() -> Vec<String> {
    let values = [9.75, 9.15, 9.93, 9.02, 9.40, 9.51, 9.60, 53187.0, 51230.0, 48811.0, 47000.0, -0.45, -0.05, 1.21];
    values.iter().map(|v| format!("{v}")).collect()
}

fn total_loss(model: &Model, batch: &Batch) -> f64 {
    let mut g = Graph::new(model, false);
    let l = g.loss(batch, model.config.lambda).unwrap();
    g.value(l.total).data()[0]
}

fn gradcheck_variant(variant: Variant) -> (usize, usize, f64) {
    let cfg = ModelConfig::uniform(4, variant);
    let model = Model::with_init_scale(cfg, 12, 12, 3, 2.0).unwrap();
    let ex = match variant {
        Variant::Hybrid => Example::from_parts(
            text(vec![6, NUM], &[(1, "9.8")]),
            table2b_surfaces(),
            text(vec![7, NUM, 9], &[(1, "11.45")]),
            None,
            variant,
        ),
        Variant::Sequential => {
            Example::from_parts(text(vec![6, 8], &[]), table2b_surfaces(), text(vec![7, 6, 7], &[]), None, variant)
        }
    };
    let batch = Batch::new(&[&ex]).unwrap();
    let (_, analytic) = loss_and_gradients(&model, &batch).unwrap();
    let mut probe = model.clone();
    let report = check_gradients(
        &model.params,
        &analytic,
        |p| {
            probe.params = p.clone();
            total_loss(&probe, &batch)
        },
        GRADCHECK_STEP,
        GRADCHECK_TOL,
    );
    (report.checked, report.mismatches.len(), report.max_rel_error)
}

fn criterion_gradients() -> Outcome {
    let t0 = Instant::now();
    let (hc, hm, he) = gradcheck_variant(Variant::Hybrid);
    let (sc, sm, se) = gradcheck_variant(Variant::Sequential);
    let elapsed = t0.elapsed();
    check(
        hm == 0 && sm == 0 && hc > 0 && sc > 0 && elapsed < GRADCHECK_BUDGET,
        format!(
            "hybrid {}/{hc} ok (max rel {he:.2e}), sequential {}/{sc} ok (max rel {se:.2e}), tol {GRADCHECK_TOL:e}, {:.1}s",
            hc - hm,
            sc - sm,
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_memorization() -> Outcome {
    let t0 = Instant::now();
    let data = generate_synthetic(32, 21, &TemplateSet::default());
    let tok = train_tokenizer(&data);
    let (vs, vt) = vocab_sizes(&tok);
    let mut cfg = ModelConfig::uniform(64, Variant::Hybrid);
    cfg.word_emb = 32;
    cfg.char_emb = 32;
    let mut model = Model::new(cfg, vs, vt, 1).unwrap();
    let examples = prepare_examples(&data, &tok, Variant::Hybrid, None).unwrap();
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::new(&refs).unwrap();
    let mut adam = Adam::new(model.params.tensors(), 0.01);
    let mut loss = f64::INFINITY;
    let mut steps = 0;
    while loss >= MEMORIZE_LOSS && t0.elapsed() < MEMORIZE_BUDGET && steps < 3000 {
        let (p, mut g) = loss_and_gradients(&model, &batch).unwrap();
        loss = p.total;
        if loss < MEMORIZE_LOSS {
            break;
        }
        clip_global_norm(&mut g, 5.0);
        adam.step(model.params.tensors_mut(), &g).unwrap();
        steps += 1;
    }
    let out = generate_all(&model, &tok, &examples, 32, &DecodeConfig::default()).unwrap();
    let exact = out.iter().zip(&data).filter(|(a, d)| a.surface == normalize(&d.answer, PreSplit::Whitespace)).count();
    let elapsed = t0.elapsed();
    check(
        loss < MEMORIZE_LOSS && exact >= MEMORIZE_EXACT && elapsed < MEMORIZE_BUDGET,
        format!("loss {loss:.4} after {steps} updates, exact {exact}/32, {:.1}s", elapsed.as_secs_f64()),
    )
}

/// Shared synthetic data and models for the grounding and diversity criteria.
struct Trained {
    tok: Tokenizer,
    train: Vec<QAInstance>,
    test: Vec<QAInstance>,
    hybrid: Model,
    sequential: Model,
    hybrid_secs: f64,
    sequential_secs: f64,
}

fn grounding_model_config(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::uniform(64, variant);
    cfg.char_emb = 32;
    cfg.char_enc_hidden = 128;
    cfg.char_dec_hidden = 128;
    cfg.char_step_memory = true;
    cfg
}

fn grounding_train_config() -> TrainConfig {
    TrainConfig { batch_size: 128, learning_rate: 0.01, seed: 7, eval_every: 100, max_steps: Some(800), ..TrainConfig::default() }
}

fn fit(
    cfg: ModelConfig,
    tok: &Tokenizer,
    train_set: &[QAInstance],
    val: &[QAInstance],
    retrieved: Option<(&[String], &[String])>,
) -> (Model, f64) {
    let t0 = Instant::now();
    let (vs, vt) = vocab_sizes(tok);
    let variant = cfg.variant;
    let model = Model::new(cfg, vs, vt, 1).unwrap();
    let train_ex = prepare_examples(train_set, tok, variant, retrieved.map(|r| r.0)).unwrap();
    let val_ex = prepare_examples(val, tok, variant, retrieved.map(|r| r.1)).unwrap();
    let val_refs: Vec<String> = val.iter().map(|d| d.answer.clone()).collect();
    let outcome = train(model, tok, &train_ex, &val_ex, &val_refs, &grounding_train_config()).unwrap();
    (outcome.best, t0.elapsed().as_secs_f64())
}

fn train_shared() -> Trained {
    let templates = TemplateSet::default();
    let train_set = generate_synthetic(5000, 101, &templates);
    let val = generate_synthetic(200, 102, &templates);
    let test = generate_synthetic(3000, 103, &templates);
    let tok = train_tokenizer(&train_set);
    let (hybrid, hybrid_secs) = fit(grounding_model_config(Variant::Hybrid), &tok, &train_set, &val, None);
    let (sequential, sequential_secs) = fit(grounding_model_config(Variant::Sequential), &tok, &train_set, &val, None);
    Trained { tok, train: train_set, test, hybrid, sequential, hybrid_secs, sequential_secs }
}

/// Within-10%-of-Low rate and grammar-valid rate over generated numbers.
fn grounding_rates(model: &Model, tok: &Tokenizer, questions: &[&QAInstance]) -> (f64, f64, usize) {
    let examples: Vec<Example> = questions
        .iter()
        .map(|d| query_example(tok, model.config.variant, &d.question, &d.kb, None).unwrap())
        .collect();
    let out = generate_all(model, tok, &examples, 250, &DecodeConfig::default()).unwrap();
    let (mut n, mut valid, mut within) = (0usize, 0usize, 0usize);
    for (a, d) in out.iter().zip(questions) {
        let low = d.kb.get(Feature::Low);
        for (s, &ok) in a.number_surfaces.iter().zip(&a.number_valid) {
            n += 1;
            if !ok {
                continue;
            }
            valid += 1;
            if let Ok(x) = s.parse::<f64>() {
                if (x - low).abs() / low <= GROUNDING_REL_ERR {
                    within += 1;
                }
            }
        }
    }
    let d = n.max(1) as f64;
    (within as f64 / d, valid as f64 / d, n)
}

fn criterion_grounding(t: &Trained) -> Outcome {
    let templates = TemplateSet::default();
    let support: Vec<&QAInstance> = t
        .test
        .iter()
        .filter(|d| templates.classify(&d.question) == Some(QuestionClass::Support))
        .take(GROUNDING_QUESTIONS)
        .collect();
    if support.len() < GROUNDING_QUESTIONS {
        return Err(format!("only {} held-out support questions", support.len()));
    }
    let t0 = Instant::now();
    let (hw, hv, hn) = grounding_rates(&t.hybrid, &t.tok, &support);
    let (sw, sv, sn) = grounding_rates(&t.sequential, &t.tok, &support);
    let total = t.hybrid_secs + t.sequential_secs + t0.elapsed().as_secs_f64();
    check(
        hw >= GROUNDING_WITHIN && hv >= GROUNDING_VALID && sw < hw && total < GROUNDING_BUDGET.as_secs_f64() && hn > 0,
        format!(
            "hybrid within-10% {hw:.3} valid {hv:.3} ({hn} numbers), sequential within-10% {sw:.3} valid {sv:.3} ({sn} numbers), {total:.0}s"
        ),
    )
}

fn simplex_error(p: &[f64]) -> f64 {
    if p.iter().any(|&x| x < 0.0) {
        return f64::INFINITY;
    }
    (p.iter().sum::<f64>() - 1.0).abs()
}

fn criterion_attention() -> Outcome {
    let data = generate_synthetic(64, 55, &TemplateSet::default());
    let tok = train_tokenizer(&data);
    let (vs, vt) = vocab_sizes(&tok);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut steps, mut worst_simplex, mut worst_hull) = (0usize, 0.0f64, 0.0f64);
    let mut gammas = 0usize;
    let mut seed = 0u64;
    while steps < DECODER_STEPS {
        seed += 1;
        let mut cfg = ModelConfig::uniform(8, Variant::Hybrid);
        cfg.hybrid_retrieval = seed % 2 == 0;
        let scale = if seed % 3 == 0 { 3.0 } else { 1.0 };
        let model = Model::with_init_scale(cfg, vs, vt, seed, scale).unwrap();
        let picks: Vec<&QAInstance> = data.choose_multiple(&mut rng, 3).collect();
        let examples: Vec<Example> = picks
            .iter()
            .map(|d| {
                let other = &data[rng.gen_range(0..data.len())].answer;
                let r = model.config.hybrid_retrieval.then_some(other.as_str());
                query_example(&tok, Variant::Hybrid, &d.question, &d.kb, r).unwrap()
            })
            .collect();
        let refs: Vec<&Example> = examples.iter().collect();
        let batch = Batch::new(&refs).unwrap();
        let b = batch.size;
        let mut g = Graph::new(&model, false);
        let enc = g.encode(&batch).unwrap();
        let values = g.value(enc.values).clone();
        let (mut s, mut c) = (enc.s0, enc.cell0);
        for _ in 0..20 {
            let prev: Vec<usize> = (0..b).map(|_| rng.gen_range(0..vt)).collect();
            let emb = g.param("tgt_emb");
            let e = g.tape.gather_rows(emb, &prev).unwrap();
            let out = g.step(&enc, e, s, c).unwrap();
            let alpha = g.value(out.alpha).clone();
            let beta = g.value(out.beta).clone();
            let mem = g.value(out.mem).clone();
            for r in 0..b {
                worst_simplex = worst_simplex.max(simplex_error(alpha.row_slice(r)));
                worst_simplex = worst_simplex.max(simplex_error(beta.row_slice(r)));
                if let Some(gamma) = out.gamma {
                    worst_simplex = worst_simplex.max(simplex_error(g.value(gamma).row_slice(r)));
                    gammas += 1;
                }
                for (k, &m) in mem.row_slice(r).iter().enumerate() {
                    let col = (0..FEATURE_COUNT).map(|l| values.row_slice(r * FEATURE_COUNT + l)[k]);
                    let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, z), v| (a.min(v), z.max(v)));
                    worst_hull = worst_hull.max(lo - m).max(m - hi);
                }
                steps += 1;
            }
            s = out.s;
            c = out.cell;
        }
    }
    check(
        worst_simplex <= SIMPLEX_TOL && worst_hull <= 1e-12 && gammas > 0,
        format!(
            "{steps} decoder steps ({gammas} with retrieval), max simplex error {worst_simplex:.2e}, max hull excess {worst_hull:.2e}"
        ),
    )
}

fn oracle_distinct(answers: &[Vec<String>], n: usize) -> (usize, usize) {
    let mut seen: Vec<Vec<String>> = Vec::new();
    let mut total = 0;
    for a in answers {
        if a.len() < n {
            continue;
        }
        for i in 0..=a.len() - n {
            let g = a[i..i + n].to_vec();
            total += 1;
            if !seen.contains(&g) {
                seen.push(g);
            }
        }
    }
    (seen.len(), total)
}

fn criterion_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let alphabet = ["a", "b", "c", "d", "9.85", ",", "."];
    let random_set = |rng: &mut ChaCha8Rng| -> Vec<Vec<String>> {
        (0..rng.gen_range(0..6))
            .map(|_| (0..rng.gen_range(0..9)).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect())
            .collect()
    };
    let mut distinct_failures = 0;
    for _ in 0..200 {
        let set = random_set(&mut rng);
        for n in 1..=4 {
            let (u, total) = oracle_distinct(&set, n);
            let expected = if total == 0 { 0.0 } else { u as f64 / total as f64 };
            if unique_ngram_count(&set, n) != u || distinct_n(&set, n) != expected {
                distinct_failures += 1;
            }
        }
    }
    let mut bleu_failures = 0;
    for _ in 0..50 {
        let mut corpus = random_set(&mut rng);
        corpus.push(vec!["a".into(), "b".into()]);
        if bleu2(&corpus, &corpus).unwrap() != 1.0 {
            bleu_failures += 1;
        }
    }
    // Score table rows: poor relevance; normal relevance or any defect;
    // then poor, normal and good informativeness.
    let mut row_failures = 0;
    let mut rows_seen = HashSet::new();
    for l in QualityLabels::all() {
        let expected = if l.relevance == Relevance::Poor {
            0.0
        } else if l.relevance == Relevance::Normal || l.fluency == Fluency::No || l.precision == Precision::Errors {
            0.25
        } else {
            match l.informativeness {
                Informativeness::Poor => 0.5,
                Informativeness::Normal => 0.75,
                Informativeness::Good => 1.0,
            }
        };
        rows_seen.insert((expected * 100.0) as u32);
        if heuristic_score(&l) != expected {
            row_failures += 1;
        }
    }
    check(
        distinct_failures == 0 && bleu_failures == 0 && row_failures == 0 && rows_seen.len() == 5,
        format!(
            "distinct/unique mismatches {distinct_failures}/800, bleu2(x,x)!=1 on {bleu_failures}/50, heuristic mismatches {row_failures}/36 over {} score rows",
            rows_seen.len()
        ),
    )
}

fn oracle_ranking(data: &[QAInstance], query: &QAInstance) -> Vec<String> {
    let q: BTreeSet<String> = question_token_set(&query.question);
    let tq = query.kb.trend_vector();
    let mut scored: Vec<(f64, String)> = data
        .iter()
        .map(|d| {
            let e = question_token_set(&d.question);
            let inter = q.intersection(&e).count() as f64;
            let union = q.union(&e).count() as f64;
            let jac = if union == 0.0 { 1.0 } else { inter / union };
            let te = d.kb.trend_vector();
            let dot: f64 = (0..3).map(|i| tq[i] * te[i]).sum();
            let norm = (tq.iter().map(|x| x * x).sum::<f64>() * te.iter().map(|x| x * x).sum::<f64>()).sqrt();
            let cos = (dot / norm).clamp(-1.0, 1.0);
            (0.5 * jac + 0.5 * (cos + 1.0) / 2.0, d.id.clone())
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    scored.into_iter().map(|(_, id)| id).collect()
}

fn criterion_retrieval() -> Outcome {
    let data = generate_synthetic(1000, 66, &TemplateSet::default());
    let index = RetrievalIndex::build(&data, RetrievalConfig::default());
    let self_hits = data
        .iter()
        .filter(|d| index.retrieve(&d.question, &d.kb, 1).unwrap().hits[0].id == d.id)
        .count();
    let mut rank_mismatches = 0;
    let mut queries = 0;
    for size in [1usize, 7, 100, 1000] {
        let sub = &data[..size];
        let idx = RetrievalIndex::build(sub, RetrievalConfig::default());
        for q in data.iter().step_by(50) {
            let got: Vec<String> = idx.retrieve(&q.question, &q.kb, size).unwrap().hits.into_iter().map(|h| h.id).collect();
            queries += 1;
            if got != oracle_ranking(sub, q) {
                rank_mismatches += 1;
            }
        }
    }
    check(
        self_hits == 1000 && rank_mismatches == 0,
        format!("self rank-1 {self_hits}/1000, full-ranking mismatches {rank_mismatches}/{queries}"),
    )
}

fn answers_as_words(out: &[GeneratedAnswer]) -> Vec<Vec<String>> {
    out.iter().map(|a| words(&a.surface)).collect()
}

fn criterion_diversity(t: &Trained) -> Outcome {
    let t0 = Instant::now();
    let index = RetrievalIndex::build(&t.train, RetrievalConfig::default());
    let train_ret = retrieve_for(&index, &t.train, true).unwrap();
    let val = generate_synthetic(200, 102, &TemplateSet::default());
    let val_ret = retrieve_for(&index, &val, false).unwrap();
    let mut cfg = grounding_model_config(Variant::Hybrid);
    cfg.hybrid_retrieval = true;
    let (ret_model, _) = fit(cfg, &t.tok, &t.train, &val, Some((&train_ret, &val_ret)));
    let test = &t.test[..500];
    let test_ret = retrieve_for(&index, test, false).unwrap();
    let gen_ex: Vec<Example> =
        test.iter().map(|d| query_example(&t.tok, Variant::Hybrid, &d.question, &d.kb, None).unwrap()).collect();
    let ret_ex: Vec<Example> = test
        .iter()
        .zip(&test_ret)
        .map(|(d, r)| query_example(&t.tok, Variant::Hybrid, &d.question, &d.kb, Some(r)).unwrap())
        .collect();
    let cfg = DecodeConfig::default();
    let generative = answers_as_words(&generate_all(&t.hybrid, &t.tok, &gen_ex, 250, &cfg).unwrap());
    let retrieval = answers_as_words(&generate_all(&ret_model, &t.tok, &ret_ex, 250, &cfg).unwrap());
    let (dg, dr) = (distinct_n(&generative, 2), distinct_n(&retrieval, 2));
    let (ug, ur) = (unique_ngram_count(&generative, 2), unique_ngram_count(&retrieval, 2));
    check(
        dr > dg && ur > ug,
        format!(
            "distinct-2 retrieval {dr:.4} vs generative {dg:.4}, unique 2-grams {ur} vs {ug}, {:.0}s",
            t0.elapsed().as_secs_f64()
        ),
    )
}

fn criterion_tokenizer() -> Outcome {
    let data = generate_synthetic(5000, 77, &TemplateSet::default());
    let tok = train_tokenizer(&data);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words_pool = ["the", "support", "is", "around", "hold", "sell", ",", ".", "stock", "uptrend"];
    let numbers = ["9.50", "10.00", "0.10", "120", "3.1400", "-0.45", "100.0", "7"];
    let mut roundtrip_failures = 0;
    let mut with_trailing_zero = 0;
    for i in 0..1000 {
        let (s, side) = if i % 2 == 0 {
            let d = &data[rng.gen_range(0..data.len())];
            if rng.gen_bool(0.5) {
                (d.answer.clone(), Side::Target)
            } else {
                (d.question.clone(), Side::Source)
            }
        } else {
            let s = 
            (0..rng.gen_range(1..10))
                .map(|_| {
                    if rng.gen_bool(0.3) {
                        numbers[rng.gen_range(0..numbers.len())]
                    } else {
                        words_pool[rng.gen_range(0..words_pool.len())]
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            (s, Side::Target)
        };
        if s.split_whitespace().any(|w| w.contains('.') && w.ends_with('0')) {
            with_trailing_zero += 1;
        }
        let enc = tok.encode(&s, side);
        if tok.decode_tokenized(&enc, side) != normalize(&s, PreSplit::Whitespace) {
            roundtrip_failures += 1;
        }
    }
    let mut slot_failures = 0;
    let mut slots = 0;
    for d in &data {
        for (s, side) in [(&d.question, Side::Source), (&d.answer, Side::Target)] {
            let enc = tok.encode(s, side);
            let placeholders = enc.tokens.iter().filter(|&&t| t == NUM).count();
            let surfaces = stockqa::tokenizer::detect_numbers(s).len();
            let ordered = enc.number_slots.windows(2).all(|w| w[0].0 < w[1].0)
                && enc.number_slots.iter().all(|(p, _)| enc.tokens.get(*p) == Some(&NUM));
            slots += enc.number_slots.len();
            if placeholders != enc.number_slots.len() || placeholders != surfaces || !ordered {
                slot_failures += 1;
            }
        }
    }
    check(
        roundtrip_failures == 0 && slot_failures == 0 && with_trailing_zero > 0,
        format!(
            "roundtrip failures {roundtrip_failures}/1000 ({with_trailing_zero} with trailing zeros), NUM-slot violations {slot_failures}/{} over {slots} slots",
            2 * data.len()
        ),
    )
}

fn run(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t0 = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    });
    let secs = t0.elapsed().as_secs_f64();
    match outcome {
        Ok(d) => {
            println!("[PASS] {name}: {d} [{secs:.1}s]");
            true
        }
        Err(d) => {
            println!("[FAIL] {name}: {d} [{secs:.1}s]");
            false
        }
    }
}

#[test]
fn acceptance() {
    let mut results = vec![
        run("1 gradient correctness", criterion_gradients),
        run("2 memorization", criterion_memorization),
    ];
    let shared = catch_unwind(train_shared).ok();
    let missing = || Err("shared training failed".to_string());
    results.push(run("3 number grounding", || shared.as_ref().map_or_else(missing, criterion_grounding)));
    results.push(run("4 attention invariants", criterion_attention));
    results.push(run("5 metric oracles", criterion_metrics));
    results.push(run("6 retrieval", criterion_retrieval));
    results.push(run("7 diversity", || shared.as_ref().map_or_else(missing, criterion_diversity)));
    results.push(run("8 tokenizer roundtrips", criterion_tokenizer));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
