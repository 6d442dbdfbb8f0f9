use super::*;
use crate::corpus::{Feature, StockKB};
use crate::numerics::gradcheck::check_gradients;
use crate::numerics::{Gradients, Var};
use crate::tokenizer::{TokenizedText, NUM};

fn table2b() -> StockKB {
    let mut values = [0.0; FEATURE_COUNT];
    let fill = [9.75, 9.15, 9.93, 9.02, 9.40, 9.51, 9.60, 53187.0, 51230.0, 48811.0, 47000.0, -0.45, -0.05, 1.21];
    values.copy_from_slice(&fill);
    StockKB::new(values)
}

fn tiny(variant: Variant, retrieval: bool) -> Model {
    let mut cfg = ModelConfig::uniform(4, variant);
    cfg.hybrid_retrieval = retrieval;
    Model::with_init_scale(cfg, 12, 12, 3, 2.0).unwrap()
}

fn text(tokens: Vec<usize>, slots: &[(usize, &str)]) -> TokenizedText {
    TokenizedText { tokens, number_slots: slots.iter().map(|(p, s)| (*p, s.to_string())).collect() }
}

/// 2-token question, 3-token answer, one number on each side (hybrid).
fn hybrid_example(retrieved: Option<Vec<usize>>) -> Example {
    Example::from_parts(
        text(vec![6, NUM], &[(1, "9.8")]),
        table2b().surfaces(),
        text(vec![7, NUM, 9], &[(1, "11.45")]),
        retrieved,
        Variant::Hybrid,
    )
}

/// Sequential streams spelled with in-vocabulary digit tokens "#1", "#2".
fn sequential_example() -> Example {
    Example::from_parts(
        text(vec![6, 8], &[]),
        table2b().surfaces(),
        text(vec![7, 6, 7], &[]),
        None,
        Variant::Sequential,
    )
}

fn loss_value(model: &Model, batch: &Batch, lambda: f64) -> (f64, f64, f64) {
    let mut g = Graph::new(model, false);
    let l = g.loss(batch, lambda).unwrap();
    let c = l.chars.map_or(0.0, |v| g.value(v).data()[0]);
    (g.value(l.total).data()[0], g.value(l.word).data()[0], c)
}

fn gradients(model: &Model, batch: &Batch, lambda: f64) -> (Vec<Var>, Gradients) {
    let mut g = Graph::new(model, true);
    let l = g.loss(batch, lambda).unwrap();
    let grads = g.tape.backward(l.total).unwrap();
    (g.param_vars().to_vec(), grads)
}

fn gradcheck(model: &Model, batch: &Batch) {
    let (vars, grads) = gradients(model, batch, model.config.lambda);
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.tensor(v)).collect();
    let mut probe = model.clone();
    let report = check_gradients(
        &model.params,
        &analytic,
        |p| {
            probe.params = p.clone();
            loss_value(&probe, batch, probe.config.lambda).0
        },
        1e-5,
        1e-3,
    );
    assert!(report.passed(), "{} of {} mismatched, first {:?}", report.mismatches.len(), report.checked, report.mismatches.first());
}

#[test]
fn gradients_match_finite_differences_hybrid() {
    let ex = hybrid_example(None);
    gradcheck(&tiny(Variant::Hybrid, false), &Batch::new(&[&ex]).unwrap());
}

#[test]
fn gradients_match_finite_differences_sequential() {
    let ex = sequential_example();
    gradcheck(&tiny(Variant::Sequential, false), &Batch::new(&[&ex]).unwrap());
}

#[test]
fn gradients_match_finite_differences_with_retrieval_and_step_memory() {
    let mut cfg = ModelConfig::uniform(4, Variant::Hybrid);
    cfg.hybrid_retrieval = true;
    cfg.char_step_memory = true;
    let model = Model::with_init_scale(cfg, 12, 12, 9, 2.0).unwrap();
    let a = hybrid_example(Some(vec![7, 10]));
    let b = hybrid_example(Some(vec![]));
    gradcheck(&model, &Batch::new(&[&a, &b]).unwrap());
}

#[test]
fn annotation_width_is_twice_encoder_hidden() {
    let model = Model::new(ModelConfig::default(), 20, 20, 1).unwrap();
    let ex = Example::from_parts(text(vec![6], &[]), table2b().surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    assert_eq!(g.value(enc.annotations).shape(), &[1, 256]);
}

#[test]
fn empty_question_is_rejected() {
    let ex = Example::from_parts(text(vec![], &[]), table2b().surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    assert!(matches!(Batch::new(&[&ex]), Err(ModelError::Contract(_))));
}

#[test]
fn tied_directions_mirror_on_palindromes() {
    let mut model = tiny(Variant::Hybrid, false);
    for part in ["w", "b"] {
        let t = model.params.get(&format!("enc.fwd.{part}")).unwrap().clone();
        model.params.insert(format!("enc.bwd.{part}"), t);
    }
    let ex = Example::from_parts(text(vec![6, 9, 6], &[]), table2b().surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let h = g.value(enc.annotations);
    for t in 0..3 {
        assert_eq!(&h.row_slice(t)[..4], &h.row_slice(2 - t)[4..]);
    }
}

#[test]
fn number_encodings() {
    let model = tiny(Variant::Hybrid, false);
    let mut g = Graph::new(&model, false);
    let h = g.encode_chars(&["9.8".into(), "9.8".into(), "9.80".into()]).unwrap();
    let src = g.linear(h, "charenc.to_src").unwrap();
    let v = g.value(src);
    assert_eq!(v.cols(), model.config.word_emb);
    assert_eq!(v.row_slice(0), v.row_slice(1));
    assert_ne!(v.row_slice(0), v.row_slice(2));
    assert!(g.encode_chars(&["9.8x".into()]).is_err());
}

#[test]
fn memory_values_follow_the_knowledge_base() {
    let model = tiny(Variant::Hybrid, false);
    let mut kb2 = table2b();
    kb2.set(Feature::Low, 8.77);
    let a = Example::from_parts(text(vec![6], &[]), table2b().surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    let b = Example::from_parts(text(vec![6], &[]), kb2.surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&a, &b]).unwrap()).unwrap();
    let vals = g.value(enc.values).clone();
    assert_eq!(vals.rows(), 2 * FEATURE_COUNT);
    for l in 0..FEATURE_COUNT {
        let same = vals.row_slice(l) == vals.row_slice(FEATURE_COUNT + l);
        assert_eq!(same, l != Feature::Low.index(), "slot {l}");
    }
    assert_eq!(table2b().surfaces()[Feature::Open.index()], "9.75");
    let h = g.encode_chars(&["9.75".into()]).unwrap();
    let open = g.linear(h, "charenc.to_val").unwrap();
    assert_eq!(g.value(open).row_slice(0), vals.row_slice(Feature::Open.index()));
}

#[test]
fn single_position_attention_is_the_annotation() {
    let model = tiny(Variant::Hybrid, false);
    let ex = Example::from_parts(text(vec![6], &[]), table2b().surfaces(), text(vec![7], &[]), None, Variant::Hybrid);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let (c, a) = g.question_attention(&enc, enc.s0).unwrap();
    assert_eq!(g.value(a).data(), &[1.0]);
    assert_eq!(g.value(c).data(), g.value(enc.annotations).data());
}

#[test]
fn additive_attention_hand_computation() {
    let model = tiny(Variant::Hybrid, false);
    let mut g = Graph::new(&model, false);
    let t = &mut g.tape;
    let q = t.constant(Tensor::row(vec![1.0, -0.5]));
    let wq = t.constant(Tensor::matrix(2, 2, vec![0.3, -0.2, 0.1, 0.4]).unwrap());
    let wh = t.constant(Tensor::matrix(2, 2, vec![0.2, 0.0, -0.1, 0.3]).unwrap());
    let u = t.constant(Tensor::matrix(2, 1, vec![1.0, -2.0]).unwrap());
    let h = t.constant(Tensor::matrix(2, 2, vec![0.5, 1.0, -1.0, 0.2]).unwrap());
    let kp = t.matmul(h, wh).unwrap();
    let (c, a) = g.attention(q, wq, u, kp, None, h, 2).unwrap();
    let expect_a = [0.44011603688382855, 0.5598839631161714];
    let expect_c = [-0.3398259446742571, 0.5520928295070628];
    for (x, y) in g.value(a).data().iter().zip(expect_a).chain(g.value(c).data().iter().zip(expect_c)) {
        assert!((x - y).abs() < 1e-14, "{x} vs {y}");
    }
    // identical keys give uniform weights
    let t = &mut g.tape;
    let same = t.constant(Tensor::matrix(3, 2, vec![0.5, 1.0, 0.5, 1.0, 0.5, 1.0]).unwrap());
    let kp = t.matmul(same, wh).unwrap();
    let (_, a) = g.attention(q, wq, u, kp, None, same, 3).unwrap();
    for &w in g.value(a).data() {
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn memory_read_is_convex() {
    let model = tiny(Variant::Hybrid, false);
    let ex = hybrid_example(None);
    let mut g = Graph::new(&model, false);
    let mut enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let out = g.step(&enc, g.param("tgt_emb"), enc.s0, enc.cell0);
    assert!(out.is_err(), "embedding table is not a batch row");
    let e = g.tape.gather_rows(g.param("tgt_emb"), &[2]).unwrap();
    let out = g.step(&enc, e, enc.s0, enc.cell0).unwrap();
    let beta: f64 = g.value(out.beta).data().iter().sum();
    assert!((beta - 1.0).abs() < 1e-12);
    let common = vec![0.25, -1.5, 3.0, 0.0];
    let data: Vec<f64> = (0..FEATURE_COUNT).flat_map(|_| common.clone()).collect();
    enc.values = g.tape.constant(Tensor::matrix(FEATURE_COUNT, 4, data).unwrap());
    let (m, _) = g.memory_attention(&enc, out.ctx, out.s).unwrap();
    for (x, y) in g.value(m).data().iter().zip(&common) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn contrived_keys_focus_memory_on_low() {
    let mut model = tiny(Variant::Hybrid, false);
    let low = Feature::Low.index();
    let keys: Vec<f64> = (0..FEATURE_COUNT).flat_map(|l| [if l == low { 100.0 } else { -100.0 }; 4]).collect();
    model.params.insert("key_emb", Tensor::matrix(FEATURE_COUNT, 4, keys).unwrap());
    let eye: Vec<f64> = (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect();
    model.params.insert("matt.wk", Tensor::matrix(4, 4, eye).unwrap());
    model.params.insert("matt.wc", Tensor::zeros(&[8, 4]));
    model.params.insert("matt.wm", Tensor::zeros(&[4, 4]));
    model.params.insert("matt.u", Tensor::filled(&[4, 1], 100.0));
    let ex = hybrid_example(None);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let e = g.tape.gather_rows(g.param("tgt_emb"), &[2]).unwrap();
    let out = g.step(&enc, e, enc.s0, enc.cell0).unwrap();
    assert_eq!(g.value(out.beta).data()[low], 1.0);
    assert_eq!(g.value(out.mem).data(), g.value(enc.values).row_slice(low));
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

#[test]
fn output_distribution_sharpens_with_doubled_weights() {
    let model = tiny(Variant::Hybrid, false);
    let ex = hybrid_example(None);
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let e = g.tape.gather_rows(g.param("tgt_emb"), &[2]).unwrap();
    let out = g.step(&enc, e, enc.s0, enc.cell0).unwrap();
    let logits = g.output_logits(out.features).unwrap();
    let p1 = crate::numerics::softmax(g.value(logits).data()).unwrap();
    assert_eq!(p1.len(), 12);
    assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let doubled = g.tape.scale(g.param("out.w"), 2.0);
    let z = g.tape.matmul(out.features, doubled).unwrap();
    let p2 = crate::numerics::softmax(g.value(z).data()).unwrap();
    assert!(entropy(&p2) < entropy(&p1));
}

#[test]
fn char_decoder_start_depends_on_memory() {
    let model = tiny(Variant::Hybrid, false);
    let mut g = Graph::new(&model, false);
    let s = g.tape.constant(Tensor::row(vec![0.1, -0.2, 0.3, 0.05]));
    let m1 = g.tape.constant(Tensor::row(vec![0.5, 0.5, 0.5, 0.5]));
    let m2 = g.tape.constant(Tensor::row(vec![-0.5, 0.2, 0.9, 0.0]));
    let mut first = Vec::new();
    for m in [m1, m2] {
        let (h, c) = g.char_init(s, m).unwrap();
        let (_, _, logits) = g.char_step(&[CharVocab::BOS], h, c, m).unwrap();
        first.push(crate::numerics::softmax(g.value(logits).data()).unwrap());
    }
    assert_ne!(first[0], first[1]);
}

#[test]
fn single_token_retrieval_reads_its_annotation() {
    let model = tiny(Variant::Hybrid, true);
    let ex = hybrid_example(Some(vec![7]));
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&ex]).unwrap()).unwrap();
    let e = g.tape.gather_rows(g.param("tgt_emb"), &[2]).unwrap();
    let out = g.step(&enc, e, enc.s0, enc.cell0).unwrap();
    let r = out.ret.unwrap();
    assert_eq!(g.value(out.gamma.unwrap()).data(), &[1.0]);
    assert_eq!(g.value(r).data(), g.value(enc.retrieval.as_ref().unwrap().annotations).data());
    let empty = hybrid_example(Some(vec![]));
    let mut g = Graph::new(&model, false);
    let enc = g.encode(&Batch::new(&[&empty]).unwrap()).unwrap();
    let e = g.tape.gather_rows(g.param("tgt_emb"), &[2]).unwrap();
    let out = g.step(&enc, e, enc.s0, enc.cell0).unwrap();
    assert!(g.value(out.ret.unwrap()).data().iter().all(|&x| x == 0.0));
}

#[test]
fn zero_retrieval_weights_reduce_to_plain_output() {
    let plain = tiny(Variant::Hybrid, false);
    let mut with = tiny(Variant::Hybrid, true);
    for (name, t) in plain.params.iter() {
        if name == "out.w" {
            let mut data = t.data().to_vec();
            data.extend(vec![0.0; 8 * 12]);
            with.params.insert("out.w", Tensor::matrix(t.rows() + 8, 12, data).unwrap());
        } else {
            with.params.insert(name, t.clone());
        }
    }
    let a = hybrid_example(None);
    let b = hybrid_example(Some(vec![9, 7, 10]));
    let (lp, _, _) = loss_value(&plain, &Batch::new(&[&a]).unwrap(), 1.0);
    let (lr, _, _) = loss_value(&with, &Batch::new(&[&b]).unwrap(), 1.0);
    assert!((lp - lr).abs() < 1e-12, "{lp} vs {lr}");
}

#[test]
fn variant_separation() {
    for variant in [Variant::Sequential, Variant::Hybrid] {
        let model = tiny(variant, false);
        let ex = match variant {
            Variant::Sequential => sequential_example(),
            Variant::Hybrid => hybrid_example(None),
        };
        let (vars, grads) = gradients(&model, &Batch::new(&[&ex]).unwrap(), 1.0);
        for name in model.char_decoder_params() {
            let g = grads.get(vars[model.params.position(name).unwrap()]);
            match variant {
                Variant::Sequential => assert!(g.is_none(), "{name}"),
                Variant::Hybrid => assert!(g.unwrap().iter().any(|&x| x != 0.0), "{name}"),
            }
        }
    }
}

#[test]
fn lambda_scaling() {
    let model = tiny(Variant::Hybrid, false);
    let ex = hybrid_example(None);
    let batch = Batch::new(&[&ex]).unwrap();
    let (t1, w1, c1) = loss_value(&model, &batch, 1.0);
    let (t2, w2, _) = loss_value(&model, &batch, 2.0);
    assert!(c1 > 0.0);
    assert_eq!(w1, w2);
    assert!(((t2 - w2) - 2.0 * (t1 - w1)).abs() < 1e-12);
    let (vars, grads) = gradients(&model, &batch, 0.0);
    for name in model.char_decoder_params() {
        let g = grads.get(vars[model.params.position(name).unwrap()]).unwrap();
        assert!(g.iter().all(|&x| x == 0.0), "{name}");
    }
    let plain = Example::from_parts(text(vec![6, 7], &[]), table2b().surfaces(), text(vec![8, 9], &[]), None, Variant::Hybrid);
    let (t, w, c) = loss_value(&model, &Batch::new(&[&plain]).unwrap(), 1.0);
    assert_eq!((t, c), (w, 0.0));
}

#[test]
fn padding_changes_no_loss_bit() {
    let model = tiny(Variant::Hybrid, true);
    let a = hybrid_example(Some(vec![7, 10]));
    let b = Example::from_parts(text(vec![9, 6, 6, NUM], &[(3, "-0.45")]), table2b().surfaces(), text(vec![7], &[]), Some(vec![8]), Variant::Hybrid);
    let batch = Batch::new(&[&a, &b]).unwrap();
    let mut padded = batch.clone();
    padded.pad_to(batch.q_len + 3, batch.dec_len + 4);
    let x = loss_value(&model, &batch, 1.0);
    let y = loss_value(&model, &padded, 1.0);
    assert_eq!(x.0.to_bits(), y.0.to_bits());
    assert_eq!(x.2.to_bits(), y.2.to_bits());
    assert_eq!(x, loss_value(&model, &batch, 1.0));
}

#[test]
fn save_load_roundtrip() {
    let model = tiny(Variant::Hybrid, true);
    let dir = tempfile::tempdir().unwrap();
    model.save(dir.path()).unwrap();
    let back = Model::load(dir.path()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.params.tensors(), model.params.tensors());
}

#[test]
fn config_validation_names_field() {
    let mut cfg = ModelConfig::default();
    cfg.attn_dim = 0;
    match Model::new(cfg, 10, 10, 0) {
        Err(ModelError::Config { field, .. }) => assert_eq!(field, "attn_dim"),
        other => panic!("{other:?}"),
    }
}
