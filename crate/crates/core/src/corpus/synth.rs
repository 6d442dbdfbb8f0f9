//! Synthetic stock QA corpus.
//!
//! Answers combine a trend commentary, chosen from the shape of the moving
//! averages (MovAvg5 and MovAvg10 relative to MovAvg20), with a class
//! clause. Support answers quote `Low·(1+u)`, resistance and action answers
//! quote `High·(1+u)`, `u ~ U(−0.02, 0.02)`; trend answers carry no number.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Feature, QAInstance, StockKB, FEATURE_COUNT};
use crate::tokenizer::detect_numbers;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QuestionClass {
    Support,
    Resistance,
    Trend,
    Action,
}

impl QuestionClass {
    pub const ALL: [QuestionClass; 4] =
        [QuestionClass::Support, QuestionClass::Resistance, QuestionClass::Trend, QuestionClass::Action];
}

/// Template text for the generator. `{cost}` and `{num}` mark number slots.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemplateSet {
    pub support: Vec<String>,
    pub resistance: Vec<String>,
    pub trend: Vec<String>,
    pub action: Vec<String>,
    /// Nine commentaries indexed by `3·bin(MovAvg5/MovAvg20) + bin(MovAvg10/MovAvg20)`.
    pub commentary: Vec<String>,
    pub support_clause: String,
    pub resistance_clause: String,
    /// Indexed by `bin(MovAvg5/MovAvg20)`.
    pub trend_clause: Vec<String>,
    pub trapped_clause: String,
    pub profit_clause: String,
}

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            support: strings(&[
                "what is the support level of #STOCK# ?",
                "expert , where is the support of this stock ?",
                "could you tell me the support price ?",
            ]),
            resistance: strings(&[
                "what is the resistance level of #STOCK# ?",
                "expert , where is the pressure level of this stock ?",
                "could you tell me the resistance price ?",
            ]),
            trend: strings(&[
                "will #STOCK# continue to fall ?",
                "expert , how is the trend of this stock ?",
                "can this stock keep rising ?",
            ]),
            action: strings(&[
                "I bought at {cost} , how to handle it ?",
                "my cost is {cost} , what should I do ?",
                "expert , I hold it at {cost} , sell or hold ?",
            ]),
            commentary: strings(&[
                "the stock is in a weak downtrend",
                "the short term trend is weakening",
                "the stock is rebounding from a low",
                "the price is falling back slowly",
                "the stock is moving sideways",
                "the stock is building a base",
                "the rally is losing momentum",
                "the stock is in a steady uptrend",
                "the stock is in a strong uptrend",
            ]),
            support_clause: "the support level is around {num} .".into(),
            resistance_clause: "the resistance level is near {num} .".into(),
            trend_clause: strings(&[
                "sell some shares to reduce risk .",
                "hold it and wait for a clear signal .",
                "keep holding it .",
            ]),
            trapped_clause: "you are trapped , hold and sell near {num} .".into(),
            profit_clause: "you are in profit , take profit near {num} .".into(),
        }
    }
}

impl TemplateSet {
    fn questions(&self, class: QuestionClass) -> &[String] {
        match class {
            QuestionClass::Support => &self.support,
            QuestionClass::Resistance => &self.resistance,
            QuestionClass::Trend => &self.trend,
            QuestionClass::Action => &self.action,
        }
    }

    /// Recovers the class of a generated question.
    pub fn classify(&self, question: &str) -> Option<QuestionClass> {
        let masked = mask_numbers(question);
        QuestionClass::ALL.into_iter().find(|&c| {
            self.questions(c).iter().any(|t| t.replace("{cost}", "{}") == masked)
        })
    }
}

fn mask_numbers(text: &str) -> String {
    let mut out = String::new();
    let mut last = 0;
    for (span, _) in detect_numbers(text) {
        out.push_str(&text[last..span.start]);
        out.push_str("{}");
        last = span.end;
    }
    out.push_str(&text[last..]);
    out
}

fn r2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn bin(ratio: f64) -> usize {
    if ratio < 0.97 {
        0
    } else if ratio <= 1.03 {
        1
    } else {
        2
    }
}

/// Commentary cell of a knowledge base, `0..9`.
pub fn trend_cell(kb: &StockKB) -> usize {
    let ma20 = kb.get(Feature::MovAvg20);
    3 * bin(kb.get(Feature::MovAvg5) / ma20) + bin(kb.get(Feature::MovAvg10) / ma20)
}

/// `target·(1+u)` at two decimals, kept within 2% of `target`.
fn near(target: f64, u: f64) -> f64 {
    let mut n = r2(target * (1.0 + u));
    while (n - target).abs() / target > 0.02 {
        n = r2(if n > target { n - 0.01 } else { n + 0.01 });
    }
    n
}

fn sample_kb(rng: &mut ChaCha8Rng) -> StockKB {
    let p: f64 = rng.gen_range(1.0..=500.0);
    let close = r2(p);
    let open = r2(close * (1.0 + rng.gen_range(-0.03..0.03))).max(0.01);
    let high = r2(open.max(close) * (1.0 + rng.gen_range(0.0..0.03)));
    let low = r2(open.min(close) * (1.0 - rng.gen_range(0.0..0.03)));
    let mut ma = || r2(close * (1.0 + rng.gen_range(-0.1..0.1)));
    let (ma5, ma10, ma20) = (ma(), ma(), ma());
    let (lo, hi) = (1e3f64.ln(), 1e6f64.ln());
    let mut vol = || rng.gen_range(lo..hi).exp().round();
    let (v, v5, v10, v20) = (vol(), vol(), vol(), vol());
    let change = r2(close - open);
    let rate = r2(change / open);
    let turnover = r2(rng.gen_range(0.1..20.0));
    let mut values = [0.0; FEATURE_COUNT];
    for (f, x) in [
        (Feature::Open, open),
        (Feature::Close, close),
        (Feature::High, high),
        (Feature::Low, low),
        (Feature::MovAvg5, ma5),
        (Feature::MovAvg10, ma10),
        (Feature::MovAvg20, ma20),
        (Feature::Volume, v),
        (Feature::AvgVol5, v5),
        (Feature::AvgVol10, v10),
        (Feature::AvgVol20, v20),
        (Feature::PriceChange, change),
        (Feature::ChangeRate, rate),
        (Feature::Turnover, turnover),
    ] {
        values[f.index()] = x;
    }
    StockKB::new(values)
}

/// `n` instances drawn deterministically from `seed`.
pub fn generate_synthetic(n: usize, seed: u64, templates: &TemplateSet) -> Vec<QAInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let class = QuestionClass::ALL[rng.gen_range(0..4)];
            let qs = templates.questions(class);
            let q_template = &qs[rng.gen_range(0..qs.len())];
            let kb = sample_kb(&mut rng);
            let u: f64 = rng.gen_range(-0.02..0.02);
            let cost = r2(kb.get(Feature::Close) * (1.0 + rng.gen_range(-0.15..0.15))).max(0.01);
            let question = q_template.replace("{cost}", &format!("{cost:.2}"));
            let cell = trend_cell(&kb);
            let commentary = &templates.commentary[cell % templates.commentary.len()];
            let clause = match class {
                QuestionClass::Support => {
                    templates.support_clause.replace("{num}", &format!("{:.2}", near(kb.get(Feature::Low), u)))
                }
                QuestionClass::Resistance => templates
                    .resistance_clause
                    .replace("{num}", &format!("{:.2}", near(kb.get(Feature::High), u))),
                QuestionClass::Trend => templates.trend_clause[cell / 3].clone(),
                QuestionClass::Action => {
                    let t = if cost > kb.get(Feature::Close) {
                        &templates.trapped_clause
                    } else {
                        &templates.profit_clause
                    };
                    t.replace("{num}", &format!("{:.2}", near(kb.get(Feature::High), u)))
                }
            };
            QAInstance {
                id: format!("syn{seed}-{i:06}"),
                question,
                answer: format!("{commentary} , {clause}"),
                kb,
            }
        })
        .collect()
}
