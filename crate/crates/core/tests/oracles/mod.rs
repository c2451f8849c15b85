//! Independent reference implementations and fuzz drivers. Shared by the
//! core integration tests and the acceptance target.
#![allow(dead_code)]

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabclar::corpus::{QueryResult, TableCorpus, ALL_DATABASES_FAILED, INVALID_DATABASE_PREFIX};
use tabclar::dialogue::Clause;
use tabclar::instance::QAInstance;
use tabclar::labels::{ConditionLabel, ScopeErrorType, ScopeLabel};
use tabclar::llm::{ChatRequest, LlmBackend, LlmError, ScriptedMock};
use tabclar::registry::{DomainId, UNKNOWN_DOMAIN};
use tabclar::retrieval::{bm25_rank, Bm25Index};
use tabclar::scope::slot_search;
use tabclar::simulator::{
    render_dynamic, ClarificationRequest, ClarificationResponse, Gating, Simulator, SimulatorMode,
};

/// Outcome of one oracle comparison.
#[derive(Debug, Default)]
pub struct Check {
    pub cases: usize,
    pub failures: Vec<String>,
}

impl Check {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn fail(&mut self, msg: String) {
        if self.failures.len() < 20 {
            self.failures.push(msg);
        }
    }
}

/// Lower-case characters with whitespace runs collapsed.
fn fold_chars(s: &str) -> Vec<char> {
    let mut out = Vec::new();
    for w in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(w.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Window-by-window substring test.
fn contains_window(hay: &[char], needle: &[char]) -> bool {
    needle.is_empty() || hay.windows(needle.len()).any(|w| w == needle)
}

pub fn brute_slot_count(corpus: &TableCorpus, domain: DomainId, value: &str) -> usize {
    let n = fold_chars(value);
    corpus
        .list_captions(domain)
        .iter()
        .filter(|c| contains_window(&fold_chars(c), &n))
        .count()
}

fn random_value(rng: &mut ChaCha8Rng, pool: &[String]) -> String {
    const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz ABCDEFGHIJ0123456789";
    match rng.gen_range(0..4) {
        // A piece of a real caption.
        0 | 1 => {
            let c: Vec<char> = pool.choose(rng).unwrap().chars().collect();
            let a = rng.gen_range(0..c.len());
            let b = rng.gen_range(a..=c.len().min(a + 24));
            let mut s: String = c[a..b].iter().collect();
            if rng.gen_bool(0.3) {
                s = s.to_uppercase();
            }
            if rng.gen_bool(0.3) {
                s = format!("  {}  ", s.replace(' ', "   "));
            }
            s
        }
        // A real slot-like word.
        2 => pool.choose(rng).unwrap().split_whitespace().next().unwrap().to_string(),
        _ => (0..rng.gen_range(1..8))
            .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
            .collect(),
    }
}

pub fn slot_search_fuzz(corpus: &TableCorpus, cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<String> = corpus.captions().map(str::to_string).collect();
    let mut check = Check::default();
    for i in 0..cases {
        let domain = *DomainId::ALL.choose(&mut rng).unwrap();
        let values: Vec<String> = (0..rng.gen_range(1..4))
            .map(|_| random_value(&mut rng, &pool))
            .collect();
        let got = slot_search(&values, domain.as_str(), corpus).unwrap();
        for v in &values {
            let want = brute_slot_count(corpus, domain, v);
            if got[v.as_str()] != want {
                check.fail(format!("case {i}: {domain} {v:?} got {} want {want}", got[v.as_str()]));
            }
        }
        check.cases += 1;
    }
    check
}

/// Okapi BM25 computed from scratch for one document, with the
/// `ln((N - df + 0.5) / (df + 0.5) + 1)` idf.
pub fn brute_bm25(docs: &[Vec<String>], query: &[String], i: usize, k1: f64, b: f64) -> f64 {
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|d| d.len() as f64).sum::<f64>() / n;
    let dl = docs[i].len() as f64;
    query
        .iter()
        .map(|q| {
            let df = docs.iter().filter(|d| d.contains(q)).count() as f64;
            let tf = docs[i].iter().filter(|t| *t == q).count() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
        })
        .sum()
}

pub fn bm25_fuzz(cases: usize, seed: u64) -> Check {
    const VOCAB: &[&str] = &[
        "land", "sales", "beijing", "pudong", "finance", "auction", "2021", "price", "tower",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut check = Check::default();
    for case in 0..cases {
        let n = rng.gen_range(1..=20);
        let mut captions: Vec<String> = Vec::new();
        while captions.len() < n {
            let len = rng.gen_range(1..7);
            let c = (0..len)
                .map(|_| *VOCAB.choose(&mut rng).unwrap())
                .collect::<Vec<_>>()
                .join(" ");
            if !captions.contains(&c) {
                captions.push(c);
            }
        }
        let docs: Vec<Vec<String>> = captions
            .iter()
            .map(|c| c.split(' ').map(str::to_string).collect())
            .collect();
        let mut query: Vec<String> = (0..rng.gen_range(1..5))
            .map(|_| VOCAB.choose(&mut rng).unwrap().to_string())
            .collect();
        if rng.gen_bool(0.2) {
            query.push("unseen".into());
        }
        let idx = Bm25Index::standard(&captions);
        let ranked = bm25_rank(&query.join(" "), &idx, captions.len());
        if ranked.len() != captions.len() {
            check.fail(format!(
                "case {case}: {} of {} captions ranked",
                ranked.len(),
                captions.len()
            ));
            continue;
        }
        let mut want: Vec<(String, f64)> = (0..docs.len())
            .map(|i| (captions[i].clone(), brute_bm25(&docs, &query, i, 1.2, 0.75)))
            .collect();
        for (c, s) in &ranked {
            let w = want.iter().find(|x| &x.0 == c).unwrap().1;
            if (s - w).abs() > 1e-9 {
                check.fail(format!("case {case}: {c:?} scored {s} want {w}"));
            }
        }
        // Same order as the brute scores, ties by caption.
        // Insertion by hand: a caption goes after everything that
        // outscores it by more than 1e-9 or ties with it and sorts first.
        let mut exp: Vec<(String, f64)> = Vec::new();
        for (c, s) in want.drain(..) {
            let at = exp
                .iter()
                .position(|(ec, es)| s - es > 1e-9 || ((s - es).abs() <= 1e-9 && c < *ec))
                .unwrap_or(exp.len());
            exp.insert(at, (c, s));
        }
        let got: Vec<&String> = ranked.iter().map(|r| &r.0).collect();
        let exp: Vec<&String> = exp.iter().map(|r| &r.0).collect();
        if got != exp {
            check.fail(format!("case {case}: order {got:?} want {exp:?}"));
        }
        check.cases += 1;
    }
    check
}

pub fn fallback_queries() -> Vec<String> {
    include_str!("../fixtures/fallback_queries.txt")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// The sentinel database against trying each domain in turn by hand, plus
/// the two error strings.
pub fn fallback_fixture(corpus: &TableCorpus) -> Check {
    let mut check = Check::default();
    for q in fallback_queries() {
        let mut want = QueryResult::error(ALL_DATABASES_FAILED);
        for d in DomainId::ALL {
            let r = corpus.execute_sql(&q, d.as_str());
            if r.is_rows() {
                want = r;
                break;
            }
        }
        let got = corpus.execute_sql(&q, UNKNOWN_DOMAIN);
        if got != want {
            check.fail(format!("{q}: {got:?} want {want:?}"));
        }
        check.cases += 1;
    }
    let all_fail = corpus.execute_sql("SELECT * FROM \"No Such Table\"", UNKNOWN_DOMAIN);
    if all_fail != QueryResult::error("Failed to execute SQL on all databases.") {
        check.fail(format!("all-fail message: {all_fail:?}"));
    }
    let invalid = corpus.execute_sql("SELECT 1", "warehouse");
    if invalid != QueryResult::error("Invalid database name: warehouse") || !INVALID_DATABASE_PREFIX.ends_with(": ") {
        check.fail(format!("invalid-name message: {invalid:?}"));
    }
    check.cases += 2;
    check
}

/// Every clarification value of at least three characters.
pub fn dictionary(instances: &[QAInstance]) -> Vec<String> {
    let mut out: Vec<String> = instances
        .iter()
        .flat_map(|i| {
            i.select_clarification
                .values()
                .chain(i.from_clarification.values())
                .chain(i.where_clarification.values())
                .cloned()
        })
        .filter(|v| v.chars().count() >= 3)
        .collect();
    out.sort();
    out.dedup();
    out
}

/// A request the simulator must refuse under strict gating.
fn wrong_request(rng: &mut ChaCha8Rng, inst: &QAInstance, dict: &[String]) -> ClarificationRequest {
    const TYPES: &[&str] = &["City", "District", "Year", "Month", "project name", "enterprise name"];
    loop {
        let content = match rng.gen_range(0..3) {
            0 => dict.choose(rng).unwrap().clone(),
            1 => inst
                .scope_labels
                .iter()
                .map(|l| l.slot_content.clone())
                .chain(inst.condition_labels.iter().map(|l| l.slot_content.clone()))
                .collect::<Vec<_>>()
                .choose(rng)
                .cloned()
                .unwrap_or_else(|| "zzz".into()),
            _ => format!("v{}", rng.gen::<u16>()),
        };
        let slot_type = TYPES.choose(rng).unwrap().to_string();
        let req = match rng.gen_range(0..3) {
            0 => ClarificationRequest::Intent(!inst.intent_underspec && rng.gen_bool(0.5)),
            1 => {
                let kind = *ScopeErrorType::ALL.choose(rng).unwrap();
                let label = if kind == ScopeErrorType::Missing {
                    ScopeLabel::missing(slot_type)
                } else {
                    match ScopeLabel::new(content, slot_type, kind) {
                        Ok(l) => l,
                        Err(_) => continue,
                    }
                };
                if inst.scope_labels.contains(&label) {
                    continue;
                }
                ClarificationRequest::Scope(label)
            }
            _ => {
                let Ok(label) = ConditionLabel::new(content, slot_type) else {
                    continue;
                };
                if inst.condition_labels.contains(&label) {
                    continue;
                }
                ClarificationRequest::Condition(label)
            }
        };
        return req;
    }
}

/// Wrong-label requests in both simulator modes; none may be answered or
/// carry a dictionary value.
pub fn gating_leak_fuzz(instances: &[QAInstance], cases: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = dictionary(instances);
    let echo = ScriptedMock::echo();
    let sims = [
        Simulator::fixed(),
        Simulator::new(SimulatorMode::dynamic(), Gating::Strict, Some(&echo)),
    ];
    let mut check = Check::default();
    for i in 0..cases {
        let inst = instances.choose(&mut rng).unwrap();
        let req = wrong_request(&mut rng, inst, &dict);
        let sim = &sims[i % 2];
        let resp = sim.clarify(inst, &req);
        let text = serde_json::to_string(&resp).unwrap();
        if resp != ClarificationResponse::Refused {
            check.fail(format!("{}: {req:?} answered with {text}", inst.id));
        }
        if let Some(v) = dict.iter().find(|v| text.contains(v.as_str())) {
            check.fail(format!("{}: {req:?} leaked {v:?}", inst.id));
        }
        check.cases += 1;
    }
    check
}

/// Drops the keyword with probability one half.
pub struct CoinFlip(pub Mutex<ChaCha8Rng>);

impl LlmBackend for CoinFlip {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        if self.0.lock().unwrap().gen_bool(0.5) {
            Ok(req.last_user().to_string())
        } else {
            Ok("Yes, the one I mentioned before.".into())
        }
    }
}

pub struct AlwaysDrop(pub AtomicU32);

impl LlmBackend for AlwaysDrop {
    fn complete(&self, _: &ChatRequest) -> Result<String, LlmError> {
        self.0.fetch_add(1, Ordering::SeqCst);
        Ok("Yes, the one I mentioned before.".into())
    }
}

pub fn dynamic_fidelity(instances: &[QAInstance], calls: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dict = dictionary(instances);
    let coin = CoinFlip(Mutex::new(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed)));
    let clauses = [Clause::Intent, Clause::Scope, Clause::Condition];
    let mut check = Check::default();
    for i in 0..calls {
        let kw = dict.choose(&mut rng).unwrap();
        let clause = clauses[i % 3];
        let (text, n, _) = render_dynamic(clause, "City", kw, &coin, 5);
        if !text.contains(kw.as_str()) || n == 0 || n > 5 {
            check.fail(format!("call {i}: {text:?} after {n} calls lacks {kw:?}"));
        }
        check.cases += 1;
    }
    let drop = AlwaysDrop(AtomicU32::new(0));
    let (text, n, fell_back) = render_dynamic(Clause::Condition, "project name", "Jade Lake Mansion", &drop, 5);
    if (n, fell_back, drop.0.load(Ordering::SeqCst)) != (5, true, 5) || !text.contains("Jade Lake Mansion") {
        check.fail(format!("always-drop: {n} calls, fell_back={fell_back}, text {text:?}"));
    }
    check.cases += 1;
    check
}

#[derive(serde::Deserialize)]
struct FixtureInstance {
    detection: tabclar::evalharness::DetectionOutcome,
    pred_captions: Vec<String>,
    gold_captions: Vec<String>,
    sql: tabclar::evalharness::SqlOutcome,
}

#[derive(serde::Deserialize)]
struct MetricsFixture {
    expected: std::collections::BTreeMap<String, f64>,
    instances: Vec<FixtureInstance>,
}

/// The harness metrics on the hand-computed ten-instance fixture, to 1e-12.
pub fn metrics_fixture() -> Check {
    use tabclar::evalharness::metrics::{score_detection, score_retrieval, score_sql};
    let f: MetricsFixture = serde_json::from_str(include_str!("../fixtures/metrics10.json")).unwrap();
    let det: Vec<_> = f.instances.iter().map(|i| i.detection.clone()).collect();
    let d = score_detection(&det);
    let pred: Vec<_> = f.instances.iter().map(|i| i.pred_captions.clone()).collect();
    let gold: Vec<_> = f.instances.iter().map(|i| i.gold_captions.clone()).collect();
    let sql: Vec<_> = f.instances.iter().map(|i| i.sql.clone()).collect();
    let (ecr, ea) = score_sql(&sql);
    let got = [
        ("select_acc", Some(d.select_acc)),
        ("select_f1", d.select_f1),
        ("from_acc", Some(d.from_acc)),
        ("from_f1", d.from_f1),
        ("where_acc", Some(d.where_acc)),
        ("where_f1", d.where_f1),
        ("mixed_acc", Some(d.mixed_acc)),
        ("retrieval_f1", Some(score_retrieval(&pred, &gold))),
        ("ecr", Some(ecr)),
        ("ea", Some(ea)),
    ];
    let mut check = Check::default();
    for (name, v) in got {
        let want = f.expected[name];
        match v {
            Some(v) if (v - want).abs() <= 1e-12 => {}
            other => check.fail(format!("{name}: got {other:?} want {want}")),
        }
        check.cases += 1;
    }
    if d.mixed_acc > d.select_acc.min(d.from_acc).min(d.where_acc) {
        check.fail("mixed accuracy exceeds a per-clause accuracy".into());
    }
    check
}
