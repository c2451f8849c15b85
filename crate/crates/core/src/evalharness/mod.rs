//! The closed detection–clarification–QA loop over a dataset, with traces
//! and metrics.

pub mod metrics;

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::TableCorpus;
use crate::dialogue::{Clause, DialogueState, Event};
use crate::instance::{QAInstance, Split};
use crate::labels::{Category, ConditionLabel, ScopeLabel};
use crate::llm::LlmBackend;
use crate::registry::IntentRegistry;
use crate::retrieval::{retrieve, LlmSummarizer, Method, ReferenceSummarizer, RetrievalIndex, Summarizer, SummaryBank};
use crate::scope::{validate_scope, ScopeOptions};
use crate::seed;
use crate::simulator::{Gating, Simulator, SimulatorMode};
use crate::slu::{clarify_intent, detect_intent_underspec, map_domain, predict, LlmSlu, ReferenceSlu, SluBackend};
use crate::sqlgen::{ConditionSource, LlmSqlGen, ReferenceSqlGen, SqlBank, SqlGenerator, SqlStage};
use crate::templates::TemplatePack;

pub use metrics::{DetectionOutcome, DetectionScores, SqlOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DetectorMode {
    /// Labels come from the pipeline's own checks.
    #[default]
    Pipeline,
    /// Gold labels.
    Oracle,
    /// Gold labels with each family corrupted at `rate`.
    Noisy { rate: f64, seed: u64 },
}

impl DetectorMode {
    pub fn name(&self) -> &'static str {
        match self {
            DetectorMode::Pipeline => "pipeline",
            DetectorMode::Oracle => "oracle",
            DetectorMode::Noisy { .. } => "noisy",
        }
    }
}

/// Clarification mechanisms to switch off. Detection is unaffected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    #[serde(default)]
    pub no_select: bool,
    #[serde(default)]
    pub no_from: bool,
    #[serde(default)]
    pub no_where: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageBackend {
    #[default]
    Reference,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Backends {
    #[serde(default)]
    pub slu: StageBackend,
    #[serde(default)]
    pub summarizer: StageBackend,
    #[serde(default)]
    pub sqlgen: StageBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    #[serde(default)]
    pub detector: DetectorMode,
    #[serde(default)]
    pub simulator: SimulatorMode,
    #[serde(default)]
    pub gating: Gating,
    #[serde(default)]
    pub ablation: Ablation,
    #[serde(default)]
    pub backends: Backends,
    #[serde(default = "default_k1")]
    pub k1: f64,
    #[serde(default = "default_b")]
    pub b: f64,
    /// Evaluate one split; every instance when absent.
    #[serde(default)]
    pub split: Option<Split>,
}

fn default_k1() -> f64 {
    crate::retrieval::DEFAULT_K1
}

fn default_b() -> f64 {
    crate::retrieval::DEFAULT_B
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            detector: DetectorMode::default(),
            simulator: SimulatorMode::default(),
            gating: Gating::default(),
            ablation: Ablation::default(),
            backends: Backends::default(),
            k1: default_k1(),
            b: default_b(),
            split: None,
        }
    }
}

/// Shared read-only inputs.
pub struct Resources<'a> {
    pub corpus: &'a TableCorpus,
    pub pack: &'a TemplatePack,
    pub intents: &'a IntentRegistry,
    pub llm: Option<&'a dyn LlmBackend>,
    pub sql_bank: &'a SqlBank,
    pub summary_bank: &'a SummaryBank,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0} needs a model backend but none is configured")]
    MissingBackend(&'static str),
    #[error("no instances to evaluate")]
    Empty,
    #[error("trace: {0}")]
    Trace(String),
    #[error("cannot build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Labels a non-pipeline detector commits to for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Forced {
    pub intent: bool,
    pub scope: Vec<ScopeLabel>,
    pub condition: Vec<ConditionLabel>,
}

/// Oracle labels, or gold labels with families corrupted independently:
/// the intent flag flips, a labelled family loses its labels and an
/// unlabelled one gains a spurious label.
pub fn forced_labels(mode: DetectorMode, inst: &QAInstance, corpus: &TableCorpus) -> Option<Forced> {
    let gold = Forced {
        intent: inst.intent_underspec,
        scope: inst.scope_labels.clone(),
        condition: inst.condition_labels.clone(),
    };
    let (rate, s) = match mode {
        DetectorMode::Pipeline => return None,
        DetectorMode::Oracle => return Some(gold),
        DetectorMode::Noisy { rate, seed } => (rate.clamp(0.0, 1.0), seed),
    };
    let mut rng = seed::rng(s, &["noisy", &inst.id]);
    let mut out = gold;
    let registry = corpus.slots().ok();
    if rng.gen_bool(rate) {
        out.intent = !out.intent;
    }
    if rng.gen_bool(rate) {
        out.scope = if out.scope.is_empty() {
            let required = corpus.required_scope_slots(inst.domain);
            match (required.first(), registry) {
                (Some(t), Some(r)) => vec![ScopeLabel::missing(r.label(t))],
                _ => Vec::new(),
            }
        } else {
            Vec::new()
        };
    }
    if rng.gen_bool(rate) {
        out.condition = if out.condition.is_empty() {
            let slots = inst.question_slots();
            registry
                .and_then(|r| {
                    r.entity_types().find_map(|t| {
                        slots
                            .get(t)
                            .and_then(|v| ConditionLabel::new(v.as_str(), r.label(t)).ok())
                    })
                })
                .into_iter()
                .collect()
        } else {
            Vec::new()
        };
    }
    Some(out)
}

/// Everything the metrics need for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: String,
    pub category: Category,
    pub detection: DetectionOutcome,
    pub pred_captions: Vec<String>,
    pub gold_captions: Vec<String>,
    pub retrieval_method: Method,
    pub attempts: usize,
    pub final_sql: String,
    pub sql: SqlOutcome,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub id: String,
    pub events: Vec<Event>,
    pub outcome: Outcome,
}

struct Stages<'a> {
    slu: Box<dyn SluBackend + 'a>,
    summarizer: Box<dyn Summarizer + 'a>,
    sqlgen: Box<dyn SqlGenerator + 'a>,
    sim: Simulator<'a>,
    index: RetrievalIndex,
}

impl<'a> Stages<'a> {
    fn build(cfg: &HarnessConfig, res: &Resources<'a>) -> Result<Self, HarnessError> {
        let need = |what| res.llm.ok_or(HarnessError::MissingBackend(what));
        let slu: Box<dyn SluBackend> = match cfg.backends.slu {
            StageBackend::Reference => Box::new(ReferenceSlu::new(res.pack, res.corpus)),
            StageBackend::Llm => Box::new(LlmSlu {
                llm: need("slu")?,
                intents: res.intents,
                slots: res.corpus.slots().map_err(|e| HarnessError::Trace(e.to_string()))?,
            }),
        };
        let summarizer: Box<dyn Summarizer> = match cfg.backends.summarizer {
            StageBackend::Reference => Box::new(ReferenceSummarizer { pack: res.pack }),
            StageBackend::Llm => Box::new(LlmSummarizer {
                llm: need("summarizer")?,
                bank: res.summary_bank,
            }),
        };
        let sqlgen: Box<dyn SqlGenerator> = match cfg.backends.sqlgen {
            StageBackend::Reference => Box::new(ReferenceSqlGen { pack: res.pack }),
            StageBackend::Llm => Box::new(LlmSqlGen {
                llm: need("sqlgen")?,
                bank: res.sql_bank,
            }),
        };
        if matches!(cfg.simulator, SimulatorMode::Dynamic { .. }) {
            need("dynamic simulator")?;
        }
        Ok(Self {
            slu,
            summarizer,
            sqlgen,
            sim: Simulator::new(cfg.simulator, cfg.gating, res.llm),
            index: RetrievalIndex::build(res.corpus, cfg.k1, cfg.b),
        })
    }
}

fn run_instance(inst: &QAInstance, cfg: &HarnessConfig, res: &Resources, st: &Stages) -> InstanceRecord {
    let corpus = res.corpus;
    let forced = forced_labels(cfg.detector, inst, corpus);
    let mut ds = DialogueState::new(&inst.question);

    let mut slu = predict(st.slu.as_ref(), &inst.question);
    ds.record(Event::Slu {
        phase: "initial".into(),
        intents: slu.intents.clone(),
        slots: slu.slots.clone(),
    });
    let pred_intent = forced
        .as_ref()
        .map_or_else(|| detect_intent_underspec(&slu), |f| f.intent);
    ds.record(Event::Detect {
        clause: Clause::Intent,
        intent: Some(pred_intent),
        scope: Vec::new(),
        condition: Vec::new(),
    });
    if pred_intent {
        if cfg.ablation.no_select {
            ds.record(Event::Suppressed { clause: Clause::Intent });
        } else {
            slu = clarify_intent(&mut ds, inst, slu, st.slu.as_ref(), &st.sim).0;
        }
    }
    ds.intents = slu.intents.clone();
    ds.slots = slu.slots.clone();

    let (domain, conflicts) = map_domain(&slu.intents, res.intents);
    ds.record(Event::Domain { domain, conflicts });

    let verdict = validate_scope(
        &mut ds,
        inst,
        &slu.slots,
        domain,
        corpus,
        forced.as_ref().map(|f| f.scope.clone()),
        &st.sim,
        ScopeOptions {
            clarify: !cfg.ablation.no_from,
            revalidate: true,
        },
    );
    let pred_scope = forced
        .as_ref()
        .map_or_else(|| verdict.detected.clone(), |f| f.scope.clone());
    ds.record(Event::Detect {
        clause: Clause::Scope,
        intent: None,
        scope: pred_scope.clone(),
        condition: Vec::new(),
    });
    let slots = verdict.resolved_slots;
    ds.slots = slots.clone();

    let retrieval = retrieve(
        &mut ds,
        &slu.intents,
        &slots,
        domain,
        corpus,
        &st.index,
        st.summarizer.as_ref(),
    );
    let pred_captions: Vec<String> = retrieval.top().map(str::to_string).into_iter().collect();

    let stage = SqlStage {
        generator: st.sqlgen.as_ref(),
        corpus,
        sim: &st.sim,
        clarify: !cfg.ablation.no_where,
    };
    let source = match &forced {
        Some(f) => ConditionSource::Given(f.condition.clone()),
        None => ConditionSource::Reference,
    };
    let sql = stage.run(&mut ds, inst, &slu.intents, domain, &slots, &retrieval.captions, source);
    let pred_condition = forced.map_or_else(|| sql.condition_labels_emitted.clone(), |f| f.condition);

    let outcome = Outcome {
        id: inst.id.clone(),
        category: inst.category,
        detection: DetectionOutcome {
            gold_intent: inst.intent_underspec,
            pred_intent,
            gold_scope: inst.scope_labels.clone(),
            pred_scope,
            gold_condition: inst.condition_labels.clone(),
            pred_condition,
        },
        pred_captions,
        gold_captions: inst.gold_captions.clone(),
        retrieval_method: retrieval.method,
        attempts: sql.attempts.len(),
        final_sql: sql.final_sql.clone(),
        sql: SqlOutcome {
            executed: sql.executed(),
            final_result: sql.final_result,
            gold_answer: inst.gold_answer.clone(),
            gold_ordered: metrics::is_ordered(&inst.gold_sql),
        },
    };
    InstanceRecord {
        id: inst.id.clone(),
        events: ds.events,
        outcome,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub instances: usize,
    pub by_category: IndexMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fingerprint: String,
    pub detector: String,
    pub simulator: String,
    pub ablation: Ablation,
    pub counts: Counts,
    pub select_acc: f64,
    pub select_f1: Option<f64>,
    pub from_acc: f64,
    pub from_f1: Option<f64>,
    pub where_acc: f64,
    pub where_f1: Option<f64>,
    pub mixed_acc: f64,
    pub retrieval_f1: f64,
    pub ecr: f64,
    pub ea: f64,
}

/// Run identity carried by the trace so a report can be rebuilt from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub fingerprint: String,
    pub detector: String,
    pub simulator: String,
    pub ablation: Ablation,
}

impl RunHeader {
    pub fn new(cfg: &HarnessConfig, instances: &[&QAInstance]) -> Self {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(cfg).expect("config serializes"));
        for i in instances {
            h.update(i.id.as_bytes());
            h.update([0]);
            h.update(i.question.as_bytes());
            h.update([0]);
        }
        let fingerprint = h.finalize().iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        Self {
            fingerprint,
            detector: cfg.detector.name().into(),
            simulator: cfg.simulator.name().into(),
            ablation: cfg.ablation,
        }
    }
}

pub fn build_report(header: &RunHeader, outcomes: &[Outcome]) -> MetricsReport {
    let det: Vec<DetectionOutcome> = outcomes.iter().map(|o| o.detection.clone()).collect();
    let d = metrics::score_detection(&det);
    let pred: Vec<Vec<String>> = outcomes.iter().map(|o| o.pred_captions.clone()).collect();
    let gold: Vec<Vec<String>> = outcomes.iter().map(|o| o.gold_captions.clone()).collect();
    let sql: Vec<SqlOutcome> = outcomes.iter().map(|o| o.sql.clone()).collect();
    let (ecr, ea) = metrics::score_sql(&sql);
    let mut by_category = IndexMap::new();
    for c in Category::ALL {
        by_category.insert(
            c.as_str().to_string(),
            outcomes.iter().filter(|o| o.category == c).count(),
        );
    }
    MetricsReport {
        fingerprint: header.fingerprint.clone(),
        detector: header.detector.clone(),
        simulator: header.simulator.clone(),
        ablation: header.ablation,
        counts: Counts {
            instances: outcomes.len(),
            by_category,
        },
        select_acc: d.select_acc,
        select_f1: d.select_f1,
        from_acc: d.from_acc,
        from_f1: d.from_f1,
        where_acc: d.where_acc,
        where_f1: d.where_f1,
        mixed_acc: d.mixed_acc,
        retrieval_f1: metrics::score_retrieval(&pred, &gold),
        ecr,
        ea,
    }
}

pub struct BenchmarkRun {
    pub header: RunHeader,
    pub records: Vec<InstanceRecord>,
    pub report: MetricsReport,
}

/// Instances `cfg` selects, in dataset order.
pub fn select<'d>(instances: &'d [QAInstance], cfg: &HarnessConfig) -> Vec<&'d QAInstance> {
    instances
        .iter()
        .filter(|i| cfg.split.is_none_or(|s| i.split == s))
        .collect()
}

/// Runs every selected instance on a pool of `workers` threads. Records
/// come back in dataset order whatever the pool size.
pub fn run_benchmark(
    instances: &[QAInstance],
    cfg: &HarnessConfig,
    res: &Resources,
    workers: usize,
) -> Result<BenchmarkRun, HarnessError> {
    let chosen = select(instances, cfg);
    if chosen.is_empty() {
        return Err(HarnessError::Empty);
    }
    let stages = Stages::build(cfg, res)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let records: Vec<InstanceRecord> =
        pool.install(|| chosen.par_iter().map(|i| run_instance(i, cfg, res, &stages)).collect());
    let header = RunHeader::new(cfg, &chosen);
    let outcomes: Vec<Outcome> = records.iter().map(|r| r.outcome.clone()).collect();
    let report = build_report(&header, &outcomes);
    Ok(BenchmarkRun {
        header,
        records,
        report,
    })
}

#[derive(Serialize)]
struct EventLine<'a> {
    record: &'static str,
    id: &'a str,
    seq: usize,
    #[serde(flatten)]
    event: &'a Event,
}

#[derive(Serialize, Deserialize)]
struct OutcomeLine {
    record: String,
    #[serde(flatten)]
    outcome: Outcome,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    record: String,
    count: usize,
    #[serde(flatten)]
    header: RunHeader,
}

/// One line per dialogue event, one outcome line per instance, then a
/// summary line with the instance count.
pub fn write_trace<W: Write>(mut w: W, run: &BenchmarkRun) -> std::io::Result<()> {
    for r in &run.records {
        for (seq, event) in r.events.iter().enumerate() {
            let line = EventLine {
                record: "event",
                id: &r.id,
                seq,
                event,
            };
            serde_json::to_writer(&mut w, &line)?;
            w.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut w,
            &OutcomeLine {
                record: "outcome".into(),
                outcome: r.outcome.clone(),
            },
        )?;
        w.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut w,
        &SummaryLine {
            record: "summary".into(),
            count: run.records.len(),
            header: run.header.clone(),
        },
    )?;
    w.write_all(b"\n")?;
    w.flush()
}

/// Rebuilds the report from a trace. Fails on an empty trace, a missing
/// summary line or a count that disagrees with the outcomes present.
pub fn eval_trace<R: BufRead>(r: R) -> Result<MetricsReport, HarnessError> {
    let mut outcomes = Vec::new();
    let mut summary: Option<SummaryLine> = None;
    let mut lines = 0usize;
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        lines += 1;
        if summary.is_some() {
            return Err(HarnessError::Trace(format!(
                "line {}: content after the summary",
                n + 1
            )));
        }
        let v: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| HarnessError::Trace(format!("line {}: {e}", n + 1)))?;
        let bad = |e: serde_json::Error| HarnessError::Trace(format!("line {}: {e}", n + 1));
        match v.get("record").and_then(|x| x.as_str()) {
            Some("event") => {}
            Some("outcome") => outcomes.push(serde_json::from_value::<OutcomeLine>(v).map_err(bad)?.outcome),
            Some("summary") => summary = Some(serde_json::from_value(v).map_err(bad)?),
            _ => return Err(HarnessError::Trace(format!("line {}: unknown record", n + 1))),
        }
    }
    if lines == 0 {
        return Err(HarnessError::Trace("empty trace".into()));
    }
    let s = summary.ok_or_else(|| HarnessError::Trace("truncated: no summary line".into()))?;
    if s.count != outcomes.len() {
        return Err(HarnessError::Trace(format!(
            "truncated: summary counts {} instances, found {}",
            s.count,
            outcomes.len()
        )));
    }
    Ok(build_report(&s.header, &outcomes))
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v))
}

/// Plain-text metrics table.
pub fn render_report(r: &MetricsReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "detector  {}   simulator  {}   instances  {}",
        r.detector, r.simulator, r.counts.instances
    );
    let a = r.ablation;
    if a.no_select || a.no_from || a.no_where {
        let _ = writeln!(
            s,
            "ablation  no_select={} no_from={} no_where={}",
            a.no_select, a.no_from, a.no_where
        );
    }
    let _ = writeln!(s, "fingerprint  {}", r.fingerprint);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<10} {:>8} {:>8}", "clause", "acc", "f1");
    for (name, acc, f1) in [
        ("select", r.select_acc, r.select_f1),
        ("from", r.from_acc, r.from_f1),
        ("where", r.where_acc, r.where_f1),
    ] {
        let _ = writeln!(s, "{:<10} {:>8.4} {:>8}", name, acc, cell(f1));
    }
    let _ = writeln!(s, "{:<10} {:>8.4} {:>8}", "mixed", r.mixed_acc, "");
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<14} {:>8.4}", "retrieval_f1", r.retrieval_f1);
    let _ = writeln!(s, "{:<14} {:>8.4}", "ecr", r.ecr);
    let _ = writeln!(s, "{:<14} {:>8.4}", "ea", r.ea);
    s
}
