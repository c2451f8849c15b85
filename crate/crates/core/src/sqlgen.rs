//! SQL generation, execution checks, condition labels and the single
//! clarification-driven regeneration.

use std::collections::HashSet;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::bio::SlotBinding;
use crate::corpus::{QueryResult, TableCorpus};
use crate::dialogue::{Clause, DialogueState, Event, Speaker};
use crate::instance::QAInstance;
use crate::labels::ConditionLabel;
use crate::llm::{prompts, strip_fence, ChatRequest, LlmBackend, Message, Stage};
use crate::registry::{DomainId, DomainRef, UNKNOWN_INTENT};
use crate::scope::{clarification_question, record_clarify};
use crate::simulator::{ClarificationRequest, Simulator};
use crate::templates::{placeholders, substitute_sql, TemplatePack};
use crate::text::normalize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    EmptyOrPartial,
    ExecError,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Success => "success",
            Verdict::EmptyOrPartial => "empty_or_partial",
            Verdict::ExecError => "exec_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlAttempt {
    pub sql: String,
    pub result: QueryResult,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalOutcome {
    /// One or two.
    pub attempts: Vec<SqlAttempt>,
    pub final_sql: String,
    pub final_result: QueryResult,
    pub condition_labels_emitted: Vec<ConditionLabel>,
}

impl FinalOutcome {
    /// Whether the last SQL ran without an engine error.
    pub fn executed(&self) -> bool {
        self.attempts.last().is_some_and(|a| a.result.is_rows())
    }
}

pub trait SqlGenerator: Send + Sync {
    /// One SQL string; empty when generation failed.
    fn generate(
        &self,
        ds: &DialogueState,
        intents: &[String],
        domain: DomainRef,
        slots: &SlotBinding,
        captions: &[String],
    ) -> String;
}

/// Instantiates the SQL of the template the intents select, with the
/// retrieved caption in place of the caption pattern.
pub struct ReferenceSqlGen<'a> {
    pub pack: &'a TemplatePack,
}

impl SqlGenerator for ReferenceSqlGen<'_> {
    fn generate(
        &self,
        _ds: &DialogueState,
        intents: &[String],
        _domain: DomainRef,
        slots: &SlotBinding,
        captions: &[String],
    ) -> String {
        let Some(caption) = captions.first() else {
            return String::new();
        };
        let template = (intents != [UNKNOWN_INTENT])
            .then(|| self.pack.by_intents(intents))
            .flatten();
        let Some(t) = template else {
            return format!("SELECT * FROM \"{caption}\"");
        };
        let pattern = format!("\"{}\"", t.from_clarification);
        let sql = t.sql_template.replace(&pattern, &format!("\"{caption}\""));
        let mut binding = slots.clone();
        for p in placeholders(&sql) {
            binding.entry(p).or_default();
        }
        substitute_sql(&sql, &binding).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SqlExample {
    pub question: String,
    pub sql: String,
}

/// Intent → five worked examples.
pub type SqlBank = IndexMap<String, Vec<SqlExample>>;

pub struct LlmSqlGen<'a> {
    pub llm: &'a dyn LlmBackend,
    pub bank: &'a SqlBank,
}

impl SqlGenerator for LlmSqlGen<'_> {
    fn generate(
        &self,
        ds: &DialogueState,
        intents: &[String],
        domain: DomainRef,
        slots: &SlotBinding,
        captions: &[String],
    ) -> String {
        let examples = intents
            .iter()
            .find_map(|i| self.bank.get(i))
            .map(|v| {
                v.iter()
                    .map(|e| format!("Question: {}\nSQL: {}", e.question, e.sql))
                    .collect::<Vec<_>>()
                    .join("\n\n")
            })
            .unwrap_or_default();
        let system = prompts::fill(
            prompts::SQLGEN,
            &[
                ("domain", &domain.to_string()),
                ("slots", &serde_json::to_string(slots).unwrap_or_default()),
                ("captions", &captions.join("\n")),
                ("examples", &examples),
            ],
        );
        let req = ChatRequest::new(
            Stage::Sqlgen,
            vec![Message::system(system), Message::user(ds.transcript())],
        );
        match self.llm.complete(&req) {
            Ok(out) => strip_fence(&out).trim().trim_end_matches(';').trim().to_string(),
            Err(_) => String::new(),
        }
    }
}

/// Distinct requested entity values per result column that holds them.
fn requested_entities(
    slots: &SlotBinding,
    domain: DomainRef,
    corpus: &TableCorpus,
) -> IndexMap<String, HashSet<String>> {
    let mut out: IndexMap<String, HashSet<String>> = IndexMap::new();
    let Ok(registry) = corpus.slots() else { return out };
    let domains: Vec<DomainId> = match domain {
        DomainRef::Known(d) => vec![d],
        DomainRef::Unknown => DomainId::ALL.to_vec(),
    };
    for t in registry.entity_types() {
        let Some(v) = slots.get(t).filter(|v| !v.trim().is_empty()) else {
            continue;
        };
        for d in &domains {
            for col in registry.columns(t, *d).unwrap_or(&[]) {
                out.entry(col.clone()).or_default().insert(normalize(v));
            }
        }
    }
    out
}

/// Runs `sql` and classifies the result. A result is partial when a
/// returned column holding requested entities covers fewer of them than
/// the slots name.
pub fn validate_attempt(sql: &str, domain: DomainRef, slots: &SlotBinding, corpus: &TableCorpus) -> SqlAttempt {
    let result = if sql.trim().is_empty() {
        QueryResult::error("no SQL generated")
    } else {
        corpus.execute_sql(sql, &domain.to_string())
    };
    let verdict = match result.rows() {
        None => Verdict::ExecError,
        Some((_, [])) => Verdict::EmptyOrPartial,
        Some((header, rows)) => {
            let partial = requested_entities(slots, domain, corpus).iter().any(|(col, want)| {
                let Some(ci) = header.iter().position(|h| h == col) else {
                    return false;
                };
                let got: HashSet<String> = rows.iter().map(|r| normalize(&r[ci].render())).collect();
                want.iter().filter(|w| got.contains(*w)).count() < want.len()
            });
            if partial {
                Verdict::EmptyOrPartial
            } else {
                Verdict::Success
            }
        }
    };
    SqlAttempt {
        sql: sql.to_string(),
        result,
        verdict,
    }
}

/// One label per non-scope slot value that occurs nowhere in the domain.
pub fn detect_condition_underspec(
    attempt: &SqlAttempt,
    slots: &SlotBinding,
    domain: DomainRef,
    corpus: &TableCorpus,
) -> Vec<ConditionLabel> {
    if attempt.verdict != Verdict::EmptyOrPartial {
        return Vec::new();
    }
    let (Ok(registry), Some(d)) = (corpus.slots(), domain.known()) else {
        return Vec::new();
    };
    let scope = corpus.required_scope_slots(d);
    slots
        .iter()
        .filter(|(t, v)| !scope.contains(t) && !v.trim().is_empty())
        .filter(|(t, v)| matches!(corpus.value_exists(d, t, v), Ok(false)))
        .filter_map(|(t, v)| ConditionLabel::new(v.as_str(), registry.label(t)).ok())
        .collect()
}

/// Where condition labels come from.
pub enum ConditionSource {
    /// `detect_condition_underspec`.
    Reference,
    /// Labels fixed in advance (oracle or noisy detectors).
    Given(Vec<ConditionLabel>),
}

pub struct SqlStage<'a> {
    pub generator: &'a dyn SqlGenerator,
    pub corpus: &'a TableCorpus,
    pub sim: &'a Simulator<'a>,
    /// Ask the simulator about raised labels.
    pub clarify: bool,
}

fn record_attempt(ds: &mut DialogueState, n: usize, a: &SqlAttempt) {
    let (kind, rows) = match a.result.rows() {
        Some((_, r)) => ("rows", r.len()),
        None => ("error", 0),
    };
    ds.record(Event::SqlAttempt {
        attempt: n,
        sql: a.sql.clone(),
        verdict: a.verdict.as_str().to_string(),
        result_kind: kind.to_string(),
        rows,
    });
}

impl SqlStage<'_> {
    /// Attempt, then on an empty or partial result: labels, one
    /// clarification per label, one regeneration.
    #[allow(clippy::too_many_arguments)]
    pub fn run(
        &self,
        ds: &mut DialogueState,
        inst: &QAInstance,
        intents: &[String],
        domain: DomainRef,
        slots: &SlotBinding,
        captions: &[String],
        source: ConditionSource,
    ) -> FinalOutcome {
        let sql = self.generator.generate(ds, intents, domain, slots, captions);
        let first = validate_attempt(&sql, domain, slots, self.corpus);
        record_attempt(ds, 1, &first);
        if first.verdict != Verdict::EmptyOrPartial {
            let final_result = first.result.clone();
            return FinalOutcome {
                final_sql: first.sql.clone(),
                attempts: vec![first],
                final_result,
                condition_labels_emitted: Vec::new(),
            };
        }
        let labels = match source {
            ConditionSource::Reference => detect_condition_underspec(&first, slots, domain, self.corpus),
            ConditionSource::Given(l) => l,
        };
        ds.record(Event::Detect {
            clause: Clause::Condition,
            intent: None,
            scope: Vec::new(),
            condition: labels.clone(),
        });
        let mut slots = slots.clone();
        let registry = self.corpus.slots().ok();
        for label in &labels {
            if !self.clarify {
                ds.record(Event::Suppressed {
                    clause: Clause::Condition,
                });
                continue;
            }
            ds.say(
                Speaker::System,
                clarification_question(&label.slot_type, &label.slot_content, None),
            );
            let req = ClarificationRequest::Condition(label.clone());
            let resp = self.sim.clarify(inst, &req);
            ds.say(Speaker::Clarification, resp.text());
            record_clarify(ds, &req, &resp);
            if let (Some(v), Some(key)) = (resp.keyword(), registry.and_then(|r| r.resolve(&label.slot_type))) {
                slots.insert(key.to_string(), v.to_string());
            }
        }
        ds.slots = slots.clone();
        let sql = self.generator.generate(ds, intents, domain, &slots, captions);
        let second = validate_attempt(&sql, domain, &slots, self.corpus);
        record_attempt(ds, 2, &second);
        let final_result = if second.verdict == Verdict::Success {
            second.result.clone()
        } else {
            QueryResult::empty()
        };
        FinalOutcome {
            final_sql: second.sql.clone(),
            attempts: vec![first, second],
            final_result,
            condition_labels_emitted: labels,
        }
    }
}
