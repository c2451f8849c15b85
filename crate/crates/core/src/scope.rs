//! Scope validation: missing-slot checks, caption search, Error/Unmatch
//! classification and the clarification round.

use indexmap::IndexMap;
use thiserror::Error;

use crate::bio::SlotBinding;
use crate::corpus::TableCorpus;
use crate::dialogue::{Clause, DialogueState, Event, Speaker};
use crate::instance::QAInstance;
use crate::labels::{ScopeErrorType, ScopeLabel};
use crate::llm::{prompts, strip_fence, ChatRequest, LlmBackend, Message, Stage};
use crate::registry::{DomainId, DomainRef, SlotRegistry};
use crate::simulator::{ClarificationRequest, ClarificationResponse, Simulator};
use crate::text::normalize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScopeError {
    #[error("Unknown domain")]
    UnknownDomain(String),
}

/// One ("", t, Missing) label per required slot absent from `slots`, in
/// the order of `required`.
pub fn check_missing(slots: &SlotBinding, required: &[String], registry: &SlotRegistry) -> Vec<ScopeLabel> {
    required
        .iter()
        .filter(|t| slots.get(t.as_str()).is_none_or(|v| v.trim().is_empty()))
        .map(|t| ScopeLabel::missing(registry.label(t)))
        .collect()
}

/// Number of `domain` captions containing each value as a substring.
/// Matching is case-folded and whitespace-normalized.
pub fn slot_search<S: AsRef<str>>(
    values: &[S],
    domain: &str,
    corpus: &TableCorpus,
) -> Result<IndexMap<String, usize>, ScopeError> {
    let d: DomainId = domain
        .parse()
        .map_err(|_| ScopeError::UnknownDomain(domain.to_string()))?;
    let captions: Vec<String> = corpus.list_captions(d).iter().map(|c| normalize(c)).collect();
    let mut out = IndexMap::new();
    for v in values {
        let needle = normalize(v.as_ref());
        let n = captions.iter().filter(|c| c.contains(&needle)).count();
        out.insert(v.as_ref().to_string(), n);
    }
    Ok(out)
}

/// Captions of `domain` containing every value.
pub fn joint_count<S: AsRef<str>>(values: &[S], domain: DomainId, corpus: &TableCorpus) -> usize {
    let needles: Vec<String> = values.iter().map(|v| normalize(v.as_ref())).collect();
    corpus
        .list_captions(domain)
        .iter()
        .map(|c| normalize(c))
        .filter(|c| needles.iter().all(|n| c.contains(n)))
        .count()
}

/// Index of the slot an invalid combination is blamed on: the value with
/// the fewest caption hits, ties broken by slot-type name.
pub fn unmatch_attribution(entries: &[(String, usize)]) -> Option<usize> {
    (0..entries.len()).min_by(|&a, &b| {
        entries[a]
            .1
            .cmp(&entries[b].1)
            .then_with(|| entries[a].0.cmp(&entries[b].0))
    })
}

/// Error and Unmatch labels for the scope slots in `slots`.
///
/// A value that appears in no caption and nowhere in the data is an Error.
/// When every value is individually valid but no caption holds them all,
/// one Unmatch label goes to the least frequent slot.
pub fn classify_slot_errors(
    slots: &SlotBinding,
    scope_slots: &[String],
    domain: DomainId,
    corpus: &TableCorpus,
) -> Vec<ScopeLabel> {
    let Ok(registry) = corpus.slots() else {
        return Vec::new();
    };
    let present: Vec<(&String, &String)> = scope_slots
        .iter()
        .filter_map(|t| slots.get(t).filter(|v| !v.trim().is_empty()).map(|v| (t, v)))
        .collect();
    if present.is_empty() {
        return Vec::new();
    }
    let values: Vec<&str> = present.iter().map(|(_, v)| v.as_str()).collect();
    let counts = slot_search(&values, domain.as_str(), corpus).expect("known domain");
    let mut labels = Vec::new();
    for (t, v) in &present {
        let hits = counts[v.as_str()];
        let exists = corpus.value_exists(domain, t, v).unwrap_or(false);
        if hits == 0 && !exists {
            labels.push(ScopeLabel::new(v.as_str(), registry.label(t), ScopeErrorType::Error).expect("nonempty value"));
        }
    }
    if !labels.is_empty() || present.len() < 2 {
        return labels;
    }
    if joint_count(&values, domain, corpus) == 0 {
        let entries: Vec<(String, usize)> = present
            .iter()
            .map(|(t, v)| (t.to_string(), counts[v.as_str()]))
            .collect();
        let i = unmatch_attribution(&entries).expect("nonempty");
        let (t, v) = present[i];
        labels.push(ScopeLabel::new(v.as_str(), registry.label(t), ScopeErrorType::Unmatch).expect("nonempty value"));
    }
    labels
}

/// System-side wording of a scope or condition question.
pub fn clarification_question(label_slot: &str, content: &str, kind: Option<ScopeErrorType>) -> String {
    match kind {
        Some(ScopeErrorType::Missing) => format!("Which {label_slot} do you mean?"),
        Some(ScopeErrorType::Error) => {
            format!("I could not find {content} as a {label_slot}. Which {label_slot} do you mean?")
        }
        Some(ScopeErrorType::Unmatch) => {
            format!("{content} does not fit the other details of your question. Which {label_slot} do you mean?")
        }
        None => format!("I found no {label_slot} called {content}. Which one do you mean?"),
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScopeVerdict {
    /// Every label raised, in the order raised.
    pub detected: Vec<ScopeLabel>,
    /// Labels still open after clarification.
    pub labels: Vec<ScopeLabel>,
    pub resolved_slots: SlotBinding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScopeOptions {
    /// Ask the simulator about raised labels.
    pub clarify: bool,
    /// Re-run the checks once after the answers are in.
    pub revalidate: bool,
}

impl Default for ScopeOptions {
    fn default() -> Self {
        Self {
            clarify: true,
            revalidate: true,
        }
    }
}

/// Reference detection: missing slots first, then Error/Unmatch on the
/// values present. Records the Unmatch attribution.
fn reference_labels(
    ds: &mut DialogueState,
    slots: &SlotBinding,
    required: &[String],
    domain: DomainId,
    corpus: &TableCorpus,
) -> Vec<ScopeLabel> {
    let Ok(registry) = corpus.slots() else {
        return Vec::new();
    };
    let mut labels = check_missing(slots, required, registry);
    if labels.is_empty() {
        labels = classify_slot_errors(slots, required, domain, corpus);
        if let Some(l) = labels.iter().find(|l| l.error_type == ScopeErrorType::Unmatch) {
            let values: Vec<(String, String)> = required
                .iter()
                .filter_map(|t| slots.get(t).map(|v| (t.clone(), v.clone())))
                .collect();
            let vs: Vec<&str> = values.iter().map(|(_, v)| v.as_str()).collect();
            let counts = slot_search(&vs, domain.as_str(), corpus).unwrap_or_default();
            ds.record(Event::Attribution {
                slot_type: l.slot_type.clone(),
                counts: values
                    .iter()
                    .map(|(t, v)| (t.clone(), counts.get(v).copied().unwrap_or(0)))
                    .collect(),
            });
        }
    }
    labels
}

/// Two-stage scope check with one clarification per raised label.
///
/// `predicted` overrides detection (oracle or model detectors); `None`
/// runs the reference checks, which also cover the values revealed for
/// missing slots.
#[allow(clippy::too_many_arguments)]
pub fn validate_scope(
    ds: &mut DialogueState,
    inst: &QAInstance,
    slots: &SlotBinding,
    domain: DomainRef,
    corpus: &TableCorpus,
    predicted: Option<Vec<ScopeLabel>>,
    sim: &Simulator,
    opts: ScopeOptions,
) -> ScopeVerdict {
    let Ok(registry) = corpus.slots() else {
        return ScopeVerdict {
            resolved_slots: slots.clone(),
            ..Default::default()
        };
    };
    let required = domain
        .known()
        .map(|d| corpus.required_scope_slots(d))
        .unwrap_or_default();
    let mut resolved = slots.clone();
    let mut detected = Vec::new();
    let mut open = Vec::new();
    let mut revealed_any = false;
    let reference = predicted.is_none();
    let mut queue = match (predicted, domain) {
        (Some(p), _) => p,
        (None, DomainRef::Known(d)) => reference_labels(ds, &resolved, &required, d, corpus),
        (None, DomainRef::Unknown) => Vec::new(),
    };
    let mut second_phase_done = !reference || domain.known().is_none();
    loop {
        for label in std::mem::take(&mut queue) {
            detected.push(label.clone());
            if !opts.clarify {
                ds.record(Event::Suppressed { clause: Clause::Scope });
                open.push(label);
                continue;
            }
            ds.say(
                Speaker::System,
                clarification_question(&label.slot_type, &label.slot_content, Some(label.error_type)),
            );
            let req = ClarificationRequest::Scope(label.clone());
            let resp = sim.clarify(inst, &req);
            ds.say(Speaker::Clarification, resp.text());
            record_clarify(ds, &req, &resp);
            match (resp.keyword(), registry.resolve(&label.slot_type)) {
                (Some(value), Some(key)) => {
                    resolved.insert(key.to_string(), value.to_string());
                    revealed_any = true;
                }
                _ => open.push(label),
            }
        }
        if second_phase_done {
            break;
        }
        // Values revealed for missing slots still need the Error/Unmatch
        // check, as do the ones given in the question.
        second_phase_done = true;
        if let (true, Some(d)) = (
            detected.iter().any(|l| l.error_type == ScopeErrorType::Missing) && open.is_empty(),
            domain.known(),
        ) {
            queue = classify_slot_errors(&resolved, &required, d, corpus);
        }
    }
    if let (true, Some(domain)) = (opts.revalidate && revealed_any, domain.known()) {
        let again = if check_missing(&resolved, &required, registry).is_empty() {
            classify_slot_errors(&resolved, &required, domain, corpus)
        } else {
            check_missing(&resolved, &required, registry)
        };
        for l in again {
            if !open.contains(&l) {
                open.push(l);
            }
        }
    }
    ds.record(Event::Scope {
        resolved: resolved.clone(),
        outstanding: open.clone(),
    });
    ScopeVerdict {
        detected,
        labels: open,
        resolved_slots: resolved,
    }
}

pub(crate) fn record_clarify(ds: &mut DialogueState, req: &ClarificationRequest, resp: &ClarificationResponse) {
    let (revealed, attempts, fell_back) = match resp {
        ClarificationResponse::Revealed {
            attempts, fell_back, ..
        } => (true, *attempts, *fell_back),
        ClarificationResponse::Refused => (false, 0, false),
    };
    ds.record(Event::Clarify {
        clause: req.clause(),
        request: serde_json::to_value(req).unwrap_or_default(),
        revealed,
        attempts,
        fell_back,
    });
}

/// Asks a chat model for scope labels; `None` when the reply is unusable.
pub fn llm_scope_labels(
    llm: &dyn LlmBackend,
    slots: &SlotBinding,
    domain: DomainId,
    corpus: &TableCorpus,
) -> Option<Vec<ScopeLabel>> {
    let registry = corpus.slots().ok()?;
    let required = corpus.required_scope_slots(domain);
    let system = prompts::fill(
        prompts::SCOPE,
        &[
            ("domain", domain.as_str()),
            ("captions", &corpus.list_captions(domain).join("\n")),
            ("slots", &serde_json::to_string(slots).ok()?),
            ("required", &required.join(", ")),
        ],
    );
    let req = ChatRequest::new(
        Stage::Slu,
        vec![
            Message::system(system),
            Message::user(serde_json::to_string(slots).ok()?),
        ],
    );
    let out = llm.complete(&req).ok()?;
    let labels: Vec<ScopeLabel> = serde_json::from_str(strip_fence(&out)).ok()?;
    Some(
        labels
            .into_iter()
            .filter(|l| registry.resolve(&l.slot_type).is_some())
            .collect(),
    )
}
