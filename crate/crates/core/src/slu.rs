//! Intent detection and slot filling.

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bio::{derive_bio_tags, tags_from_spans, BioTagSequence, SlotBinding, SlotSpan};
use crate::corpus::TableCorpus;
use crate::dialogue::{DialogueState, Event, Speaker};
use crate::instance::QAInstance;
use crate::llm::{prompts, strip_fence, ChatRequest, LlmBackend, Message, Stage};
use crate::registry::{DomainId, DomainRef, IntentRegistry, SlotRegistry, UNKNOWN_INTENT};
use crate::simulator::{ClarificationRequest, ClarificationResponse, Simulator};
use crate::templates::{TemplatePack, UnderspecClass};

pub const INTENT_FOLLOW_UP: &str = "Your input is unclear. Please clarify your request.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SluResult {
    pub intents: Vec<String>,
    pub bio: BioTagSequence,
    pub slots: SlotBinding,
}

impl SluResult {
    pub fn unknown(text: &str) -> Self {
        Self {
            intents: vec![UNKNOWN_INTENT.to_string()],
            bio: BioTagSequence::all_outside(text),
            slots: SlotBinding::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum SluError {
    #[error("empty input")]
    Empty,
    #[error("backend: {0}")]
    Backend(String),
}

pub trait SluBackend: Send + Sync {
    fn predict(&self, ctx: &str) -> Result<SluResult, SluError>;
}

/// Runs the backend; any failure degrades to an Unknown result with no
/// slots.
pub fn predict(backend: &dyn SluBackend, ctx: &str) -> SluResult {
    backend.predict(ctx).unwrap_or_else(|_| SluResult::unknown(ctx))
}

pub fn detect_intent_underspec(r: &SluResult) -> bool {
    r.intents.len() == 1 && r.intents[0] == UNKNOWN_INTENT
}

/// Domain of the first intent; intents pointing elsewhere are returned as
/// conflicts.
pub fn map_domain(intents: &[String], registry: &IntentRegistry) -> (DomainRef, Vec<String>) {
    let mut chosen: Option<DomainId> = None;
    let mut conflicts = Vec::new();
    for i in intents {
        let Some(d) = registry.domain_of(i) else { continue };
        match chosen {
            None => chosen = Some(d),
            Some(c) if c != d => conflicts.push(i.clone()),
            _ => {}
        }
    }
    (chosen.map(DomainRef::Known).unwrap_or(DomainRef::Unknown), conflicts)
}

struct Pattern {
    full: Regex,
    prefix: Regex,
    slots: Vec<String>,
    static_len: usize,
    intents: Vec<String>,
}

/// Lexicon backend compiled from a template pack and the corpus values.
pub struct ReferenceSlu {
    patterns: Vec<Pattern>,
    /// Canonical header → intents of the fully specified template of the
    /// same group, longest header first.
    headers: Vec<(String, Vec<String>)>,
    /// (value, slot type), longest value first.
    gazetteer: Vec<(String, String)>,
}

impl ReferenceSlu {
    pub fn new(pack: &TemplatePack, corpus: &TableCorpus) -> Self {
        let placeholder = Regex::new(r"\{([A-Za-z][A-Za-z0-9_]*)\}").unwrap();
        let mut patterns = Vec::new();
        for t in pack.templates() {
            let mut body = String::new();
            let mut slots = Vec::new();
            let mut static_len = 0;
            let mut last = 0;
            for cap in placeholder.captures_iter(&t.question_template) {
                let m = cap.get(0).unwrap();
                let lit = &t.question_template[last..m.start()];
                static_len += lit.len();
                body.push_str(&regex::escape(lit));
                body.push_str("([^?]+?)");
                slots.push(cap[1].to_string());
                last = m.end();
            }
            let tail = &t.question_template[last..];
            static_len += tail.len();
            body.push_str(&regex::escape(tail));
            patterns.push(Pattern {
                full: Regex::new(&format!("^{body}$")).unwrap(),
                prefix: Regex::new(&format!("^{body}")).unwrap(),
                slots,
                static_len,
                intents: t.intents.clone(),
            });
        }
        let mut headers: Vec<(String, Vec<String>)> = Vec::new();
        for t in pack
            .templates()
            .iter()
            .filter(|t| t.underspec_class == UnderspecClass::Select)
        {
            if let Some(base) = pack.base_of(&t.group) {
                for h in t.select_clarification.values() {
                    headers.push((h.to_lowercase(), base.intents.clone()));
                }
            }
        }
        headers.sort_by_key(|x| std::cmp::Reverse(x.0.len()));
        let mut gazetteer: Vec<(String, String)> = Vec::new();
        if let Ok(registry) = corpus.slots() {
            for slot in registry.types() {
                for d in DomainId::ALL {
                    for v in corpus.slot_values(d, slot) {
                        let entry = (v, slot.to_string());
                        if !gazetteer.contains(&entry) {
                            gazetteer.push(entry);
                        }
                    }
                }
            }
        }
        gazetteer.sort_by_key(|x| std::cmp::Reverse(x.0.len()));
        Self {
            patterns,
            headers,
            gazetteer,
        }
    }

    fn header_intents(&self, ctx: &str) -> Option<Vec<String>> {
        let lower = ctx.to_lowercase();
        self.headers
            .iter()
            .find(|(h, _)| lower.contains(h.as_str()))
            .map(|(_, i)| i.clone())
    }

    /// Template match: full matches beat prefix matches, then the most
    /// static text wins, then pack order.
    fn match_template(&self, ctx: &str) -> Option<(&Pattern, Vec<SlotSpan>)> {
        for anchored_end in [true, false] {
            let mut best: Option<(&Pattern, regex::Captures)> = None;
            for p in &self.patterns {
                let re = if anchored_end { &p.full } else { &p.prefix };
                if let Some(c) = re.captures(ctx) {
                    if best.as_ref().is_none_or(|(b, _)| p.static_len > b.static_len) {
                        best = Some((p, c));
                    }
                }
            }
            if let Some((p, c)) = best {
                let mut spans = Vec::new();
                for (i, slot) in p.slots.iter().enumerate() {
                    let m = c.get(i + 1).unwrap();
                    if spans.iter().any(|s: &SlotSpan| s.slot == *slot) {
                        continue;
                    }
                    // Trim whitespace the lazy group may have picked up.
                    let raw = m.as_str();
                    let start = m.start() + (raw.len() - raw.trim_start().len());
                    let end = m.end() - (raw.len() - raw.trim_end().len());
                    if start < end {
                        spans.push(SlotSpan {
                            slot: slot.clone(),
                            start,
                            end,
                        });
                    }
                }
                return Some((p, spans));
            }
        }
        None
    }

    /// Longest value first, then earliest offset, no overlaps, one value
    /// per slot type.
    fn gazetteer_spans(&self, ctx: &str) -> Vec<SlotSpan> {
        let mut taken: Vec<(usize, usize)> = Vec::new();
        let mut spans: Vec<SlotSpan> = Vec::new();
        for (value, slot) in &self.gazetteer {
            if spans.iter().any(|s| s.slot == *slot) {
                continue;
            }
            for (start, _) in ctx.match_indices(value.as_str()) {
                let end = start + value.len();
                let boundary_ok = ctx[..start].chars().last().is_none_or(|c| !c.is_alphanumeric())
                    && ctx[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
                let free = taken.iter().all(|&(a, b)| end <= a || start >= b);
                if boundary_ok && free {
                    taken.push((start, end));
                    spans.push(SlotSpan {
                        slot: slot.clone(),
                        start,
                        end,
                    });
                    break;
                }
            }
        }
        spans.sort_by_key(|s| s.start);
        spans
    }
}

fn result_from_spans(ctx: &str, intents: Vec<String>, spans: &[SlotSpan]) -> SluResult {
    let bio = tags_from_spans(ctx, spans).unwrap_or_else(|_| BioTagSequence::all_outside(ctx));
    let slots = bio.decode(ctx).unwrap_or_default();
    SluResult { intents, bio, slots }
}

impl SluBackend for ReferenceSlu {
    fn predict(&self, ctx: &str) -> Result<SluResult, SluError> {
        let ctx_trim = ctx.trim();
        if ctx_trim.is_empty() {
            return Err(SluError::Empty);
        }
        if let Some((p, spans)) = self.match_template(ctx) {
            let mut intents = p.intents.clone();
            if intents == [UNKNOWN_INTENT] {
                if let Some(found) = self.header_intents(ctx) {
                    intents = found;
                }
            }
            return Ok(result_from_spans(ctx, intents, &spans));
        }
        let spans = self.gazetteer_spans(ctx);
        let intents = self
            .header_intents(ctx)
            .unwrap_or_else(|| vec![UNKNOWN_INTENT.to_string()]);
        Ok(result_from_spans(ctx, intents, &spans))
    }
}

/// Backend that asks a chat model for JSON intents and slots.
pub struct LlmSlu<'a> {
    pub llm: &'a dyn LlmBackend,
    pub intents: &'a IntentRegistry,
    pub slots: &'a SlotRegistry,
}

#[derive(Deserialize)]
struct LlmSluOutput {
    #[serde(default)]
    intents: Vec<String>,
    #[serde(default)]
    slots: IndexMap<String, String>,
}

impl SluBackend for LlmSlu<'_> {
    fn predict(&self, ctx: &str) -> Result<SluResult, SluError> {
        if ctx.trim().is_empty() {
            return Err(SluError::Empty);
        }
        let intents: Vec<&str> = self.intents.intents().map(|(i, _)| i).collect();
        let slot_types: Vec<&str> = self.slots.types().collect();
        let system = prompts::fill(
            prompts::SLU,
            &[("intents", &intents.join(", ")), ("slots", &slot_types.join(", "))],
        );
        let req = ChatRequest::new(Stage::Slu, vec![Message::system(system), Message::user(ctx)]);
        let out = self.llm.complete(&req).map_err(|e| SluError::Backend(e.to_string()))?;
        let parsed: LlmSluOutput =
            serde_json::from_str(strip_fence(&out)).map_err(|e| SluError::Backend(e.to_string()))?;
        let mut found = parsed
            .intents
            .into_iter()
            .filter(|i| i == UNKNOWN_INTENT || self.intents.contains(i))
            .collect::<Vec<_>>();
        if found.is_empty() {
            found.push(UNKNOWN_INTENT.to_string());
        }
        // Keep only slots that can be located in the text.
        let mut binding = SlotBinding::new();
        for (k, v) in parsed.slots {
            if let Some(key) = self.slots.resolve(&k) {
                if !v.trim().is_empty() && ctx.contains(v.trim()) {
                    binding.insert(key.to_string(), v.trim().to_string());
                }
            }
        }
        let bio = derive_bio_tags(ctx, &binding).map_err(|e| SluError::Backend(e.to_string()))?;
        let slots = bio.decode(ctx).unwrap_or_default();
        Ok(SluResult {
            intents: found,
            bio,
            slots,
        })
    }
}

/// One clarification round for an unclear intent: ask the follow-up,
/// take the simulator's reply, and re-run the backend on the question
/// joined with the reply. A refusal keeps `current`.
pub fn clarify_intent(
    ds: &mut DialogueState,
    inst: &QAInstance,
    current: SluResult,
    backend: &dyn SluBackend,
    sim: &Simulator,
) -> (SluResult, ClarificationResponse) {
    ds.say(Speaker::System, INTENT_FOLLOW_UP);
    let req = ClarificationRequest::Intent(true);
    let resp = sim.clarify(inst, &req);
    ds.say(Speaker::Clarification, resp.text());
    crate::scope::record_clarify(ds, &req, &resp);
    if matches!(resp, ClarificationResponse::Refused) {
        return (current, resp);
    }
    let joined = format!("{} {}", ds.question(), resp.text());
    let mut next = predict(backend, &joined);
    // Slot values stay anchored to the original question.
    next.bio = current.bio;
    next.slots = current.slots;
    ds.record(Event::Slu {
        phase: "clarified".into(),
        intents: next.intents.clone(),
        slots: next.slots.clone(),
    });
    (next, resp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intent_underspec_is_exactly_unknown() {
        let mk = |i: &[&str]| SluResult {
            intents: i.iter().map(|s| s.to_string()).collect(),
            bio: BioTagSequence::all_outside("x"),
            slots: SlotBinding::new(),
        };
        assert!(detect_intent_underspec(&mk(&["Unknown"])));
        assert!(!detect_intent_underspec(&mk(&["price_query"])));
        assert!(!detect_intent_underspec(&mk(&["price_query", "volume_ranking"])));
    }

    #[test]
    fn domain_mapping() {
        let mut m = IndexMap::new();
        m.insert("premium_query".to_string(), DomainId::LandAuction);
        m.insert("risk_query".to_string(), DomainId::Finance);
        let reg = IntentRegistry::new(m);
        assert_eq!(
            map_domain(&["premium_query".into()], &reg).0,
            DomainRef::Known(DomainId::LandAuction)
        );
        assert_eq!(map_domain(&["Unknown".into()], &reg).0, DomainRef::Unknown);
        let (d, conflicts) = map_domain(&["risk_query".into(), "premium_query".into()], &reg);
        assert_eq!(d, DomainRef::Known(DomainId::Finance));
        assert_eq!(conflicts, vec!["premium_query"]);
    }
}
