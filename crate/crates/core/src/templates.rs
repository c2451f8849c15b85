//! Seed templates: parsing, validation and instantiation into QA pairs.

use std::path::Path;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;
use thiserror::Error;

use crate::bio::{tags_from_spans, SlotBinding, SlotSpan};
use crate::corpus::{QueryResult, TableCorpus};
use crate::instance::{QAInstance, Split};
use crate::labels::Category;
use crate::registry::{DomainId, IntentRegistry, SlotRegistry, UNKNOWN_INTENT};

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Za-z][A-Za-z0-9_]*)\}").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnderspecClass {
    Select,
    From,
    Specified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedTemplate {
    pub id: String,
    /// Template group; also the sampling stratum.
    pub group: String,
    pub question_template: String,
    pub sql_template: String,
    /// Column role → canonical header text.
    pub select_clarification: IndexMap<String, String>,
    /// Caption pattern of the target table.
    pub from_clarification: String,
    pub intents: Vec<String>,
    pub domain: DomainId,
    pub underspec_class: UnderspecClass,
    pub required_slots: Vec<String>,
}

#[derive(Deserialize)]
struct RawTemplate {
    id: String,
    #[serde(default)]
    group: Option<String>,
    question_template: String,
    sql_template: String,
    #[serde(default)]
    select_clarification: IndexMap<String, String>,
    #[serde(default)]
    from_clarification: String,
    intents: Vec<String>,
    domain: DomainId,
    underspec_class: UnderspecClass,
    #[serde(default)]
    required_slots: Option<Vec<String>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template json: {0}")]
    Json(String),
    #[error("{id}: reading pack: {message}")]
    Io { id: String, message: String },
    #[error("{id}: SQL placeholder {{{slot}}} appears in neither the question nor the caption pattern")]
    DanglingPlaceholder { id: String, slot: String },
    #[error("{id}: select clarification {role:?} contains a placeholder")]
    PlaceholderInClarification { id: String, role: String },
    #[error("{id}: unbalanced brace in {field}")]
    MalformedPlaceholder { id: String, field: &'static str },
    #[error("{id}: SELECT-underspecified templates carry exactly the Unknown intent")]
    SelectIntent { id: String },
    #[error("{id}: SELECT-underspecified templates need a select clarification")]
    SelectWithoutClarification { id: String },
    #[error("{id}: only SELECT-underspecified templates may use the Unknown intent")]
    UnexpectedUnknown { id: String },
    #[error("{id}: caption pattern {pattern:?} must appear quoted in the SQL template")]
    CaptionNotInSql { id: String, pattern: String },
    #[error("{id}: declared required_slots {declared:?} differ from placeholders {found:?}")]
    RequiredSlots {
        id: String,
        declared: Vec<String>,
        found: Vec<String>,
    },
    #[error("{id}: no intents")]
    NoIntents { id: String },
    #[error("{id}: slot type {slot:?} is not registered for domain {domain}")]
    UnknownSlot { id: String, slot: String, domain: DomainId },
    #[error("{id}: intent {intent:?} is not registered for domain {domain}")]
    UnknownIntent {
        id: String,
        intent: String,
        domain: DomainId,
    },
    #[error("duplicate template id {0:?}")]
    DuplicateId(String),
}

/// Placeholder names in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for cap in PLACEHOLDER.captures_iter(text) {
        let name = cap[1].to_string();
        if !out.contains(&name) {
            out.push(name);
        }
    }
    out
}

fn balanced(text: &str) -> bool {
    let stripped = PLACEHOLDER.replace_all(text, "");
    !stripped.contains('{') && !stripped.contains('}')
}

impl SeedTemplate {
    fn from_raw(raw: RawTemplate) -> Result<Self, TemplateError> {
        let id = raw.id.clone();
        for (field, text) in [
            ("question_template", &raw.question_template),
            ("sql_template", &raw.sql_template),
            ("from_clarification", &raw.from_clarification),
        ] {
            if !balanced(text) {
                return Err(TemplateError::MalformedPlaceholder { id, field });
            }
        }
        for (role, header) in &raw.select_clarification {
            if header.contains('{') || header.contains('}') {
                return Err(TemplateError::PlaceholderInClarification { id, role: role.clone() });
            }
        }
        let in_question = placeholders(&raw.question_template);
        let in_caption = placeholders(&raw.from_clarification);
        let in_sql = placeholders(&raw.sql_template);
        for slot in &in_sql {
            if !in_question.contains(slot) && !in_caption.contains(slot) {
                return Err(TemplateError::DanglingPlaceholder { id, slot: slot.clone() });
            }
        }
        if raw.intents.is_empty() {
            return Err(TemplateError::NoIntents { id });
        }
        let unknown = raw.intents.iter().any(|i| i == UNKNOWN_INTENT);
        match raw.underspec_class {
            UnderspecClass::Select => {
                if raw.intents != [UNKNOWN_INTENT] {
                    return Err(TemplateError::SelectIntent { id });
                }
                if raw.select_clarification.is_empty() {
                    return Err(TemplateError::SelectWithoutClarification { id });
                }
            }
            _ if unknown => return Err(TemplateError::UnexpectedUnknown { id }),
            _ => {}
        }
        if !raw.from_clarification.is_empty() && !raw.sql_template.contains(&format!("\"{}\"", raw.from_clarification))
        {
            return Err(TemplateError::CaptionNotInSql {
                id,
                pattern: raw.from_clarification,
            });
        }
        let mut found = in_question;
        for s in in_caption.into_iter().chain(in_sql) {
            if !found.contains(&s) {
                found.push(s);
            }
        }
        if let Some(declared) = &raw.required_slots {
            let mut a = declared.clone();
            let mut b = found.clone();
            a.sort();
            b.sort();
            if a != b {
                return Err(TemplateError::RequiredSlots {
                    id,
                    declared: declared.clone(),
                    found,
                });
            }
        }
        Ok(SeedTemplate {
            group: raw.group.unwrap_or_else(|| raw.id.clone()),
            id: raw.id,
            question_template: raw.question_template,
            sql_template: raw.sql_template,
            select_clarification: raw.select_clarification,
            from_clarification: raw.from_clarification,
            intents: raw.intents,
            domain: raw.domain,
            underspec_class: raw.underspec_class,
            required_slots: match raw.required_slots {
                Some(d) => d,
                None => found,
            },
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("template serializes")
    }

    /// Slots of the caption pattern (the table scope).
    pub fn scope_slots(&self) -> Vec<String> {
        placeholders(&self.from_clarification)
    }

    /// Scope slots the question itself omits.
    pub fn omitted_scope_slots(&self) -> Vec<String> {
        let q = placeholders(&self.question_template);
        self.scope_slots().into_iter().filter(|s| !q.contains(s)).collect()
    }

    pub fn question_slots(&self) -> Vec<String> {
        placeholders(&self.question_template)
    }

    pub fn is_unknown_intent(&self) -> bool {
        self.intents == [UNKNOWN_INTENT]
    }

    fn check_registries(&self, slots: &SlotRegistry, intents: &IntentRegistry) -> Result<(), TemplateError> {
        for s in &self.required_slots {
            if slots.columns(s, self.domain).is_none() {
                return Err(TemplateError::UnknownSlot {
                    id: self.id.clone(),
                    slot: s.clone(),
                    domain: self.domain,
                });
            }
        }
        for i in &self.intents {
            if i != UNKNOWN_INTENT && intents.domain_of(i) != Some(self.domain) {
                return Err(TemplateError::UnknownIntent {
                    id: self.id.clone(),
                    intent: i.clone(),
                    domain: self.domain,
                });
            }
        }
        Ok(())
    }
}

/// Parses one template document.
pub fn parse_template(raw: &str) -> Result<SeedTemplate, TemplateError> {
    let raw: RawTemplate = serde_json::from_str(raw).map_err(|e| TemplateError::Json(e.to_string()))?;
    SeedTemplate::from_raw(raw)
}

/// An ordered, validated template pack.
#[derive(Debug, Clone)]
pub struct TemplatePack {
    templates: Vec<SeedTemplate>,
}

impl TemplatePack {
    pub fn parse(text: &str, slots: &SlotRegistry, intents: &IntentRegistry) -> Result<Self, TemplateError> {
        let raws: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| TemplateError::Json(e.to_string()))?;
        let mut templates: Vec<SeedTemplate> = Vec::with_capacity(raws.len());
        for raw in raws {
            let raw: RawTemplate = serde_json::from_value(raw).map_err(|e| TemplateError::Json(e.to_string()))?;
            let t = SeedTemplate::from_raw(raw)?;
            t.check_registries(slots, intents)?;
            if templates.iter().any(|o| o.id == t.id) {
                return Err(TemplateError::DuplicateId(t.id));
            }
            templates.push(t);
        }
        Ok(Self { templates })
    }

    pub fn load(path: &Path, slots: &SlotRegistry, intents: &IntentRegistry) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io {
            id: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text, slots, intents)
    }

    pub fn templates(&self) -> &[SeedTemplate] {
        &self.templates
    }

    pub fn get(&self, id: &str) -> Option<&SeedTemplate> {
        self.templates.iter().find(|t| t.id == id)
    }

    /// The fully specified template of a group.
    pub fn base_of(&self, group: &str) -> Option<&SeedTemplate> {
        self.templates
            .iter()
            .find(|t| t.group == group && t.underspec_class == UnderspecClass::Specified)
    }

    /// The specified template whose intent set equals `intents`.
    pub fn by_intents(&self, intents: &[String]) -> Option<&SeedTemplate> {
        let mut want: Vec<&String> = intents.iter().collect();
        want.sort();
        self.templates.iter().find(|t| {
            let mut have: Vec<&String> = t.intents.iter().collect();
            have.sort();
            t.underspec_class == UnderspecClass::Specified && have == want
        })
    }

    /// Every canonical header of every select clarification.
    pub fn all_headers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.templates {
            for h in t.select_clarification.values() {
                if !out.contains(h) {
                    out.push(h.clone());
                }
            }
        }
        out
    }

    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.templates {
            if !out.contains(&t.group) {
                out.push(t.group.clone());
            }
        }
        out
    }
}

/// Replaces placeholders, returning the text and the byte span of each
/// substituted value.
pub fn substitute(template: &str, binding: &SlotBinding) -> Result<(String, Vec<SlotSpan>), String> {
    substitute_with(template, binding, |v| v.to_string())
}

fn substitute_with(
    template: &str,
    binding: &SlotBinding,
    escape: impl Fn(&str) -> String,
) -> Result<(String, Vec<SlotSpan>), String> {
    let mut out = String::with_capacity(template.len() + 32);
    let mut spans = Vec::new();
    let mut last = 0;
    for cap in PLACEHOLDER.captures_iter(template) {
        let m = cap.get(0).unwrap();
        out.push_str(&template[last..m.start()]);
        let slot = &cap[1];
        let value = binding.get(slot).ok_or_else(|| slot.to_string())?;
        let start = out.len();
        out.push_str(&escape(value));
        spans.push(SlotSpan {
            slot: slot.to_string(),
            start,
            end: out.len(),
        });
        last = m.end();
    }
    out.push_str(&template[last..]);
    Ok((out, spans))
}

/// SQL instantiation; values are quoted as SQL string content.
pub fn substitute_sql(template: &str, binding: &SlotBinding) -> Result<String, String> {
    substitute_with(template, binding, |v| v.replace('\'', "''")).map(|(s, _)| s)
}

#[derive(Debug, Error, PartialEq)]
pub enum InstantiateError {
    #[error("{template}: binding lacks slot {slot}")]
    Unbound { template: String, slot: String },
    #[error("{template}: caption {caption:?} is not in the corpus")]
    CaptionAbsent { template: String, caption: String },
    #[error("{template}: gold SQL failed: {message}")]
    ExecFailed { template: String, message: String },
    #[error("{template}: gold SQL returned no rows")]
    EmptyResult { template: String },
    #[error("{template}: {message}")]
    Tagging { template: String, message: String },
}

/// Fills a template with a binding and executes the gold SQL.
///
/// Rejects the pair when the target table is absent or the gold query
/// fails or comes back empty.
pub fn instantiate(t: &SeedTemplate, b: &SlotBinding, corpus: &TableCorpus) -> Result<QAInstance, InstantiateError> {
    let unbound = |slot: String| InstantiateError::Unbound {
        template: t.id.clone(),
        slot,
    };
    let (question, spans) = substitute(&t.question_template, b).map_err(unbound)?;
    let gold_sql = substitute_sql(&t.sql_template, b).map_err(unbound)?;
    let (caption, _) = substitute(&t.from_clarification, b).map_err(unbound)?;
    if corpus.schema(&caption).is_none() {
        return Err(InstantiateError::CaptionAbsent {
            template: t.id.clone(),
            caption,
        });
    }
    let gold_answer = corpus.execute_in(t.domain, &gold_sql);
    match &gold_answer {
        QueryResult::Error { message } => {
            return Err(InstantiateError::ExecFailed {
                template: t.id.clone(),
                message: message.clone(),
            })
        }
        QueryResult::Rows { rows, .. } if rows.is_empty() => {
            return Err(InstantiateError::EmptyResult { template: t.id.clone() })
        }
        _ => {}
    }
    let bio = tags_from_spans(&question, &spans).map_err(|e| InstantiateError::Tagging {
        template: t.id.clone(),
        message: e.to_string(),
    })?;
    let intent_underspec = t.is_unknown_intent();
    Ok(QAInstance {
        id: String::new(),
        template_id: t.id.clone(),
        question,
        gold_sql,
        gold_answer,
        domain: t.domain,
        intents: t.intents.clone(),
        bio,
        intent_underspec,
        scope_labels: Vec::new(),
        condition_labels: Vec::new(),
        select_clarification: IndexMap::new(),
        from_clarification: IndexMap::new(),
        where_clarification: IndexMap::new(),
        gold_captions: vec![caption],
        split: Split::Train,
        strata_key: t.group.clone(),
        category: Category::classify(intent_underspec, false, false),
    })
}
